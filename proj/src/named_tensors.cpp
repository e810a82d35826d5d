#include "tmmoe/named_tensors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace tmmoe {
namespace {

constexpr std::string_view kMagic = "TMMOE1";

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("truncated tensor container");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{bytes[i]} << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

const Tensor& NamedTensors::get(std::string_view name) const {
  auto it = items_.find(name);
  if (it == items_.end()) throw std::out_of_range("no tensor named '" + std::string(name) + "'");
  return it->second;
}

Tensor& NamedTensors::get(std::string_view name) {
  auto it = items_.find(name);
  if (it == items_.end()) throw std::out_of_range("no tensor named '" + std::string(name) + "'");
  return it->second;
}

std::size_t NamedTensors::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void write_tensors(std::ostream& out, const NamedTensors& tensors) {
  out.write(kMagic.data(), kMagic.size());
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<double>(out, v);
  }
  if (!out) throw FormatError("failed writing tensor container");
}

NamedTensors read_tensors(std::istream& in) {
  std::array<char, kMagic.size()> magic{};
  in.read(magic.data(), magic.size());
  if (!in || std::string_view(magic.data(), magic.size()) != kMagic) {
    throw FormatError("missing TMMOE1 header");
  }
  NamedTensors out;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = get_le<std::uint32_t>(in);
    if (name_len > (1u << 16)) throw FormatError("implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError("truncated tensor name");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw FormatError("implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in);
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 34)) throw FormatError("implausible size for '" + name + "'");
    std::vector<double> data(n);
    for (auto& v : data) v = get_le<double>(in);
    if (out.contains(name)) throw FormatError("duplicate tensor '" + name + "'");
    out.set(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensors(in);
}

}  // namespace tmmoe
