#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "tmmoe/tensor.hpp"

namespace tmmoe {

/// Name-ordered collection of tensors (model parameters, buffers, archives).
///
/// Iteration order is lexicographic by name, which fixes the serialized
/// order and the order gradients are visited in.
class NamedTensors {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  void set(const std::string& name, Tensor value) { items_.insert_or_assign(name, std::move(value)); }
  bool contains(std::string_view name) const { return items_.find(name) != items_.end(); }

  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  /// Total number of scalar entries across all tensors.
  std::size_t element_count() const;

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  bool operator==(const NamedTensors& other) const = default;

 private:
  Map items_;
};

/// Error reading or writing a tensor container.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Container layout (all integers little-endian):
//   "TMMOE1"
//   repeated until EOF:
//     u32 name length, name bytes, u32 rank, u64 dims[rank],
//     f64 data[product(dims)]
void write_tensors(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

}  // namespace tmmoe
