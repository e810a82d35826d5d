#include "tmmoe/feature_window.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "tmmoe/named_tensors.hpp"

namespace tmmoe {

std::string_view intention_name(Intention label) {
  switch (label) {
    case Intention::kLaneKeep: return "LK";
    case Intention::kLeft: return "LCL";
    case Intention::kRight: return "LCR";
  }
  return "?";
}

Intention intention_from_index(std::size_t index) {
  if (index > 2) throw std::invalid_argument("intention index " + std::to_string(index));
  return static_cast<Intention>(index);
}

namespace feature {

const std::array<std::string, kCount>& names() {
  static const std::array<std::string, kCount> table = [] {
    std::array<std::string, kCount> n;
    n[kLongitudinal] = "x_rel";
    n[kLateral] = "y_lane";
    n[kSpeedX] = "vx";
    n[kSpeedY] = "vy";
    n[kAccelX] = "ax";
    const char* slots[kNeighbourSlots] = {"front",      "rear",      "left_front",
                                          "left_rear",  "right_front", "right_rear"};
    const char* fields[kNeighbourWidth] = {"present", "dx", "dy", "dv"};
    for (std::size_t s = 0; s < kNeighbourSlots; ++s)
      for (std::size_t f = 0; f < kNeighbourWidth; ++f)
        n[kNeighbourBase + s * kNeighbourWidth + f] = std::string(slots[s]) + "_" + fields[f];
    n[kCoupling] = "coupling_degree";
    n[kConflictBase + 0] = "conflict_front";
    n[kConflictBase + 1] = "conflict_rear";
    n[kConflictBase + 2] = "conflict_side_front";
    n[kConflictBase + 3] = "conflict_side_rear";
    return n;
  }();
  return table;
}

std::vector<std::size_t> group_columns(std::string_view group) {
  if (group == "coupling_degree") return {kCoupling};
  if (group == "conflict_indicator") {
    std::vector<std::size_t> cols(kConflictCount);
    for (std::size_t i = 0; i < kConflictCount; ++i) cols[i] = kConflictBase + i;
    return cols;
  }
  throw std::invalid_argument("unknown feature group '" + std::string(group) +
                              "' (expected coupling_degree or conflict_indicator)");
}

}  // namespace feature

std::array<std::size_t, 3> WindowSet::label_counts() const {
  std::array<std::size_t, 3> counts{};
  for (const auto& w : windows) ++counts[static_cast<std::size_t>(w.label)];
  return counts;
}

void WindowSet::validate() const {
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const std::string where = "window " + std::to_string(i);
    if (w.inputs.shape() != Shape{steps, features}) {
      throw std::invalid_argument(where + ": inputs shape " + shape_str(w.inputs.shape()));
    }
    if (w.longitudinal.shape() != Shape{horizon} || w.lateral.shape() != Shape{horizon}) {
      throw std::invalid_argument(where + ": target shape mismatch");
    }
    const int label = static_cast<int>(w.label);
    if (label < 0 || label > 2) throw std::invalid_argument(where + ": bad label");
    if (!w.inputs.all_finite() || !w.longitudinal.all_finite() || !w.lateral.all_finite()) {
      throw std::invalid_argument(where + ": non-finite values");
    }
  }
}

WindowSet WindowSet::subset(std::span<const std::size_t> indices) const {
  WindowSet out{steps, features, horizon, sample_rate_hz, {}};
  out.windows.reserve(indices.size());
  for (std::size_t i : indices) out.windows.push_back(windows.at(i));
  return out;
}

std::uint64_t WindowSet::config_hash() const {
  std::ostringstream os;
  os << "layout=tmmoe-features-1;steps=" << steps << ";features=" << features
     << ";horizon=" << horizon << ";rate=" << sample_rate_hz;
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

void zero_features(WindowSet& set, std::span<const std::size_t> columns) {
  for (auto& w : set.windows) {
    for (std::size_t t = 0; t < set.steps; ++t)
      for (std::size_t c : columns) w.inputs[t * set.features + c] = 0.0;
  }
}

Batch make_batch(const WindowSet& set, std::span<const std::size_t> indices) {
  const std::size_t b = indices.size(), T = set.steps, F = set.features, P = set.horizon;
  Batch batch;
  batch.inputs = Tensor(Shape{T, b, F});
  batch.onehot = Tensor(Shape{b, 3});
  batch.longitudinal = Tensor(Shape{b, P});
  batch.lateral = Tensor(Shape{b, P});
  batch.labels.reserve(b);
  for (std::size_t j = 0; j < b; ++j) {
    const FeatureWindow& w = set.windows.at(indices[j]);
    for (std::size_t t = 0; t < T; ++t) {
      std::copy_n(w.inputs.raw() + t * F, F, batch.inputs.raw() + (t * b + j) * F);
    }
    batch.onehot[j * 3 + static_cast<std::size_t>(w.label)] = 1.0;
    std::copy_n(w.longitudinal.raw(), P, batch.longitudinal.raw() + j * P);
    std::copy_n(w.lateral.raw(), P, batch.lateral.raw() + j * P);
    batch.labels.push_back(w.label);
  }
  return batch;
}

void save_windows(const std::filesystem::path& path, const WindowSet& set) {
  set.validate();
  const std::size_t n = set.size(), T = set.steps, F = set.features, P = set.horizon;
  NamedTensors c;
  c.set("meta", Tensor(Shape{4}, {static_cast<double>(T), static_cast<double>(F),
                                  static_cast<double>(P), set.sample_rate_hz}));
  Tensor inputs(Shape{n, T, F}), labels(Shape{n}), lon(Shape{n, P}), lat(Shape{n, P});
  Tensor last(Shape{n, 2}), prov(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = set.windows[i];
    std::copy_n(w.inputs.raw(), T * F, inputs.raw() + i * T * F);
    labels[i] = static_cast<double>(w.label);
    std::copy_n(w.longitudinal.raw(), P, lon.raw() + i * P);
    std::copy_n(w.lateral.raw(), P, lat.raw() + i * P);
    last[2 * i] = w.last_x;
    last[2 * i + 1] = w.last_y;
    prov[2 * i] = static_cast<double>(w.vehicle_id);
    prov[2 * i + 1] = static_cast<double>(w.end_frame);
  }
  c.set("inputs", std::move(inputs));
  c.set("labels", std::move(labels));
  c.set("longitudinal", std::move(lon));
  c.set("lateral", std::move(lat));
  c.set("last_position", std::move(last));
  c.set("provenance", std::move(prov));
  save_tensors(path, c);
}

WindowSet load_windows(const std::filesystem::path& path) {
  const NamedTensors c = load_tensors(path);
  for (const char* key : {"meta", "inputs", "labels", "longitudinal", "lateral", "last_position",
                          "provenance"}) {
    if (!c.contains(key)) throw FormatError(path.string() + ": archive lacks '" + key + "'");
  }
  const Tensor& meta = c.get("meta");
  if (meta.size() != 4) throw FormatError(path.string() + ": bad meta record");
  WindowSet set;
  set.steps = static_cast<std::size_t>(meta[0]);
  set.features = static_cast<std::size_t>(meta[1]);
  set.horizon = static_cast<std::size_t>(meta[2]);
  set.sample_rate_hz = meta[3];
  const std::size_t T = set.steps, F = set.features, P = set.horizon;
  const Tensor& inputs = c.get("inputs");
  const std::size_t n = inputs.rank() == 3 ? inputs.dim(0) : 0;
  if (inputs.shape() != Shape{n, T, F} || c.get("labels").shape() != Shape{n} ||
      c.get("longitudinal").shape() != Shape{n, P} || c.get("lateral").shape() != Shape{n, P}) {
    throw FormatError(path.string() + ": archive tensors disagree with meta");
  }
  set.windows.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& w = set.windows[i];
    w.inputs = Tensor(Shape{T, F}, std::vector<double>(inputs.raw() + i * T * F,
                                                       inputs.raw() + (i + 1) * T * F));
    const double label = c.get("labels")[i];
    if (label != 0.0 && label != 1.0 && label != 2.0) throw FormatError("bad label in archive");
    w.label = static_cast<Intention>(static_cast<int>(label));
    const Tensor& lon = c.get("longitudinal");
    const Tensor& lat = c.get("lateral");
    w.longitudinal = Tensor(Shape{P}, std::vector<double>(lon.raw() + i * P, lon.raw() + (i + 1) * P));
    w.lateral = Tensor(Shape{P}, std::vector<double>(lat.raw() + i * P, lat.raw() + (i + 1) * P));
    w.last_x = c.get("last_position")[2 * i];
    w.last_y = c.get("last_position")[2 * i + 1];
    w.vehicle_id = static_cast<std::int64_t>(c.get("provenance")[2 * i]);
    w.end_frame = static_cast<std::int64_t>(c.get("provenance")[2 * i + 1]);
  }
  set.validate();
  return set;
}

}  // namespace tmmoe
