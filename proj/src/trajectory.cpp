#include "tmmoe/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

namespace tmmoe {
namespace {

constexpr double kFeet = 0.3048;
constexpr double kMph = 0.44704;
constexpr std::size_t kMaxMessages = 10;

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string strip(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& s) {
  const std::string t = strip(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct Columns {
  std::size_t frame, id, cx, cy, lane, speed;
  std::array<std::size_t, 8> box;
  std::optional<std::size_t> heading;
  double length_scale, speed_scale;
};

Columns resolve(const std::vector<std::string>& header) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[strip(header[i])] = i;
  auto find = [&](std::initializer_list<const char*> names) -> std::optional<std::size_t> {
    for (const char* n : names)
      if (auto it = index.find(n); it != index.end()) return it->second;
    return std::nullopt;
  };
  auto need = [&](std::initializer_list<const char*> names) {
    if (auto i = find(names)) return *i;
    throw DataError(std::string("missing required column ") + *names.begin());
  };
  const bool feet = index.contains("carCenterXft");
  const std::string unit = feet ? "ft" : "m";
  Columns c{};
  c.frame = need({"frameNum", "frame"});
  c.id = need({"carId"});
  c.cx = need({feet ? "carCenterXft" : "carCenterXm"});
  c.cy = need({feet ? "carCenterYft" : "carCenterYm"});
  for (int v = 0; v < 4; ++v) {
    const std::string base = "boundingBox" + std::to_string(v + 1);
    const std::string xs = base + "X" + unit, ys = base + "Y" + unit;
    c.box[2 * v] = need({xs.c_str()});
    c.box[2 * v + 1] = need({ys.c_str()});
  }
  c.lane = need({"laneId"});
  c.speed = need({feet ? "speed" : "speedMps"});
  c.heading = find({"course", "heading"});
  c.length_scale = feet ? kFeet : 1.0;
  c.speed_scale = feet ? kMph : 1.0;
  return c;
}

Point transform(double x, double y, bool reverse) {
  return reverse ? Point{-x, -y} : Point{x, y};
}

}  // namespace

std::array<Point, 4> order_box(std::array<Point, 4> box) {
  std::stable_sort(box.begin(), box.end(), [](const Point& a, const Point& b) { return a.x > b.x; });
  return box;
}

std::vector<Track> group_tracks(std::vector<TrajectoryRecord> records) {
  std::map<std::int64_t, Track> by_id;
  for (auto& r : records) {
    Track& t = by_id[r.vehicle_id];
    t.vehicle_id = r.vehicle_id;
    t.records.push_back(std::move(r));
  }
  std::vector<Track> tracks;
  tracks.reserve(by_id.size());
  for (auto& [id, t] : by_id) {
    std::stable_sort(t.records.begin(), t.records.end(),
                     [](const auto& a, const auto& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < t.records.size(); ++i) {
      if (t.records[i].frame == t.records[i - 1].frame) {
        throw DataError("vehicle " + std::to_string(id) + " has two rows for frame " +
                        std::to_string(t.records[i].frame));
      }
    }
    tracks.push_back(std::move(t));
  }
  return tracks;
}

std::vector<TrajectoryRecord> read_trajectory_csv(std::istream& in, const CsvOptions& options,
                                                  CsvReport& report) {
  report = {};
  std::string line;
  if (!std::getline(in, line) || strip(line).empty()) throw DataError("empty CSV");
  const auto header = split(line, ',');
  const Columns c = resolve(header);
  std::vector<TrajectoryRecord> records;
  std::size_t lineno = 1;
  auto malformed = [&](const std::string& why) {
    ++report.malformed;
    if (report.messages.size() < kMaxMessages) {
      report.messages.push_back("line " + std::to_string(lineno) + ": " + why);
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (strip(line).empty()) continue;
    ++report.rows;
    const auto fields = split(line, ',');
    if (fields.size() < header.size()) {
      malformed("expected " + std::to_string(header.size()) + " fields, got " +
                std::to_string(fields.size()));
      continue;
    }
    auto num = [&](std::size_t i) { return parse_number(fields[i]); };
    const auto frame = num(c.frame), id = num(c.id), cx = num(c.cx), cy = num(c.cy),
               lane = num(c.lane), speed = num(c.speed);
    std::array<std::optional<double>, 8> box;
    bool ok = frame && id && cx && cy && lane && speed;
    for (std::size_t i = 0; i < 8; ++i) {
      box[i] = num(c.box[i]);
      ok = ok && box[i];
    }
    if (!ok) {
      malformed("non-numeric or missing value");
      continue;
    }
    TrajectoryRecord r;
    r.frame = static_cast<std::int64_t>(*frame);
    r.vehicle_id = static_cast<std::int64_t>(*id);
    const double s = c.length_scale;
    r.center = transform(*cx * s, *cy * s, options.reverse);
    for (std::size_t v = 0; v < 4; ++v) {
      r.box[v] = transform(*box[2 * v] * s, *box[2 * v + 1] * s, options.reverse);
    }
    r.box = order_box(r.box);
    r.lane_id = static_cast<int>(*lane);
    r.speed = *speed * c.speed_scale;
    if (c.heading) r.heading_deg = num(*c.heading).value_or(0.0);
    records.push_back(r);
  }
  if (report.rows == 0) throw DataError("CSV has a header but no rows");
  const double fraction = static_cast<double>(report.malformed) / static_cast<double>(report.rows);
  if (fraction > options.max_malformed_fraction) {
    throw DataError(std::to_string(report.malformed) + " of " + std::to_string(report.rows) +
                    " rows are malformed");
  }
  return records;
}

std::vector<TrajectoryRecord> read_trajectory_csv(const std::filesystem::path& path,
                                                  const CsvOptions& options, CsvReport& report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_trajectory_csv(in, options, report);
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRecord>& records) {
  out << "frame,carId,carCenterXm,carCenterYm";
  for (int v = 1; v <= 4; ++v) out << ",boundingBox" << v << "Xm,boundingBox" << v << "Ym";
  out << ",laneId,speedMps,course\n";
  out << std::setprecision(10);
  for (const auto& r : records) {
    out << r.frame << ',' << r.vehicle_id << ',' << r.center.x << ',' << r.center.y;
    for (const auto& p : r.box) out << ',' << p.x << ',' << p.y;
    out << ',' << r.lane_id << ',' << r.speed << ',' << r.heading_deg << '\n';
  }
}

std::vector<std::vector<Point>> read_lane_markings(std::istream& in, bool reverse) {
  std::vector<std::vector<Point>> markings;
  std::vector<Point> current;
  std::string line;
  std::size_t lineno = 0;
  auto flush = [&] {
    if (!current.empty()) markings.push_back(std::move(current));
    current.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = strip(line.substr(0, line.find('#')));
    if (body.empty()) {
      if (line.find('#') == std::string::npos) flush();
      continue;
    }
    std::istringstream ss(body);
    double x = 0.0, y = 0.0;
    std::string extra;
    if (!(ss >> x >> y) || (ss >> extra) || !std::isfinite(x) || !std::isfinite(y)) {
      throw DataError("lane file line " + std::to_string(lineno) + ": expected 'x y'");
    }
    current.push_back(transform(x, y, reverse));
  }
  flush();
  if (markings.empty()) throw DataError("lane file has no markings");
  return markings;
}

std::vector<std::vector<Point>> read_lane_markings(const std::filesystem::path& path,
                                                   bool reverse) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_lane_markings(in, reverse);
}

void write_lane_markings(std::ostream& out, const std::vector<std::vector<Point>>& markings) {
  out << std::setprecision(10);
  for (std::size_t m = 0; m < markings.size(); ++m) {
    if (m) out << '\n';
    for (const auto& p : markings[m]) out << p.x << ' ' << p.y << '\n';
  }
}

}  // namespace tmmoe
