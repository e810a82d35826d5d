#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace tmmoe {

/// Raised for unusable input data (empty or mostly malformed files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Road frame: x along the direction of travel, y to the right of it, metres.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// One vehicle in one 30 Hz frame. Box vertices 0 and 1 are the front
/// corners, 2 and 3 the rear corners (ordered by the adapter).
struct TrajectoryRecord {
  std::int64_t frame = 0;
  std::int64_t vehicle_id = 0;
  Point center;
  std::array<Point, 4> box;
  int lane_id = 0;
  double speed = 0.0;        // m/s
  double heading_deg = 0.0;  // as recorded, informational
};

struct Track {
  std::int64_t vehicle_id = 0;
  std::vector<TrajectoryRecord> records;  // strictly increasing frames
};

/// Groups records by vehicle (ascending id) and sorts each by frame.
/// Throws DataError on a repeated (vehicle, frame) pair.
std::vector<Track> group_tracks(std::vector<TrajectoryRecord> records);

/// Reorders a box so the two corners furthest along +x come first.
std::array<Point, 4> order_box(std::array<Point, 4> box);

struct CsvOptions {
  /// Rotates coordinates by 180 degrees, for traffic moving toward -x.
  bool reverse = false;
  double max_malformed_fraction = 0.1;
};

struct CsvReport {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::vector<std::string> messages;  // first few problems, for the user
};

/// CitySim-style table, one row per (frame, vehicle). Header names:
///   frame:    frameNum | frame
///   vehicle:  carId
///   centre:   carCenterXft, carCenterYft    (feet)   | carCenterXm, carCenterYm
///   box:      boundingBox{1..4}X/Yft        (feet)   | boundingBox{1..4}X/Ym
///   lane:     laneId
///   speed:    speed (mph, with feet columns)         | speedMps
///   heading:  course | heading (optional, degrees)
/// Units are converted to metres and m/s. Malformed rows are counted and
/// skipped; more than max_malformed_fraction of them, or no valid rows,
/// throws DataError.
std::vector<TrajectoryRecord> read_trajectory_csv(std::istream& in, const CsvOptions& options,
                                                  CsvReport& report);
std::vector<TrajectoryRecord> read_trajectory_csv(const std::filesystem::path& path,
                                                  const CsvOptions& options, CsvReport& report);

/// Metric CSV with the header accepted by read_trajectory_csv.
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRecord>& records);

/// Lane markings: one marking per block of "x y" lines (metres), blocks
/// separated by blank lines, '#' starts a comment.
std::vector<std::vector<Point>> read_lane_markings(std::istream& in, bool reverse = false);
std::vector<std::vector<Point>> read_lane_markings(const std::filesystem::path& path,
                                                   bool reverse = false);
void write_lane_markings(std::ostream& out, const std::vector<std::vector<Point>>& markings);

}  // namespace tmmoe
