#pragma once

// PAMAP2 subject files and MET-based intensity labels.
//
// A subject file has one sample per line, 54 space-separated columns:
//   0 timestamp (s), 1 activity id, 2 heart rate (bpm),
//   3..19 wrist IMU, 20..36 chest IMU, 37..53 ankle IMU.
// Each 17-column IMU block is: temperature, accel +-16g (3), accel +-6g (3),
// gyro (3), magnetometer (3), orientation (4). Only the +-16g accelerometer
// and the gyroscope are kept. `NaN` marks a missing value.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "alc/errors.hpp"

namespace alc::pamap2 {

inline constexpr std::size_t kColumnCount = 54;
inline constexpr std::size_t kImuColumns = 17;
inline constexpr std::size_t kFirstImuColumn = 3;
inline constexpr std::size_t kAccel16Offset = 1;
inline constexpr std::size_t kGyroOffset = 7;
inline constexpr double kSampleRateHz = 100.0;

/// Missing IMU components are stored as quiet NaN.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

struct ImuBlock {
  std::array<double, 3> accel{};  // m/s^2, +-16g sensor
  std::array<double, 3> gyro{};   // rad/s
};

enum class ImuSite : std::uint8_t { Wrist = 0, Chest = 1, Ankle = 2 };

struct SampleRecord {
  double timestamp = 0.0;
  int activity_id = 0;  // 0 = transient
  std::optional<double> heart_rate;
  std::array<ImuBlock, 3> imu{};  // indexed by ImuSite

  const ImuBlock& at(ImuSite site) const { return imu[static_cast<std::size_t>(site)]; }
  ImuBlock& at(ImuSite site) { return imu[static_cast<std::size_t>(site)]; }
};

inline constexpr std::array<int, 19> kActivityCodes = {0,  1,  2,  3,  4,  5,  6,  7,  9, 10,
                                                       11, 12, 13, 16, 17, 18, 19, 20, 24};

inline bool is_known_activity(int id) {
  return std::find(kActivityCodes.begin(), kActivityCodes.end(), id) != kActivityCodes.end();
}

enum class IntensityLevel : std::uint8_t { Low = 0, Medium = 1, High = 2 };
inline constexpr std::size_t kLevelCount = 3;

inline const char* to_string(IntensityLevel level) {
  switch (level) {
    case IntensityLevel::Low: return "low";
    case IntensityLevel::Medium: return "medium";
    case IntensityLevel::High: return "high";
  }
  return "?";
}

/// Low for met <= 3, Medium for 3 < met <= 6, High above 6.
inline IntensityLevel met_to_level(double met) {
  if (!(met > 0.0) || !std::isfinite(met)) throw DomainError("MET value must be positive and finite");
  if (met <= 3.0) return IntensityLevel::Low;
  if (met <= 6.0) return IntensityLevel::Medium;
  return IntensityLevel::High;
}

struct MetEntry {
  double met = 0.0;
  std::string name;
};

/// Activity id -> MET value. Never contains the transient id 0.
class MetTable {
 public:
  void add(int activity_id, double met, std::string name = {}) {
    if (activity_id == 0) throw DomainError("MET table may not contain the transient activity 0");
    if (!(met > 0.0) || !std::isfinite(met)) {
      throw DomainError("MET value for activity " + std::to_string(activity_id) + " must be positive");
    }
    if (!entries_.emplace(activity_id, MetEntry{met, std::move(name)}).second) {
      throw DomainError("duplicate MET entry for activity " + std::to_string(activity_id));
    }
  }

  bool contains(int activity_id) const { return entries_.count(activity_id) != 0; }
  const MetEntry& at(int activity_id) const {
    auto it = entries_.find(activity_id);
    if (it == entries_.end()) throw UnknownActivityError("activity " + std::to_string(activity_id) + " not in MET table");
    return it->second;
  }
  const std::map<int, MetEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<int, MetEntry> entries_;
};

inline IntensityLevel activity_to_level(int activity_id, const MetTable& table) {
  return met_to_level(table.at(activity_id).met);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline bool is_nan_token(std::string_view tok) {
  return tok.size() == 3 && (tok[0] | 0x20) == 'n' && (tok[1] | 0x20) == 'a' && (tok[2] | 0x20) == 'n';
}

/// Parses a decimal number; returns NaN for the missing-value token.
inline double parse_number(std::string_view tok) {
  if (is_nan_token(tok)) return kMissing;
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw NumberFormatError("not a number: '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace detail

inline SampleRecord parse_line(std::string_view line) {
  const auto tokens = detail::split_ws(line);
  if (tokens.size() != kColumnCount) {
    throw ColumnCountError("expected " + std::to_string(kColumnCount) + " columns, got " +
                           std::to_string(tokens.size()));
  }
  std::array<double, kColumnCount> v{};
  for (std::size_t i = 0; i < kColumnCount; ++i) v[i] = detail::parse_number(tokens[i]);

  SampleRecord rec;
  if (is_missing(v[0]) || v[0] < 0.0) throw DomainError("timestamp must be finite and non-negative");
  rec.timestamp = v[0];
  if (is_missing(v[1]) || v[1] != std::floor(v[1])) throw NumberFormatError("activity id must be an integer");
  rec.activity_id = static_cast<int>(v[1]);
  if (!is_known_activity(rec.activity_id)) {
    throw DomainError("unknown PAMAP2 activity code " + std::to_string(rec.activity_id));
  }
  if (!is_missing(v[2])) rec.heart_rate = v[2];
  for (std::size_t site = 0; site < 3; ++site) {
    const std::size_t base = kFirstImuColumn + site * kImuColumns;
    for (std::size_t a = 0; a < 3; ++a) {
      rec.imu[site].accel[a] = v[base + kAccel16Offset + a];
      rec.imu[site].gyro[a] = v[base + kGyroOffset + a];
    }
  }
  return rec;
}

/// Inverse of parse_line on the retained columns; discarded columns are `NaN`.
inline std::string render_line(const SampleRecord& rec) {
  std::array<double, kColumnCount> v;
  v.fill(kMissing);
  v[0] = rec.timestamp;
  v[1] = rec.activity_id;
  v[2] = rec.heart_rate.value_or(kMissing);
  for (std::size_t site = 0; site < 3; ++site) {
    const std::size_t base = kFirstImuColumn + site * kImuColumns;
    for (std::size_t a = 0; a < 3; ++a) {
      v[base + kAccel16Offset + a] = rec.imu[site].accel[a];
      v[base + kGyroOffset + a] = rec.imu[site].gyro[a];
    }
  }
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < kColumnCount; ++i) {
    if (i) out.push_back(' ');
    if (is_missing(v[i])) {
      out += "NaN";
    } else {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v[i]);
      out.append(buf, ptr);
    }
  }
  return out;
}

struct SubjectRecording {
  std::uint16_t subject_id = 0;
  std::vector<SampleRecord> records;
};

/// Reads every line of a subject file in order. Blank lines are skipped;
/// a malformed line aborts with a LineError naming it.
inline SubjectRecording load_subject(const std::filesystem::path& path, std::uint16_t subject_id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  SubjectRecording out{subject_id, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.records.push_back(parse_line(line));
    } catch (const Error& e) {
      throw LineError(lineno, path.string() + ": " + e.what());
    }
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  return out;
}

/// Parses `activity_id<TAB>met<TAB>name` rows; `#` starts a comment line.
inline MetTable parse_met_table(std::istream& in, const std::string& origin = "<met table>") {
  MetTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() < 2) throw LineError(lineno, origin + ": expected activity_id<TAB>met<TAB>name");
    try {
      const double id = detail::parse_number(fields[0]);
      const double met = detail::parse_number(fields[1]);
      if (std::isnan(id) || id != std::floor(id)) throw NumberFormatError("activity id must be an integer");
      table.add(static_cast<int>(id), met, fields.size() > 2 ? fields[2] : std::string{});
    } catch (const Error& e) {
      throw LineError(lineno, origin + ": " + e.what());
    }
  }
  return table;
}

inline MetTable load_met_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_met_table(in, path.string());
}

}  // namespace alc::pamap2
