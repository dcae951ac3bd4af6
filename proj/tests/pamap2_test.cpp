#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "alc/pamap2.hpp"

namespace pm = alc::pamap2;
using pm::IntensityLevel;

namespace {

// Builds a 54-token line; column i holds the value chosen by `value(i)`.
template <typename F>
std::string make_line(F value, std::size_t columns = 54) {
  std::string s;
  for (std::size_t i = 0; i < columns; ++i) {
    if (i) s += ' ';
    s += value(i);
  }
  return s;
}

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  auto p = std::filesystem::temp_directory_path() / ("alc_pamap2_" + name);
  std::ofstream(p) << contents;
  return p;
}

TEST(ParseLine, ZeroedLine) {
  const auto line = make_line([](std::size_t i) -> std::string {
    if (i == 0) return "8.38";
    if (i == 1) return "1";
    return "0.0";
  });
  const auto r = pm::parse_line(line);
  EXPECT_DOUBLE_EQ(r.timestamp, 8.38);
  EXPECT_EQ(r.activity_id, 1);
  ASSERT_TRUE(r.heart_rate.has_value());
  for (const auto& imu : r.imu) {
    for (double v : imu.accel) EXPECT_EQ(v, 0.0);
    for (double v : imu.gyro) EXPECT_EQ(v, 0.0);
  }
}

TEST(ParseLine, ColumnIndexOracle) {
  // Every column holds its own index, so each retained field names its source column.
  const auto line = make_line([](std::size_t i) { return i == 1 ? std::string("4") : std::to_string(i); });
  const auto r = pm::parse_line(line);
  EXPECT_EQ(*r.heart_rate, 2.0);
  const std::size_t first_imu[3] = {3, 20, 37};
  for (std::size_t site = 0; site < 3; ++site) {
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_EQ(r.imu[site].accel[a], static_cast<double>(first_imu[site] + 1 + a));  // +-16g triplet
      EXPECT_EQ(r.imu[site].gyro[a], static_cast<double>(first_imu[site] + 7 + a));
    }
  }
}

TEST(ParseLine, NaNHeartRateIsMissing) {
  const auto line = make_line([](std::size_t i) -> std::string {
    if (i == 1) return "2";
    if (i == 2) return "NaN";
    return "1.5";
  });
  const auto r = pm::parse_line(line);
  EXPECT_FALSE(r.heart_rate.has_value());
}

TEST(ParseLine, NaNImuValueIsMarkedMissing) {
  const auto line = make_line([](std::size_t i) -> std::string {
    if (i == 1) return "2";
    if (i == 4) return "NaN";
    return "1";
  });
  EXPECT_TRUE(pm::is_missing(pm::parse_line(line).imu[0].accel[0]));
}

TEST(ParseLine, WrongColumnCount) {
  EXPECT_THROW(pm::parse_line(make_line([](std::size_t) { return std::string("1"); }, 53)), alc::ColumnCountError);
  EXPECT_THROW(pm::parse_line(make_line([](std::size_t) { return std::string("1"); }, 55)), alc::ColumnCountError);
}

TEST(ParseLine, BadNumber) {
  const auto line = make_line([](std::size_t i) { return i == 10 ? std::string("1.2.3") : std::string("1"); });
  EXPECT_THROW(pm::parse_line(line), alc::NumberFormatError);
}

TEST(ParseLine, UnknownActivityCode) {
  const auto line = make_line([](std::size_t i) { return i == 1 ? std::string("8") : std::string("1"); });
  EXPECT_THROW(pm::parse_line(line), alc::DomainError);
}

TEST(ParseLine, RenderRoundTripOnRetainedFields) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-50, 50);
  for (int trial = 0; trial < 100; ++trial) {
    pm::SampleRecord r;
    r.timestamp = std::fabs(d(rng));
    r.activity_id = pm::kActivityCodes[rng() % pm::kActivityCodes.size()];
    if (rng() % 2) r.heart_rate = 100 + d(rng);
    for (auto& imu : r.imu) {
      for (auto& v : imu.accel) v = rng() % 10 == 0 ? pm::kMissing : d(rng);
      for (auto& v : imu.gyro) v = rng() % 10 == 0 ? pm::kMissing : d(rng);
    }
    const auto back = pm::parse_line(pm::render_line(r));
    EXPECT_EQ(back.timestamp, r.timestamp);
    EXPECT_EQ(back.activity_id, r.activity_id);
    EXPECT_EQ(back.heart_rate, r.heart_rate);
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t a = 0; a < 3; ++a) {
        const double x = r.imu[s].accel[a], y = back.imu[s].accel[a];
        EXPECT_TRUE((std::isnan(x) && std::isnan(y)) || x == y);
        const double g = r.imu[s].gyro[a], h = back.imu[s].gyro[a];
        EXPECT_TRUE((std::isnan(g) && std::isnan(h)) || g == h);
      }
  }
}

TEST(LoadSubject, EmptyFile) {
  EXPECT_TRUE(pm::load_subject(temp_file("empty.dat", ""), 101).records.empty());
}

TEST(LoadSubject, ThreeLinesInOrder) {
  std::string contents;
  for (int i = 0; i < 3; ++i) {
    contents += make_line([i](std::size_t c) -> std::string {
      if (c == 0) return std::to_string(i) + ".01";
      if (c == 1) return "4";
      return "0.5";
    });
    contents += "\n";
  }
  const auto rec = pm::load_subject(temp_file("three.dat", contents), 102);
  ASSERT_EQ(rec.records.size(), 3u);
  EXPECT_EQ(rec.subject_id, 102);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(rec.records[i].timestamp, i + 0.01);
}

TEST(LoadSubject, MalformedLineNamesLineNumber) {
  const auto good = make_line([](std::size_t c) { return c == 1 ? std::string("1") : std::string("0"); });
  const auto path = temp_file("bad.dat", good + "\n1 2 3\n" + good + "\n");
  try {
    pm::load_subject(path, 1);
    FAIL() << "expected LineError";
  } catch (const alc::LineError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadSubject, MissingFile) {
  EXPECT_THROW(pm::load_subject("/nonexistent/subject.dat", 1), alc::IoError);
}

TEST(MetToLevel, Boundaries) {
  EXPECT_EQ(pm::met_to_level(3.0), IntensityLevel::Low);
  EXPECT_EQ(pm::met_to_level(3.0000001), IntensityLevel::Medium);
  EXPECT_EQ(pm::met_to_level(6.0), IntensityLevel::Medium);
  EXPECT_EQ(pm::met_to_level(7.5), IntensityLevel::High);
  EXPECT_THROW(pm::met_to_level(0.0), alc::DomainError);
  EXPECT_THROW(pm::met_to_level(-1.0), alc::DomainError);
}

TEST(MetToLevel, MonotoneAndTotal) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(1e-6, 15.0);
  for (int i = 0; i < 1000; ++i) {
    double a = d(rng), b = d(rng);
    if (a > b) std::swap(a, b);
    EXPECT_LE(pm::met_to_level(a), pm::met_to_level(b));
  }
}

TEST(MetTable, ShippedTableClassAssignments) {
  const auto table = pm::load_met_table(std::string(ALC_DATA_DIR) + "/met_table.tsv");
  // every PAMAP2 activity except the transient code is covered
  for (int id : pm::kActivityCodes) EXPECT_EQ(table.contains(id), id != 0) << id;
  const std::pair<int, IntensityLevel> pinned[] = {
      {1, IntensityLevel::Low},      {2, IntensityLevel::Low},     {9, IntensityLevel::Low},
      {4, IntensityLevel::Medium},   {6, IntensityLevel::Medium},  {16, IntensityLevel::Medium},
      {17, IntensityLevel::Medium},  {18, IntensityLevel::Medium}, {19, IntensityLevel::Medium},
      {5, IntensityLevel::High},     {24, IntensityLevel::High},   {20, IntensityLevel::High},
  };
  for (const auto& [id, level] : pinned) EXPECT_EQ(pm::activity_to_level(id, table), level) << id;
}

TEST(MetTable, UnknownActivity) {
  pm::MetTable t;
  t.add(1, 1.0, "lying");
  EXPECT_THROW(pm::activity_to_level(5, t), alc::UnknownActivityError);
}

TEST(MetTable, RejectsTransientAndNonPositive) {
  std::stringstream zero("0\t1.0\tother\n");
  EXPECT_THROW(pm::parse_met_table(zero), alc::LineError);
  std::stringstream neg("# c\n3\t-2\tstanding\n");
  EXPECT_THROW(pm::parse_met_table(neg), alc::LineError);
  pm::MetTable t;
  EXPECT_THROW(t.add(0, 1.0), alc::DomainError);
}

TEST(MetTable, ParsesCommentsAndNames) {
  std::stringstream in("# header\n\n1\t1.0\tlying\n5\t9.8\trunning\n");
  const auto t = pm::parse_met_table(in);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.at(5).name, "running");
}

}  // namespace
