#pragma once

// Channel selection, gap repair, windowing, normalization and splits.
//
// Canonical channel order (18 channels) is wrist, chest, ankle; within each
// site accelerometer before gyroscope; x, y, z within each sensor.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alc/errors.hpp"
#include "alc/pamap2.hpp"

namespace alc::prep {

using pamap2::IntensityLevel;

inline constexpr std::size_t kAllChannels = 18;

enum class SensorConfig : std::uint8_t { WO, W6, WC, WA, W18 };
inline constexpr std::array<SensorConfig, 5> kAllConfigs = {SensorConfig::WO, SensorConfig::W6, SensorConfig::WC,
                                                            SensorConfig::WA, SensorConfig::W18};

inline const char* to_string(SensorConfig c) {
  switch (c) {
    case SensorConfig::WO: return "WO";
    case SensorConfig::W6: return "W6";
    case SensorConfig::WC: return "WC";
    case SensorConfig::WA: return "WA";
    case SensorConfig::W18: return "W18";
  }
  return "?";
}

inline SensorConfig parse_config(std::string_view s) {
  for (SensorConfig c : kAllConfigs) {
    if (s == to_string(c)) return c;
  }
  throw ParamError("unknown sensor configuration '" + std::string(s) + "'");
}

/// Indices into the canonical 18-channel layout.
inline std::vector<std::size_t> channel_indices(SensorConfig c) {
  auto range = [](std::size_t from, std::size_t to) {
    std::vector<std::size_t> v(to - from);
    std::iota(v.begin(), v.end(), from);
    return v;
  };
  switch (c) {
    case SensorConfig::WO: return range(0, 3);
    case SensorConfig::W6: return range(0, 6);
    case SensorConfig::WC: return range(0, 12);
    case SensorConfig::WA: {
      auto v = range(0, 6);
      for (std::size_t i = 12; i < 18; ++i) v.push_back(i);
      return v;
    }
    case SensorConfig::W18: return range(0, 18);
  }
  return {};
}

inline std::size_t channel_count(SensorConfig c) { return channel_indices(c).size(); }

/// All 18 canonical channels of a record; missing values stay NaN.
inline std::array<double, kAllChannels> all_channels(const pamap2::SampleRecord& rec) {
  std::array<double, kAllChannels> out{};
  for (std::size_t site = 0; site < 3; ++site) {
    for (std::size_t a = 0; a < 3; ++a) {
      out[site * 6 + a] = rec.imu[site].accel[a];
      out[site * 6 + 3 + a] = rec.imu[site].gyro[a];
    }
  }
  return out;
}

inline std::vector<double> select_channels(const pamap2::SampleRecord& rec, SensorConfig c) {
  const auto all = all_channels(rec);
  std::vector<double> out;
  for (std::size_t i : channel_indices(c)) out.push_back(all[i]);
  return out;
}

struct RepairResult {
  std::vector<double> values;
  std::vector<bool> masked;  // true where a value is still missing
};

/// Linearly interpolates interior gaps (NaN runs) of at most `max_gap`
/// samples. Longer gaps and gaps touching either end stay masked (NaN).
inline RepairResult repair_missing(std::span<const double> series, std::size_t max_gap = 10) {
  RepairResult out{std::vector<double>(series.begin(), series.end()), std::vector<bool>(series.size(), false)};
  const std::size_t n = series.size();
  std::size_t i = 0;
  while (i < n) {
    if (!std::isnan(series[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && std::isnan(series[j])) ++j;
    const std::size_t gap = j - i;
    const bool interior = i > 0 && j < n;
    if (interior && gap <= max_gap) {
      const double a = series[i - 1], b = series[j];
      const double span = static_cast<double>(gap + 1);
      for (std::size_t k = i; k < j; ++k) out.values[k] = a + (b - a) * static_cast<double>(k - i + 1) / span;
    } else {
      for (std::size_t k = i; k < j; ++k) out.masked[k] = true;
    }
    i = j;
  }
  return out;
}

/// Channel-major sample stream for one recording segment. NaN = masked.
struct LabeledStream {
  std::size_t channels = 0;
  std::vector<std::vector<double>> data;  // [channel][sample]
  std::vector<int> activity;              // per sample
  std::uint16_t subject = 0;

  std::size_t length() const { return activity.size(); }
};

struct WindowExample {
  std::vector<float> data;  // channels x window_length, row-major
  IntensityLevel label = IntensityLevel::Low;
  std::uint16_t subject = 0;
};

struct Dataset {
  std::size_t channels = 0;
  std::size_t window_length = 0;
  std::vector<WindowExample> examples;

  std::size_t size() const { return examples.size(); }
  std::vector<std::uint16_t> subjects() const {
    std::vector<std::uint16_t> s;
    for (const auto& e : examples) s.push_back(e.subject);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  }
  std::array<std::size_t, 3> class_counts() const {
    std::array<std::size_t, 3> c{};
    for (const auto& e : examples) ++c[static_cast<std::size_t>(e.label)];
    return c;
  }
};

/// Splits a recording into streams of contiguous labeled samples; transient
/// rows (activity 0) are dropped and break the stream. Each channel is then
/// gap-repaired independently.
inline std::vector<LabeledStream> streams_from_records(const pamap2::SubjectRecording& rec,
                                                       std::size_t max_gap = 10) {
  std::vector<LabeledStream> out;
  LabeledStream cur;
  auto flush = [&] {
    if (cur.length() > 0) {
      for (auto& ch : cur.data) ch = repair_missing(ch, max_gap).values;
      out.push_back(std::move(cur));
    }
    cur = LabeledStream{};
  };
  for (const auto& r : rec.records) {
    if (r.activity_id == 0) {
      flush();
      continue;
    }
    if (cur.length() == 0) {
      cur.channels = kAllChannels;
      cur.data.assign(kAllChannels, {});
      cur.subject = rec.subject_id;
    }
    const auto ch = all_channels(r);
    for (std::size_t c = 0; c < kAllChannels; ++c) cur.data[c].push_back(ch[c]);
    cur.activity.push_back(r.activity_id);
  }
  flush();
  return out;
}

/// Number of windows a single-activity segment of `length` samples yields.
inline std::size_t window_count(std::size_t length, std::size_t window_length, std::size_t stride) {
  if (length < window_length) return 0;
  return (length - window_length) / stride + 1;
}

/// Slides windows over each single-activity run of the stream. Windows with a
/// masked sample are dropped.
inline std::vector<WindowExample> make_windows(const LabeledStream& stream, const pamap2::MetTable& table,
                                               std::size_t window_length, std::size_t stride) {
  if (window_length == 0 || stride == 0) throw ParamError("window length and stride must be positive");
  if (stream.data.size() != stream.channels) throw ParamError("stream channel count mismatch");
  std::vector<WindowExample> out;
  const std::size_t n = stream.length();
  std::size_t seg = 0;
  while (seg < n) {
    std::size_t end = seg;
    while (end < n && stream.activity[end] == stream.activity[seg]) ++end;
    const IntensityLevel level = pamap2::activity_to_level(stream.activity[seg], table);
    const std::size_t count = window_count(end - seg, window_length, stride);
    for (std::size_t w = 0; w < count; ++w) {
      const std::size_t start = seg + w * stride;
      WindowExample ex;
      ex.label = level;
      ex.subject = stream.subject;
      ex.data.resize(stream.channels * window_length);
      bool clean = true;
      for (std::size_t c = 0; c < stream.channels && clean; ++c) {
        for (std::size_t t = 0; t < window_length; ++t) {
          const double v = stream.data[c][start + t];
          if (std::isnan(v)) {
            clean = false;
            break;
          }
          ex.data[c * window_length + t] = static_cast<float>(v);
        }
      }
      if (clean) out.push_back(std::move(ex));
    }
    seg = end;
  }
  return out;
}

/// Keeps only the channels of `config`. Accepts either the full 18-channel
/// layout or data that already has exactly the configuration's channels.
inline Dataset select_config(const Dataset& ds, SensorConfig config) {
  const auto idx = channel_indices(config);
  if (ds.channels == idx.size()) return ds;
  if (ds.channels != kAllChannels) {
    throw ParamError(std::string("configuration ") + to_string(config) + " needs " + std::to_string(idx.size()) +
                     " or 18 channels, dataset has " + std::to_string(ds.channels));
  }
  Dataset out{idx.size(), ds.window_length, {}};
  out.examples.reserve(ds.size());
  for (const auto& e : ds.examples) {
    WindowExample s{{}, e.label, e.subject};
    s.data.reserve(idx.size() * ds.window_length);
    for (std::size_t c : idx) {
      auto row = e.data.begin() + static_cast<long>(c * ds.window_length);
      s.data.insert(s.data.end(), row, row + static_cast<long>(ds.window_length));
    }
    out.examples.push_back(std::move(s));
  }
  return out;
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline constexpr double kMinStd = 1e-12;

/// Per-channel population mean and std over the selected examples.
inline ChannelStats fit_normalizer(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw EmptySetError("cannot fit normalizer on an empty set");
  const std::size_t C = ds.channels, L = ds.window_length;
  ChannelStats st{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(indices.size() * L);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i : indices) {
      const float* row = ds.examples[i].data.data() + c * L;
      for (std::size_t t = 0; t < L; ++t) s += row[t];
    }
    const double m = s / count;
    double v = 0.0;
    for (std::size_t i : indices) {
      const float* row = ds.examples[i].data.data() + c * L;
      for (std::size_t t = 0; t < L; ++t) v += (row[t] - m) * (row[t] - m);
    }
    const double sd = std::sqrt(v / count);
    st.mean[c] = m;
    st.stddev[c] = sd > kMinStd ? sd : 1.0;
  }
  return st;
}

inline ChannelStats fit_normalizer(const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return fit_normalizer(ds, all);
}

/// z-scores every example in place.
inline void apply_normalizer(const ChannelStats& st, Dataset& ds) {
  if (st.mean.size() != ds.channels) throw ParamError("normalizer channel count does not match dataset");
  const std::size_t L = ds.window_length;
  for (auto& e : ds.examples) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      float* row = e.data.data() + c * L;
      for (std::size_t t = 0; t < L; ++t) {
        row[t] = static_cast<float>((static_cast<double>(row[t]) - st.mean[c]) / st.stddev[c]);
      }
    }
  }
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Random partition of example indices 0..n-1 with |train| = round(ratio * n).
/// Both halves are returned in ascending index order.
inline Split split_random(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ParamError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<long>(n_train));
  s.test.assign(perm.begin() + static_cast<long>(n_train), perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

struct Fold {
  std::uint16_t held_out = 0;
  Split split;
};

/// One fold per subject, holding out all of that subject's windows.
inline std::vector<Fold> loso_folds(const Dataset& ds) {
  const auto subjects = ds.subjects();
  if (subjects.size() < 2) throw InsufficientSubjectsError("leave-one-subject-out needs at least 2 subjects");
  std::vector<Fold> folds;
  for (std::uint16_t s : subjects) {
    Fold f{s, {}};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      (ds.examples[i].subject == s ? f.split.test : f.split.train).push_back(i);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

// Window cache: "ALWIN1", u32 channels, u32 window length, u64 example count,
// then per example float32 payload (row-major), u8 label, u16 subject.
// All integers and floats little-endian.
namespace cache {

inline constexpr char kMagic[6] = {'A', 'L', 'W', 'I', 'N', '1'};

template <typename T>
void put_le(std::ostream& out, T v) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U u;
  std::memcpy(&u, &v, sizeof u);
  char b[sizeof u];
  for (std::size_t i = 0; i < sizeof u; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  out.write(b, sizeof b);
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof b)) throw FormatError("truncated window cache");
  U u = 0;
  for (std::size_t i = 0; i < sizeof u; ++i) u |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
  T v;
  std::memcpy(&v, &u, sizeof v);
  return v;
}

}  // namespace cache

inline void write_cache(std::ostream& out, const Dataset& ds) {
  out.write(cache::kMagic, sizeof cache::kMagic);
  cache::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.channels));
  cache::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.window_length));
  cache::put_le<std::uint64_t>(out, ds.size());
  const std::size_t payload = ds.channels * ds.window_length;
  for (const auto& e : ds.examples) {
    if (e.data.size() != payload) throw FormatError("example payload does not match dataset shape");
    for (float v : e.data) cache::put_le<float>(out, v);
    cache::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.label));
    cache::put_le<std::uint16_t>(out, e.subject);
  }
}

inline void write_cache(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_cache(out, ds);
  if (!out) throw IoError("write failure on " + path.string());
}

inline Dataset read_cache(std::istream& in) {
  char magic[6];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, cache::kMagic, sizeof magic) != 0) {
    throw FormatError("not a window cache (bad magic)");
  }
  Dataset ds;
  ds.channels = cache::get_le<std::uint32_t>(in);
  ds.window_length = cache::get_le<std::uint32_t>(in);
  const auto count = cache::get_le<std::uint64_t>(in);
  const std::size_t payload = ds.channels * ds.window_length;
  ds.examples.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    WindowExample e;
    e.data.resize(payload);
    for (auto& v : e.data) v = cache::get_le<float>(in);
    const auto label = cache::get_le<std::uint8_t>(in);
    if (label > 2) throw FormatError("bad label code " + std::to_string(label));
    e.label = static_cast<IntensityLevel>(label);
    e.subject = cache::get_le<std::uint16_t>(in);
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

inline Dataset read_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_cache(in);
}

}  // namespace alc::prep
