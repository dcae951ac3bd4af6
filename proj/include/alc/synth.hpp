#pragma once

// Synthetic labeled windows whose intensity classes differ in movement
// energy: Low is a per-channel constant, Medium a unit-amplitude 1-2 Hz
// sinusoid starting at phase 0, High an amplitude-3 4-6 Hz sinusoid with a
// random phase per channel. One frequency is drawn per window. Each subject
// gets a random amplitude scale in [0.8, 1.2] and its own per-channel offsets.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "alc/errors.hpp"
#include "alc/preprocess.hpp"

namespace alc::synth {

struct SynthSpec {
  std::size_t n_subjects = 6;
  std::size_t windows_per_class_per_subject = 40;
  std::size_t channels = 18;
  std::size_t window_length = 200;
  double noise_std = 0.3;
  std::uint64_t seed = 1;
  double sample_rate_hz = 100.0;
};

inline void validate(const SynthSpec& s) {
  if (s.n_subjects == 0 || s.windows_per_class_per_subject == 0 || s.channels == 0 || s.window_length == 0) {
    throw ParamError("synthetic spec counts must be >= 1");
  }
  if (s.n_subjects > 65535) throw ParamError("at most 65535 subjects");
  if (!(s.noise_std >= 0.0) || !std::isfinite(s.noise_std)) throw ParamError("noise_std must be >= 0");
  if (!(s.sample_rate_hz > 0.0)) throw ParamError("sample rate must be positive");
}

/// Subject ids are 1..n_subjects; examples are ordered subject, class, window.
inline prep::Dataset generate(const SynthSpec& spec) {
  validate(spec);
  prep::Dataset ds{spec.channels, spec.window_length, {}};
  ds.examples.reserve(spec.n_subjects * 3 * spec.windows_per_class_per_subject);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    // Independent stream per subject so subjects can be generated in any order.
    std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + s + 1);
    std::uniform_real_distribution<double> scale_dist(0.8, 1.2);
    std::uniform_real_distribution<double> offset_dist(-1.0, 1.0);
    std::uniform_real_distribution<double> phase_dist(0.0, two_pi);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double scale = scale_dist(rng);
    std::vector<double> offset(spec.channels);
    for (auto& o : offset) o = offset_dist(rng);

    for (std::size_t cls = 0; cls < 3; ++cls) {
      const auto level = static_cast<pamap2::IntensityLevel>(cls);
      for (std::size_t w = 0; w < spec.windows_per_class_per_subject; ++w) {
        prep::WindowExample ex;
        ex.label = level;
        ex.subject = static_cast<std::uint16_t>(s + 1);
        ex.data.resize(spec.channels * spec.window_length);
        // One movement per window, seen by every channel with its own phase.
        double amp = 0.0, freq = 0.0;
        if (cls == 1) {
          amp = 1.0;
          freq = std::uniform_real_distribution<double>(1.0, 2.0)(rng);
        } else if (cls == 2) {
          amp = 3.0;
          freq = std::uniform_real_distribution<double>(4.0, 6.0)(rng);
        }
        for (std::size_t c = 0; c < spec.channels; ++c) {
          const double phase = cls == 2 ? phase_dist(rng) : 0.0;
          for (std::size_t t = 0; t < spec.window_length; ++t) {
            const double time = static_cast<double>(t) / spec.sample_rate_hz;
            double v = offset[c] + scale * amp * std::sin(two_pi * freq * time + phase);
            if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
            ex.data[c * spec.window_length + t] = static_cast<float>(v);
          }
        }
        ds.examples.push_back(std::move(ex));
      }
    }
  }
  return ds;
}

}  // namespace alc::synth
