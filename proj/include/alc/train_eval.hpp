#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "alc/errors.hpp"
#include "alc/model_zoo.hpp"
#include "alc/optim.hpp"
#include "alc/preprocess.hpp"

namespace alc::eval {

using pamap2::kLevelCount;

struct Hyperparams {
  double learning_rate = 0.01;
  std::size_t epochs = 15;
  std::size_t batch_size = 10;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

inline void validate(const Hyperparams& hp) {
  if (!(hp.learning_rate > 0.0)) throw ParamError("learning rate must be positive");
  if (hp.batch_size == 0) throw ParamError("batch size must be >= 1");
  if (!(hp.momentum >= 0.0 && hp.momentum < 1.0)) throw ParamError("momentum must lie in [0, 1)");
}

/// splitmix64 finalizer; derives independent seeds from (master, tag...).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix_seed(master);
  for (std::uint64_t t : tags) s = mix_seed(s ^ mix_seed(t));
  return s;
}

/// Stacks the selected windows into [B, C, L] and collects their labels.
inline nn::Tensor make_batch(const prep::Dataset& ds, std::span<const std::size_t> idx, std::vector<int>* labels) {
  const std::size_t per = ds.channels * ds.window_length;
  nn::Tensor t({idx.size(), ds.channels, ds.window_length});
  if (labels) labels->clear();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& e = ds.examples[idx[b]];
    std::copy(e.data.begin(), e.data.end(), t.data() + b * per);
    if (labels) labels->push_back(static_cast<int>(e.label));
  }
  return t;
}

/// Mini-batch SGD with momentum; returns the mean training loss per epoch.
/// The batch order is reshuffled each epoch from hp.seed; the last partial
/// batch is kept.
inline std::vector<double> train(zoo::Model& model, const prep::Dataset& ds, std::span<const std::size_t> train_idx,
                                 const Hyperparams& hp) {
  validate(hp);
  if (train_idx.empty()) throw EmptySetError("empty training set");
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  std::mt19937_64 rng(hp.seed);
  std::vector<double> history;
  std::vector<int> labels;
  const auto& params = model.parameters();
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t n = std::min(hp.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, n);
      nn::Tape tape;
      nn::Var logits = model.forward(tape, make_batch(ds, idx, &labels), nn::Mode::Train);
      nn::Var loss = nn::softmax_cross_entropy(logits, labels);
      nn::zero_grads(params);
      tape.backward(loss);
      nn::sgd_momentum_step(params, hp.learning_rate, hp.momentum);
      total += loss.value()[0] * static_cast<double>(n);
    }
    history.push_back(total / static_cast<double>(order.size()));
  }
  return history;
}

/// Argmax of each logit row; ties go to the lowest class index.
inline std::vector<int> argmax_rows(const nn::Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<int> predict(zoo::Model& model, const prep::Dataset& ds, std::span<const std::size_t> idx,
                                std::size_t chunk = 64) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const std::size_t n = std::min(chunk, idx.size() - start);
    const auto pred = argmax_rows(model.predict_logits(make_batch(ds, idx.subspan(start, n), nullptr)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

/// Rows = true level, columns = predicted level (Low, Medium, High).
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kLevelCount>, kLevelCount> counts{};

  void add(int truth, int predicted) { ++counts.at(static_cast<std::size_t>(truth)).at(static_cast<std::size_t>(predicted)); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& r : counts)
      for (auto c : r) t += c;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < kLevelCount; ++i) t += counts[i][i];
    return t;
  }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < kLevelCount; ++i)
      for (std::size_t j = 0; j < kLevelCount; ++j) counts[i][j] += o.counts[i][j];
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw EmptySetError("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

inline std::array<double, kLevelCount> per_class_f1(const ConfusionMatrix& cm) {
  std::array<double, kLevelCount> f1{};
  for (std::size_t c = 0; c < kLevelCount; ++c) {
    std::uint64_t col = 0, row = 0;
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      col += cm.counts[k][c];
      row += cm.counts[c][k];
    }
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double precision = col ? tp / static_cast<double>(col) : 0.0;
    const double recall = row ? tp / static_cast<double>(row) : 0.0;
    f1[c] = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

/// Unweighted mean of per-class F1; a class with P + R = 0 contributes 0.
inline double macro_f1(const ConfusionMatrix& cm) {
  const auto f1 = per_class_f1(cm);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(kLevelCount);
}

inline std::array<double, kLevelCount> per_class_recall(const ConfusionMatrix& cm) {
  std::array<double, kLevelCount> r{};
  for (std::size_t c = 0; c < kLevelCount; ++c) {
    std::uint64_t row = 0;
    for (auto v : cm.counts[c]) row += v;
    r[c] = row ? static_cast<double>(cm.counts[c][c]) / static_cast<double>(row) : 0.0;
  }
  return r;
}

/// Each non-empty row scaled to sum to 100; empty rows stay zero.
inline std::array<std::array<double, kLevelCount>, kLevelCount> row_normalize(const ConfusionMatrix& cm) {
  std::array<std::array<double, kLevelCount>, kLevelCount> pct{};
  for (std::size_t r = 0; r < kLevelCount; ++r) {
    std::uint64_t row = 0;
    for (auto v : cm.counts[r]) row += v;
    if (row == 0) continue;
    for (std::size_t c = 0; c < kLevelCount; ++c) {
      pct[r][c] = 100.0 * static_cast<double>(cm.counts[r][c]) / static_cast<double>(row);
    }
  }
  return pct;
}

struct EvalResult {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kLevelCount> per_class_recall{};
};

inline EvalResult summarize(const ConfusionMatrix& cm) {
  return EvalResult{cm, accuracy(cm), macro_f1(cm), per_class_recall(cm)};
}

inline ConfusionMatrix confusion_of(std::span<const int> truth, std::span<const int> predicted) {
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

inline EvalResult evaluate(zoo::Model& model, const prep::Dataset& ds, std::span<const std::size_t> test_idx) {
  if (test_idx.empty()) throw EmptySetError("empty test set");
  const auto pred = predict(model, ds, test_idx);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < test_idx.size(); ++i) cm.add(static_cast<int>(ds.examples[test_idx[i]].label), pred[i]);
  return summarize(cm);
}

enum class Protocol : std::uint8_t { Random80_20, Loso };

inline const char* to_string(Protocol p) { return p == Protocol::Random80_20 ? "random80_20" : "loso"; }
inline Protocol parse_protocol(std::string_view s) {
  if (s == "random80_20") return Protocol::Random80_20;
  if (s == "loso") return Protocol::Loso;
  throw ParamError("unknown protocol '" + std::string(s) + "'");
}

struct SubjectScore {
  std::uint16_t subject = 0;
  std::uint32_t repeat = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct ExperimentResult {
  EvalResult overall;
  std::vector<SubjectScore> per_subject;  // ordered by (subject, repeat)
  std::vector<std::vector<double>> loss_history;  // one per trained fold
};

inline constexpr double kTrainRatio = 0.8;
inline constexpr double kEvalSubsample = 0.8;

/// Trains and evaluates one (configuration, architecture) cell.
///
/// Random protocol: one 80/20 split (seeded from the master seed only, so all
/// cells share it), one model. LOSO: one model per held-out subject. Each
/// subject's test windows are scored `repeats` times on independent 80%
/// subsamples drawn from (master seed, subject, repeat); the model is not
/// retrained between repeats. Normalization is fit on each fold's training
/// windows.
inline ExperimentResult run_experiment(prep::SensorConfig config, zoo::ModelKind kind, const prep::Dataset& data,
                                       const Hyperparams& hp, Protocol protocol, std::size_t repeats) {
  validate(hp);
  if (repeats == 0) throw ParamError("repeats must be >= 1");
  if (data.size() == 0) throw EmptySetError("empty dataset");
  prep::Dataset ds = prep::select_config(data, config);

  std::vector<prep::Fold> folds;
  if (protocol == Protocol::Random80_20) {
    folds.push_back({0, prep::split_random(ds.size(), kTrainRatio, derive_seed(hp.seed, {1}))});
  } else {
    folds = prep::loso_folds(ds);
  }

  ExperimentResult result;
  ConfusionMatrix pooled;
  std::vector<int> truth, pred_all;
  std::vector<std::uint16_t> subj_all;
  for (const auto& fold : folds) {
    if (fold.split.train.empty() || fold.split.test.empty()) throw EmptySetError("fold with an empty partition");
    prep::Dataset fold_ds = ds;
    prep::apply_normalizer(prep::fit_normalizer(fold_ds, fold.split.train), fold_ds);
    const std::uint64_t tag = static_cast<std::uint64_t>(kind);
    zoo::Model model = zoo::build({kind, ds.channels, ds.window_length, pamap2::kLevelCount},
                                  derive_seed(hp.seed, {2, tag, fold.held_out}));
    Hyperparams fhp = hp;
    fhp.seed = derive_seed(hp.seed, {3, tag, fold.held_out});
    result.loss_history.push_back(train(model, fold_ds, fold.split.train, fhp));
    const auto pred = predict(model, fold_ds, fold.split.test);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto& e = fold_ds.examples[fold.split.test[i]];
      truth.push_back(static_cast<int>(e.label));
      pred_all.push_back(pred[i]);
      subj_all.push_back(e.subject);
      pooled.add(static_cast<int>(e.label), pred[i]);
    }
  }
  result.overall = summarize(pooled);

  for (std::uint16_t s : ds.subjects()) {
    std::vector<std::size_t> mine;
    for (std::size_t i = 0; i < subj_all.size(); ++i)
      if (subj_all[i] == s) mine.push_back(i);
    if (mine.empty()) continue;
    const std::size_t take =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(kEvalSubsample * static_cast<double>(mine.size()))));
    for (std::size_t r = 0; r < repeats; ++r) {
      std::vector<std::size_t> draw = mine;
      std::mt19937_64 rng(derive_seed(hp.seed, {4, s, r}));
      std::shuffle(draw.begin(), draw.end(), rng);
      ConfusionMatrix cm;
      for (std::size_t k = 0; k < take; ++k) cm.add(truth[draw[k]], pred_all[draw[k]]);
      result.per_subject.push_back({s, static_cast<std::uint32_t>(r), accuracy(cm), macro_f1(cm)});
    }
  }
  return result;
}

}  // namespace alc::eval
