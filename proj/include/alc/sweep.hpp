#pragma once

// Configuration x architecture grid runs and their reports: results CSV,
// accuracy / F1 grids, per-cell confusion matrices, a JSON manifest, and the
// Wilcoxon + Bonferroni comparison report. Completed cells are cached on disk
// under a digest of everything that determines them, so reruns skip them.

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "alc/stats.hpp"
#include "alc/synth.hpp"
#include "alc/train_eval.hpp"

namespace alc::sweep {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Shortest decimal text that round-trips; byte-stable across runs.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t dataset_digest(const prep::Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::uint64_t dims[2] = {ds.channels, ds.window_length};
  h = fnv1a(dims, sizeof dims, h);
  for (const auto& e : ds.examples) {
    h = fnv1a(e.data.data(), e.data.size() * sizeof(float), h);
    const auto label = static_cast<std::uint8_t>(e.label);
    h = fnv1a(&label, 1, h);
    h = fnv1a(&e.subject, sizeof e.subject, h);
  }
  return h;
}

struct RunConfig {
  std::string cache;  // window cache path; empty means generate from `synth`
  synth::SynthSpec synth;
  std::vector<prep::SensorConfig> configs{prep::kAllConfigs.begin(), prep::kAllConfigs.end()};
  std::vector<zoo::ModelKind> models{zoo::kAllKinds.begin(), zoo::kAllKinds.end()};
  eval::Hyperparams hp;
  eval::Protocol protocol = eval::Protocol::Random80_20;
  std::size_t repeats = 2;
  std::string out_dir = "results";
  std::size_t jobs = 1;
};

inline void validate(const RunConfig& rc) {
  if (rc.configs.empty()) throw ParamError("select at least one sensor configuration");
  if (rc.models.empty()) throw ParamError("select at least one model");
  if (rc.repeats == 0) throw ParamError("repeats must be >= 1");
  if (rc.jobs == 0) throw ParamError("jobs must be >= 1");
  eval::validate(rc.hp);
}

inline json to_json(const RunConfig& rc) {
  json j;
  j["cache"] = rc.cache;
  j["synth"] = {{"n_subjects", rc.synth.n_subjects},
                {"windows_per_class_per_subject", rc.synth.windows_per_class_per_subject},
                {"channels", rc.synth.channels},
                {"window_length", rc.synth.window_length},
                {"noise_std", rc.synth.noise_std},
                {"seed", rc.synth.seed}};
  j["configs"] = json::array();
  for (auto c : rc.configs) j["configs"].push_back(prep::to_string(c));
  j["models"] = json::array();
  for (auto m : rc.models) j["models"].push_back(zoo::to_tag(m));
  j["hyperparams"] = {{"learning_rate", rc.hp.learning_rate},
                      {"epochs", rc.hp.epochs},
                      {"batch_size", rc.hp.batch_size},
                      {"momentum", rc.hp.momentum},
                      {"seed", rc.hp.seed}};
  j["protocol"] = eval::to_string(rc.protocol);
  j["repeats"] = rc.repeats;
  j["out_dir"] = rc.out_dir;
  j["jobs"] = rc.jobs;
  return j;
}

/// Fields absent from `j` keep their current values in `rc`.
inline void merge_json(RunConfig& rc, const json& j) {
  try {
    if (j.contains("cache")) rc.cache = j["cache"].get<std::string>();
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      rc.synth.n_subjects = s.value("n_subjects", rc.synth.n_subjects);
      rc.synth.windows_per_class_per_subject =
          s.value("windows_per_class_per_subject", rc.synth.windows_per_class_per_subject);
      rc.synth.channels = s.value("channels", rc.synth.channels);
      rc.synth.window_length = s.value("window_length", rc.synth.window_length);
      rc.synth.noise_std = s.value("noise_std", rc.synth.noise_std);
      rc.synth.seed = s.value("seed", rc.synth.seed);
    }
    if (j.contains("configs")) {
      rc.configs.clear();
      for (const auto& c : j["configs"]) rc.configs.push_back(prep::parse_config(c.get<std::string>()));
    }
    if (j.contains("models")) {
      rc.models.clear();
      for (const auto& m : j["models"]) rc.models.push_back(zoo::parse_kind(m.get<std::string>()));
    }
    if (j.contains("hyperparams")) {
      const auto& h = j["hyperparams"];
      rc.hp.learning_rate = h.value("learning_rate", rc.hp.learning_rate);
      rc.hp.epochs = h.value("epochs", rc.hp.epochs);
      rc.hp.batch_size = h.value("batch_size", rc.hp.batch_size);
      rc.hp.momentum = h.value("momentum", rc.hp.momentum);
      rc.hp.seed = h.value("seed", rc.hp.seed);
    }
    if (j.contains("protocol")) rc.protocol = eval::parse_protocol(j["protocol"].get<std::string>());
    rc.repeats = j.value("repeats", rc.repeats);
    rc.out_dir = j.value("out_dir", rc.out_dir);
    rc.jobs = j.value("jobs", rc.jobs);
  } catch (const json::exception& e) {
    throw ParamError(std::string("run config: ") + e.what());
  }
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run config " + path.string());
  RunConfig rc;
  try {
    merge_json(rc, json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError("run config " + path.string() + ": " + e.what());
  }
  return rc;
}

/// ALC_SEED, when set, replaces the master seed.
inline void apply_seed_env(eval::Hyperparams& hp) {
  const char* env = std::getenv("ALC_SEED");
  if (!env || !*env) return;
  std::uint64_t v = 0;
  const std::string_view s(env);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ParamError("ALC_SEED is not an unsigned integer");
  hp.seed = v;
}

inline prep::Dataset load_dataset(const RunConfig& rc) {
  return rc.cache.empty() ? synth::generate(rc.synth) : prep::read_cache(fs::path(rc.cache));
}

struct ResultRow {
  std::string config, model, protocol;
  std::uint16_t subject = 0;
  std::uint32_t repeat = 0;
  double accuracy = 0.0, macro_f1 = 0.0;
};

inline constexpr const char* kResultsHeader = "config,model,protocol,subject,repeat,accuracy,macro_f1";

struct CellResult {
  prep::SensorConfig config{};
  zoo::ModelKind model{};
  eval::ExperimentResult result;
  bool resumed = false;
};

inline std::uint64_t cell_digest(const RunConfig& rc, std::uint64_t data_digest, prep::SensorConfig c,
                                 zoo::ModelKind m) {
  std::ostringstream s;
  s << hex64(data_digest) << '|' << prep::to_string(c) << '|' << zoo::to_tag(m) << '|' << eval::to_string(rc.protocol)
    << '|' << rc.repeats << '|' << fmt(rc.hp.learning_rate) << '|' << rc.hp.epochs << '|' << rc.hp.batch_size << '|'
    << fmt(rc.hp.momentum) << '|' << rc.hp.seed;
  const std::string text = s.str();
  return fnv1a(text.data(), text.size());
}

inline json cell_to_json(const eval::ExperimentResult& r, std::uint64_t digest) {
  json j;
  j["digest"] = hex64(digest);
  j["confusion"] = r.overall.confusion.counts;
  j["per_subject"] = json::array();
  for (const auto& s : r.per_subject) j["per_subject"].push_back({s.subject, s.repeat, s.accuracy, s.macro_f1});
  j["loss_history"] = r.loss_history;
  return j;
}

inline std::optional<eval::ExperimentResult> cell_from_json(const json& j, std::uint64_t digest) {
  try {
    if (j.at("digest").get<std::string>() != hex64(digest)) return std::nullopt;
    eval::ConfusionMatrix cm;
    cm.counts = j.at("confusion").get<decltype(cm.counts)>();
    eval::ExperimentResult r;
    r.overall = eval::summarize(cm);
    for (const auto& s : j.at("per_subject")) {
      r.per_subject.push_back({s.at(0).get<std::uint16_t>(), s.at(1).get<std::uint32_t>(), s.at(2).get<double>(),
                               s.at(3).get<double>()});
    }
    r.loss_history = j.at("loss_history").get<std::vector<std::vector<double>>>();
    return r;
  } catch (const std::exception&) {
    return std::nullopt;  // damaged cache file: recompute
  }
}

inline fs::path cell_path(const fs::path& out, prep::SensorConfig c, zoo::ModelKind m) {
  return out / "cells" / (std::string(prep::to_string(c)) + "_" + zoo::to_tag(m) + ".json");
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string confusion_csv(const eval::ConfusionMatrix& cm) {
  static constexpr const char* names[3] = {"low", "medium", "high"};
  std::string s = "true\\pred,low,medium,high\n";
  for (std::size_t r = 0; r < 3; ++r) {
    s += names[r];
    for (auto v : cm.counts[r]) s += "," + std::to_string(v);
    s += "\n";
  }
  s += "\ntrue\\pred (%),low,medium,high\n";
  const auto pct = eval::row_normalize(cm);
  for (std::size_t r = 0; r < 3; ++r) {
    s += names[r];
    for (double v : pct[r]) s += "," + fmt(v);
    s += "\n";
  }
  return s;
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string s = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    s += r.config + "," + r.model + "," + r.protocol + "," + std::to_string(r.subject) + "," +
         std::to_string(r.repeat) + "," + fmt(r.accuracy) + "," + fmt(r.macro_f1) + "\n";
  }
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<ResultRow> read_results_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kResultsHeader)) {
    throw FormatError(path.string() + ": expected header '" + kResultsHeader + "'");
  }
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw LineError(lineno, "expected 7 fields");
    try {
      rows.push_back({f[0], f[1], f[2], static_cast<std::uint16_t>(std::stoul(f[3])),
                      static_cast<std::uint32_t>(std::stoul(f[4])), std::stod(f[5]), std::stod(f[6])});
    } catch (const std::logic_error&) {
      throw LineError(lineno, "malformed number");
    }
  }
  return rows;
}

struct ComparisonRow {
  std::string pair;
  std::size_t n_effective = 0;
  double w = 0.0;
  double p_value = 1.0;
  std::string method;
  double threshold = 0.0;
  bool significant = false;
};

inline const std::vector<std::pair<std::string, std::string>>& default_pairs() {
  static const std::vector<std::pair<std::string, std::string>> p{{"WO", "WA"}, {"WO", "W18"}, {"WA", "W18"}};
  return p;
}

/// Pairs per-subject scores of `model` across configurations and tests each
/// pair; m = number of pairs. Identical score lists are reported with p = 1.
inline std::vector<ComparisonRow> compare(const std::vector<ResultRow>& rows, const std::string& model,
                                          const std::vector<std::pair<std::string, std::string>>& pairs,
                                          double alpha = 0.05, bool use_f1 = true) {
  if (pairs.empty()) throw ParamError("no configuration pairs to compare");
  auto scores_for = [&](const std::string& config) {
    std::vector<stats::KeyedScore> s;
    for (const auto& r : rows)
      if (r.config == config && r.model == model) s.push_back({{r.subject, r.repeat}, use_f1 ? r.macro_f1 : r.accuracy});
    if (s.empty()) throw KeyMismatchError("no scores for configuration " + config + " and model " + model);
    return s;
  };
  std::vector<ComparisonRow> out;
  std::vector<double> ps;
  for (const auto& [a, b] : pairs) {
    const auto paired = stats::compare_configs(scores_for(a), scores_for(b), a, b);
    ComparisonRow row{a + "-" + b, 0, 0.0, 1.0, "degenerate", 0.0, false};
    try {
      const auto t = stats::wilcoxon_signed_rank(paired.diffs);
      row.n_effective = t.n_effective;
      row.w = t.statistic;
      row.p_value = t.p_value;
      row.method = stats::to_string(t.method);
    } catch (const DegenerateError&) {
    }
    ps.push_back(row.p_value);
    out.push_back(row);
  }
  const auto bf = stats::bonferroni(ps, alpha, pairs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].threshold = bf.threshold;
    out[i].significant = out[i].method != "degenerate" && bf.significant[i];
  }
  return out;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string s = "pair,n_effective,W,p_value,method,threshold,significant\n";
  for (const auto& r : rows) {
    s += r.pair + "," + std::to_string(r.n_effective) + "," + fmt(r.w) + "," + fmt(r.p_value) + "," + r.method + "," +
         fmt(r.threshold) + "," + (r.significant ? "true" : "false") + "\n";
  }
  return s;
}

struct SweepSummary {
  std::vector<CellResult> cells;  // config-major, in RunConfig order
  std::vector<ResultRow> rows;
  std::size_t computed = 0, resumed = 0;
};

/// Runs every (configuration, model) cell and writes all reports into
/// rc.out_dir. Cells with a matching digest on disk are loaded, not rerun.
inline SweepSummary run_sweep(const RunConfig& rc, std::ostream* log = nullptr) {
  validate(rc);
  const prep::Dataset data = load_dataset(rc);
  const std::uint64_t data_digest = dataset_digest(data);
  const fs::path out(rc.out_dir);
  fs::create_directories(out / "cells");
  fs::create_directories(out / "confusion");
  write_text(out / "config.json", to_json(rc).dump(2) + "\n");

  SweepSummary sum;
  for (auto c : rc.configs)
    for (auto m : rc.models) sum.cells.push_back({c, m, {}, false});

  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < sum.cells.size(); i = next++) {
      auto& cell = sum.cells[i];
      try {
        const auto digest = cell_digest(rc, data_digest, cell.config, cell.model);
        const auto path = cell_path(out, cell.config, cell.model);
        if (std::ifstream in(path); in) {
          json j = json::parse(in, nullptr, false);
          if (auto r = cell_from_json(j, digest)) {
            cell.result = std::move(*r);
            cell.resumed = true;
          }
        }
        if (!cell.resumed) {
          cell.result = eval::run_experiment(cell.config, cell.model, data, rc.hp, rc.protocol, rc.repeats);
          write_text(path, cell_to_json(cell.result, digest).dump() + "\n");
        }
        if (log) {
          std::lock_guard lock(log_mu);
          *log << prep::to_string(cell.config) << " " << zoo::to_tag(cell.model) << " accuracy "
               << fmt(cell.result.overall.accuracy) << (cell.resumed ? " (cached)" : "") << "\n";
        }
      } catch (...) {
        std::lock_guard lock(log_mu);
        if (!failure) failure = std::current_exception();
        next = sum.cells.size();
      }
    }
  };
  const std::size_t n_threads = std::min(rc.jobs, sum.cells.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  // Reports are written serially, in grid order, after all cells finish.
  std::string acc_grid = "model", f1_grid = "model";
  for (auto c : rc.configs) {
    acc_grid += std::string(",") + prep::to_string(c);
    f1_grid += std::string(",") + prep::to_string(c);
  }
  acc_grid += "\n";
  f1_grid += "\n";
  for (auto m : rc.models) {
    acc_grid += zoo::to_tag(m);
    f1_grid += zoo::to_tag(m);
    for (const auto& cell : sum.cells) {
      if (cell.model != m) continue;
      acc_grid += "," + fmt(cell.result.overall.accuracy);
      f1_grid += "," + fmt(cell.result.overall.macro_f1);
    }
    acc_grid += "\n";
    f1_grid += "\n";
  }
  for (const auto& cell : sum.cells) {
    (cell.resumed ? sum.resumed : sum.computed)++;
    for (const auto& s : cell.result.per_subject) {
      sum.rows.push_back({prep::to_string(cell.config), zoo::to_tag(cell.model), eval::to_string(rc.protocol),
                          s.subject, s.repeat, s.accuracy, s.macro_f1});
    }
    write_text(out / "confusion" / (std::string(prep::to_string(cell.config)) + "_" + zoo::to_tag(cell.model) + ".csv"),
               confusion_csv(cell.result.overall.confusion));
  }
  write_text(out / "results.csv", results_csv(sum.rows));
  write_text(out / "accuracy_grid.csv", acc_grid);
  write_text(out / "f1_grid.csv", f1_grid);

  // Comparison report per model, whenever all three paper configurations ran.
  auto has = [&](prep::SensorConfig c) { return std::find(rc.configs.begin(), rc.configs.end(), c) != rc.configs.end(); };
  if (has(prep::SensorConfig::WO) && has(prep::SensorConfig::WA) && has(prep::SensorConfig::W18)) {
    for (auto m : rc.models) {
      write_text(out / ("compare_" + std::string(zoo::to_tag(m)) + ".csv"),
                 comparison_csv(compare(sum.rows, zoo::to_tag(m), default_pairs())));
    }
  }

  json manifest;
  manifest["run_config"] = to_json(rc);
  manifest["dataset"] = {{"source", rc.cache.empty() ? "synth" : rc.cache},
                         {"digest_fnv1a64", hex64(data_digest)},
                         {"windows", data.size()},
                         {"channels", data.channels},
                         {"window_length", data.window_length}};
  manifest["seeds"] = {{"master", rc.hp.seed},
                       {"split", eval::derive_seed(rc.hp.seed, {1})},
                       {"derivation", "splitmix64(master, tags): split {1}, init {2, model, fold}, "
                                      "shuffle {3, model, fold}, per-subject subsample {4, subject, repeat}"}};
  manifest["cells"] = json::array();
  for (const auto& cell : sum.cells) {
    manifest["cells"].push_back({{"config", prep::to_string(cell.config)},
                                 {"model", zoo::to_tag(cell.model)},
                                 {"digest", hex64(cell_digest(rc, data_digest, cell.config, cell.model))}});
  }
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return sum;
}

}  // namespace alc::sweep
