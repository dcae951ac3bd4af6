// alc: prepare windows, train, evaluate, compare configurations, run sweeps.
// Exit codes: 0 success, 1 internal failure, 2 usage or input error.

#include <CLI11.hpp>

#include <cctype>
#include <filesystem>
#include <iostream>
#include <optional>

#include "alc/prepare.hpp"
#include "alc/sweep.hpp"

namespace fs = std::filesystem;
using namespace alc;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  return out;
}

std::string counts_summary(const prep::Dataset& ds) {
  const auto c = ds.class_counts();
  return "windows " + std::to_string(ds.size()) + " (low " + std::to_string(c[0]) + ", medium " +
         std::to_string(c[1]) + ", high " + std::to_string(c[2]) + "), channels " + std::to_string(ds.channels) +
         ", length " + std::to_string(ds.window_length);
}

struct PrepareArgs {
  std::string raw, met = std::string(ALC_DATA_DIR) + "/met_table.tsv", out;
  prep::PrepareOptions opt;
};

int cmd_prepare(const PrepareArgs& a) {
  const auto ds = prep::prepare_directory(a.raw, pamap2::load_met_table(a.met), a.opt, &std::cout);
  prep::write_cache(fs::path(a.out), ds);
  std::cout << counts_summary(ds) << "\n";
  return 0;
}

int cmd_synth(const synth::SynthSpec& spec, const std::string& out) {
  const auto ds = synth::generate(spec);
  prep::write_cache(fs::path(out), ds);
  std::cout << counts_summary(ds) << "\n";
  return 0;
}

// Checkpoint metadata rides along as named tensors next to the model state.
nn::Tensor scalar(double v) { return nn::Tensor({1}, {v}); }
nn::Tensor seed_tensor(std::uint64_t s) {
  return nn::Tensor({2}, {static_cast<double>(s >> 32), static_cast<double>(s & 0xffffffffULL)});
}
std::uint64_t seed_from(const nn::Tensor& t) {
  return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

struct TrainArgs {
  std::string cache, config = "W18", model = "cnn_lstm", out, history;
  eval::Hyperparams hp;
  std::optional<std::uint64_t> seed;
  double train_ratio = 0.8;
};

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag) {
  eval::Hyperparams hp;
  sweep::apply_seed_env(hp);
  return flag ? *flag : hp.seed;
}

// Same split rule as run_experiment so train/evaluate pairs line up with sweeps.
prep::Split cli_split(std::size_t n, double ratio, std::uint64_t seed) {
  if (ratio >= 1.0) {
    prep::Split s;
    for (std::size_t i = 0; i < n; ++i) s.train.push_back(i);
    return s;
  }
  return prep::split_random(n, ratio, eval::derive_seed(seed, {1}));
}

int cmd_train(TrainArgs a) {
  if (!(a.train_ratio > 0.0 && a.train_ratio <= 1.0)) throw ParamError("--train-ratio must lie in (0, 1]");
  a.hp.seed = resolve_seed(a.seed);
  const auto config = prep::parse_config(a.config);
  const auto kind = zoo::parse_kind(a.model);
  auto ds = prep::select_config(prep::read_cache(fs::path(a.cache)), config);
  const auto split = cli_split(ds.size(), a.train_ratio, a.hp.seed);
  const auto norm = prep::fit_normalizer(ds, split.train);
  prep::apply_normalizer(norm, ds);

  const std::uint64_t tag = static_cast<std::uint64_t>(kind);
  auto model = zoo::build({kind, ds.channels, ds.window_length, pamap2::kLevelCount}, eval::derive_seed(a.hp.seed, {2, tag, 0}));
  eval::Hyperparams fhp = a.hp;
  fhp.seed = eval::derive_seed(a.hp.seed, {3, tag, 0});
  const auto history = eval::train(model, ds, split.train, fhp);

  auto ck = zoo::export_model(model);
  ck.entries.emplace_back("meta.config", scalar(static_cast<double>(config)));
  ck.entries.emplace_back("meta.in_channels", scalar(static_cast<double>(ds.channels)));
  ck.entries.emplace_back("meta.window_length", scalar(static_cast<double>(ds.window_length)));
  ck.entries.emplace_back("meta.seed", seed_tensor(a.hp.seed));
  ck.entries.emplace_back("meta.train_ratio", scalar(a.train_ratio));
  ck.entries.emplace_back("norm.mean", nn::Tensor({norm.mean.size()}, norm.mean));
  ck.entries.emplace_back("norm.std", nn::Tensor({norm.stddev.size()}, norm.stddev));
  zoo::save_checkpoint(a.out, ck);

  const std::string hist_path = a.history.empty() ? a.out + ".history.csv" : a.history;
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) csv += std::to_string(e + 1) + "," + sweep::fmt(history[e]) + "\n";
  sweep::write_text(hist_path, csv);
  std::cout << "trained " << a.model << " on " << a.config << ": " << split.train.size() << " windows, "
            << history.size() << " epochs";
  if (!history.empty()) std::cout << ", final loss " << history.back();
  std::cout << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, cache, out_dir = ".", subset = "auto";
};

int cmd_evaluate(const EvalArgs& a) {
  const auto ck = zoo::load_checkpoint(a.checkpoint);
  const auto config = static_cast<prep::SensorConfig>(static_cast<int>(ck.at("meta.config")[0]));
  const auto in_channels = static_cast<std::size_t>(ck.at("meta.in_channels")[0]);
  const auto window_length = static_cast<std::size_t>(ck.at("meta.window_length")[0]);
  auto raw = prep::read_cache(fs::path(a.cache));
  if (raw.channels != prep::kAllChannels && raw.channels != in_channels) {
    throw ShapeError("cache has " + std::to_string(raw.channels) + " channels, checkpoint expects " +
                     std::to_string(in_channels));
  }
  auto ds = prep::select_config(raw, config);
  if (ds.window_length != window_length) throw ShapeError("window length differs from the checkpoint's");

  prep::ChannelStats norm;
  const auto& mean = ck.at("norm.mean");
  const auto& sd = ck.at("norm.std");
  norm.mean.assign(mean.values.begin(), mean.values.end());
  norm.stddev.assign(sd.values.begin(), sd.values.end());
  prep::apply_normalizer(norm, ds);

  auto model = zoo::build({zoo::parse_kind(ck.arch), in_channels, window_length, pamap2::kLevelCount}, 0);
  zoo::import_model(model, ck);

  const double ratio = ck.at("meta.train_ratio")[0];
  std::string subset = a.subset;
  if (subset == "auto") subset = ratio < 1.0 ? "test" : "all";
  std::vector<std::size_t> idx;
  if (subset == "test") {
    idx = cli_split(ds.size(), ratio, seed_from(ck.at("meta.seed"))).test;
  } else if (subset == "all") {
    for (std::size_t i = 0; i < ds.size(); ++i) idx.push_back(i);
  } else {
    throw ParamError("--subset must be auto, test or all");
  }
  const auto r = eval::evaluate(model, ds, idx);

  fs::create_directories(a.out_dir);
  sweep::write_text(fs::path(a.out_dir) / "metrics.csv",
                    "windows,accuracy,macro_f1,recall_low,recall_medium,recall_high\n" + std::to_string(idx.size()) +
                        "," + sweep::fmt(r.accuracy) + "," + sweep::fmt(r.macro_f1) + "," +
                        sweep::fmt(r.per_class_recall[0]) + "," + sweep::fmt(r.per_class_recall[1]) + "," +
                        sweep::fmt(r.per_class_recall[2]) + "\n");
  sweep::write_text(fs::path(a.out_dir) / "confusion.csv", sweep::confusion_csv(r.confusion));
  std::cout << "accuracy " << r.accuracy << ", macro F1 " << r.macro_f1 << " on " << idx.size() << " " << subset
            << " windows\n";
  return 0;
}

struct CompareArgs {
  std::string results, model = "cnn_lstm", pairs = "WO-WA,WO-W18,WA-W18", metric = "f1", out;
  double alpha = 0.05;
};

int cmd_compare(const CompareArgs& a) {
  if (a.metric != "f1" && a.metric != "accuracy") throw ParamError("--metric must be f1 or accuracy");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& p : split_list(a.pairs)) {
    const auto dash = p.find('-');
    if (dash == std::string::npos) throw ParamError("pair '" + p + "' is not of the form A-B");
    const auto lhs = p.substr(0, dash), rhs = p.substr(dash + 1);
    prep::parse_config(lhs);
    prep::parse_config(rhs);
    pairs.emplace_back(lhs, rhs);
  }
  const auto rows = sweep::compare(sweep::read_results_csv(a.results), a.model, pairs, a.alpha, a.metric == "f1");
  const auto csv = sweep::comparison_csv(rows);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    sweep::write_text(a.out, csv);
    std::cout << csv;
  }
  return 0;
}

struct SweepArgs {
  std::string config_file;
  std::optional<std::string> cache, out, configs, models, protocol;
  std::optional<double> lr, momentum, noise;
  std::optional<std::size_t> epochs, batch, repeats, jobs, subjects, per_class, channels, length;
  std::optional<std::uint64_t> seed, synth_seed;
};

int cmd_sweep(const SweepArgs& a) {
  sweep::RunConfig rc;
  if (!a.config_file.empty()) rc = sweep::load_run_config(a.config_file);
  sweep::apply_seed_env(rc.hp);
  // flags win over the environment and the file
  if (a.cache) rc.cache = *a.cache;
  if (a.out) rc.out_dir = *a.out;
  if (a.configs) {
    rc.configs.clear();
    for (const auto& c : split_list(*a.configs)) rc.configs.push_back(prep::parse_config(c));
  }
  if (a.models) {
    rc.models.clear();
    for (const auto& m : split_list(*a.models)) rc.models.push_back(zoo::parse_kind(m));
  }
  if (a.protocol) rc.protocol = eval::parse_protocol(*a.protocol);
  if (a.lr) rc.hp.learning_rate = *a.lr;
  if (a.momentum) rc.hp.momentum = *a.momentum;
  if (a.epochs) rc.hp.epochs = *a.epochs;
  if (a.batch) rc.hp.batch_size = *a.batch;
  if (a.seed) rc.hp.seed = *a.seed;
  if (a.repeats) rc.repeats = *a.repeats;
  if (a.jobs) rc.jobs = *a.jobs;
  if (a.subjects) rc.synth.n_subjects = *a.subjects;
  if (a.per_class) rc.synth.windows_per_class_per_subject = *a.per_class;
  if (a.channels) rc.synth.channels = *a.channels;
  if (a.length) rc.synth.window_length = *a.length;
  if (a.noise) rc.synth.noise_std = *a.noise;
  if (a.synth_seed) rc.synth.seed = *a.synth_seed;

  const auto sum = sweep::run_sweep(rc, &std::cout);
  std::cout << sum.cells.size() << " cells (" << sum.computed << " computed, " << sum.resumed << " cached), "
            << sum.rows.size() << " result rows in " << rc.out_dir << "\n";
  return 0;
}

void add_synth_options(CLI::App* cmd, synth::SynthSpec& s) {
  cmd->add_option("--subjects", s.n_subjects, "Number of subjects")->capture_default_str();
  cmd->add_option("--per-class", s.windows_per_class_per_subject, "Windows per class per subject")->capture_default_str();
  cmd->add_option("--channels", s.channels, "Channel count")->capture_default_str();
  cmd->add_option("--length", s.window_length, "Window length in samples")->capture_default_str();
  cmd->add_option("--noise", s.noise_std, "Gaussian noise standard deviation")->capture_default_str();
  cmd->add_option("--seed", s.seed, "Generator seed")->capture_default_str();
}

void add_hp_options(CLI::App* cmd, eval::Hyperparams& hp) {
  cmd->add_option("--lr", hp.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--epochs", hp.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", hp.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--momentum", hp.momentum, "SGD momentum")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activity-level classification from wearable IMU windows"};
  app.require_subcommand(1);

  PrepareArgs prep_args;
  auto* prepare = app.add_subcommand("prepare", "Parse PAMAP2 subject files into a window cache");
  prepare->add_option("--raw", prep_args.raw, "Directory holding subject .dat files")->required();
  prepare->add_option("--met", prep_args.met, "MET table (TSV)")->capture_default_str();
  prepare->add_option("--out", prep_args.out, "Output window cache")->required();
  prepare->add_option("--window", prep_args.opt.window_length, "Window length in samples")->capture_default_str();
  prepare->add_option("--stride", prep_args.opt.stride, "Window stride in samples")->capture_default_str();
  prepare->add_option("--max-gap", prep_args.opt.max_gap, "Longest interpolated gap")->capture_default_str();

  synth::SynthSpec synth_spec;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic window cache");
  synth_cmd->add_option("--out", synth_out, "Output window cache")->required();
  add_synth_options(synth_cmd, synth_spec);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train one model on one sensor configuration");
  train->add_option("--cache", train_args.cache, "Window cache")->required();
  train->add_option("--config", train_args.config, "WO, W6, WC, WA or W18")->capture_default_str();
  train->add_option("--model", train_args.model, "mlp, cnn, cnn_lstm, resnet1d or resnet18")->capture_default_str();
  train->add_option("--out", train_args.out, "Checkpoint path")->required();
  train->add_option("--history", train_args.history, "Loss history CSV (default <out>.history.csv)");
  train->add_option("--seed", train_args.seed, "Master seed (default $ALC_SEED or 0)");
  train->add_option("--train-ratio", train_args.train_ratio, "Training fraction; 1 trains on every window")
      ->capture_default_str();
  add_hp_options(train, train_args.hp);

  EvalArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a window cache");
  evaluate->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
  evaluate->add_option("--cache", eval_args.cache, "Window cache")->required();
  evaluate->add_option("--out-dir", eval_args.out_dir, "Directory for metrics.csv and confusion.csv")
      ->capture_default_str();
  evaluate->add_option("--subset", eval_args.subset, "auto, test (held-out split) or all")->capture_default_str();

  CompareArgs cmp_args;
  auto* compare = app.add_subcommand("compare", "Wilcoxon signed-rank comparison of configurations");
  compare->add_option("--results", cmp_args.results, "results.csv from a sweep")->required();
  compare->add_option("--model", cmp_args.model, "Model whose scores are compared")->capture_default_str();
  compare->add_option("--pairs", cmp_args.pairs, "Comma-separated A-B configuration pairs")->capture_default_str();
  compare->add_option("--metric", cmp_args.metric, "f1 or accuracy")->capture_default_str();
  compare->add_option("--alpha", cmp_args.alpha, "Family-wise significance level")->capture_default_str();
  compare->add_option("--out", cmp_args.out, "Report CSV (also printed)");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the configuration x model grid");
  sweep_cmd->add_option("--run-config", sw.config_file, "RunConfig JSON; flags override its values");
  sweep_cmd->add_option("--cache", sw.cache, "Window cache (default: synthetic data)");
  sweep_cmd->add_option("--out", sw.out, "Output directory");
  sweep_cmd->add_option("--configs", sw.configs, "Comma-separated configurations");
  sweep_cmd->add_option("--models", sw.models, "Comma-separated models");
  sweep_cmd->add_option("--protocol", sw.protocol, "random80_20 or loso");
  sweep_cmd->add_option("--lr", sw.lr, "Learning rate");
  sweep_cmd->add_option("--epochs", sw.epochs, "Training epochs");
  sweep_cmd->add_option("--batch", sw.batch, "Mini-batch size");
  sweep_cmd->add_option("--momentum", sw.momentum, "SGD momentum");
  sweep_cmd->add_option("--seed", sw.seed, "Master seed");
  sweep_cmd->add_option("--repeats", sw.repeats, "Evaluations per subject");
  sweep_cmd->add_option("--jobs", sw.jobs, "Worker threads");
  sweep_cmd->add_option("--synth-subjects", sw.subjects, "Synthetic subjects");
  sweep_cmd->add_option("--synth-per-class", sw.per_class, "Synthetic windows per class per subject");
  sweep_cmd->add_option("--synth-channels", sw.channels, "Synthetic channel count");
  sweep_cmd->add_option("--synth-length", sw.length, "Synthetic window length");
  sweep_cmd->add_option("--synth-noise", sw.noise, "Synthetic noise standard deviation");
  sweep_cmd->add_option("--synth-seed", sw.synth_seed, "Synthetic generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*prepare) return cmd_prepare(prep_args);
    if (*synth_cmd) return cmd_synth(synth_spec, synth_out);
    if (*train) return cmd_train(train_args);
    if (*evaluate) return cmd_evaluate(eval_args);
    if (*compare) return cmd_compare(cmp_args);
    if (*sweep_cmd) return cmd_sweep(sw);
  } catch (const alc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
