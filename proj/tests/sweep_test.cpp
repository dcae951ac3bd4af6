#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "alc/sweep.hpp"

namespace sw = alc::sweep;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("alc_sweep_" + name);
  fs::remove_all(p);
  return p;
}

sw::RunConfig tiny(const fs::path& out) {
  sw::RunConfig rc;
  rc.synth.n_subjects = 3;
  rc.synth.windows_per_class_per_subject = 4;
  rc.synth.channels = 18;
  rc.synth.window_length = 64;
  rc.configs = {alc::prep::SensorConfig::WO, alc::prep::SensorConfig::WA, alc::prep::SensorConfig::W18};
  rc.models = {alc::zoo::ModelKind::MLP, alc::zoo::ModelKind::CNN};
  rc.hp.epochs = 2;
  rc.hp.seed = 5;
  rc.out_dir = out.string();
  return rc;
}

TEST(Sweep, SameManifestSameBytes) {
  const auto a = fresh_dir("a"), b = fresh_dir("b");
  sw::run_sweep(tiny(a));
  auto rc = tiny(b);
  rc.jobs = 3;  // parallel workers must not change the output
  sw::run_sweep(rc);
  for (const char* f : {"results.csv", "accuracy_grid.csv", "f1_grid.csv", "compare_mlp.csv", "confusion/WA_cnn.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(slurp(a / "results.csv").substr(0, 55), "config,model,protocol,subject,repeat,accuracy,macro_f1\n");
}

TEST(Sweep, ResumeSkipsCompletedCells) {
  const auto dir = fresh_dir("resume");
  const auto first = sw::run_sweep(tiny(dir));
  EXPECT_EQ(first.computed, 6u);
  const std::string before = slurp(dir / "results.csv");
  const auto second = sw::run_sweep(tiny(dir));
  EXPECT_EQ(second.computed, 0u);
  EXPECT_EQ(second.resumed, 6u);
  EXPECT_EQ(slurp(dir / "results.csv"), before);
  // a changed hyperparameter invalidates every cell digest
  auto rc = tiny(dir);
  rc.hp.epochs = 1;
  EXPECT_EQ(sw::run_sweep(rc).computed, 6u);
}

TEST(Sweep, PartialGridResumes) {
  const auto dir = fresh_dir("partial");
  auto rc = tiny(dir);
  rc.models = {alc::zoo::ModelKind::MLP};
  sw::run_sweep(rc);
  const auto full = sw::run_sweep(tiny(dir));
  EXPECT_EQ(full.resumed, 3u);
  EXPECT_EQ(full.computed, 3u);
}

TEST(Sweep, FullGridHasTwentyFiveCells) {
  const auto dir = fresh_dir("grid");
  sw::RunConfig rc;
  rc.synth.n_subjects = 2;
  rc.synth.windows_per_class_per_subject = 3;
  rc.synth.window_length = 64;
  rc.hp.epochs = 1;
  rc.repeats = 1;
  rc.out_dir = dir.string();
  const auto sum = sw::run_sweep(rc);
  EXPECT_EQ(sum.cells.size(), 25u);
  std::ifstream grid(dir / "accuracy_grid.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(grid, line)) ++rows;
  EXPECT_EQ(rows, 6u);  // header + 5 models
  std::size_t confusions = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "confusion")) ++confusions;
  EXPECT_EQ(confusions, 25u);
}

TEST(Sweep, ManifestRecordsSeedsAndDigest) {
  const auto dir = fresh_dir("manifest");
  sw::run_sweep(tiny(dir));
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["seeds"]["master"].get<std::uint64_t>(), 5u);
  EXPECT_EQ(m["seeds"]["split"].get<std::uint64_t>(), alc::eval::derive_seed(5, {1}));
  EXPECT_EQ(m["dataset"]["digest_fnv1a64"].get<std::string>().size(), 16u);
  EXPECT_EQ(m["run_config"]["hyperparams"]["epochs"].get<std::size_t>(), 2u);
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}

TEST(RunConfig, JsonRoundTripAndPartialMerge) {
  auto rc = tiny("x");
  rc.protocol = alc::eval::Protocol::Loso;
  sw::RunConfig back;
  sw::merge_json(back, sw::to_json(rc));
  EXPECT_EQ(sw::to_json(back), sw::to_json(rc));
  sw::RunConfig partial;
  sw::merge_json(partial, nlohmann::json::parse(R"({"hyperparams": {"epochs": 3}, "models": ["resnet18"]})"));
  EXPECT_EQ(partial.hp.epochs, 3u);
  EXPECT_EQ(partial.hp.learning_rate, 0.01);
  EXPECT_EQ(partial.models, std::vector<alc::zoo::ModelKind>{alc::zoo::ModelKind::RESNET18});
  EXPECT_EQ(partial.configs.size(), 5u);
}

TEST(RunConfig, Errors) {
  auto rc = tiny(fresh_dir("err"));
  rc.configs.clear();
  EXPECT_THROW(sw::run_sweep(rc), alc::ParamError);
  sw::RunConfig bad;
  EXPECT_THROW(sw::merge_json(bad, nlohmann::json::parse(R"({"configs": ["W9"]})")), alc::ParamError);
  EXPECT_THROW(sw::merge_json(bad, nlohmann::json::parse(R"({"repeats": "two"})")), alc::ParamError);
}

TEST(RunConfig, SeedFromEnvironment) {
  alc::eval::Hyperparams hp;
  setenv("ALC_SEED", "1234", 1);
  sw::apply_seed_env(hp);
  EXPECT_EQ(hp.seed, 1234u);
  setenv("ALC_SEED", "12x", 1);
  EXPECT_THROW(sw::apply_seed_env(hp), alc::ParamError);
  unsetenv("ALC_SEED");
}

std::vector<sw::ResultRow> paired_rows(double wo_base, double wa_base, double w18_base) {
  std::vector<sw::ResultRow> rows;
  for (std::uint16_t s = 1; s <= 9; ++s)
    for (std::uint32_t r = 0; r < 2; ++r) {
      const double jitter = s * 0.003 + r * 0.0007;
      rows.push_back({"WO", "cnn_lstm", "random80_20", s, r, 0, wo_base + jitter});
      rows.push_back({"WA", "cnn_lstm", "random80_20", s, r, 0, wa_base + jitter * (1 + s % 3)});
      rows.push_back({"W18", "cnn_lstm", "random80_20", s, r, 0, w18_base + jitter * 2});
    }
  return rows;
}

TEST(Compare, ThreePairsUseCorrectedThreshold) {
  const auto rows = sw::compare(paired_rows(0.7, 0.85, 0.9), "cnn_lstm", sw::default_pairs());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(rows[0].threshold, 0.0167, 1e-4);
  EXPECT_EQ(rows[0].pair, "WO-WA");
  EXPECT_EQ(rows[0].n_effective, 18u);
  EXPECT_EQ(rows[0].method, "exact");
  // every WA score beats its WO partner: W = 0
  EXPECT_EQ(rows[0].w, 0.0);
  EXPECT_TRUE(rows[0].significant);
  const auto csv = sw::comparison_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "pair,n_effective,W,p_value,method,threshold,significant");
}

TEST(Compare, IdenticalScoresAreDegenerate) {
  const auto rows = sw::compare(paired_rows(0.8, 0.8, 0.8), "cnn_lstm", {{"WO", "WO"}});
  EXPECT_EQ(rows[0].method, "degenerate");
  EXPECT_EQ(rows[0].p_value, 1.0);
  EXPECT_FALSE(rows[0].significant);
}

TEST(Compare, MissingKeys) {
  auto rows = paired_rows(0.7, 0.8, 0.9);
  rows.pop_back();  // drop one W18 score
  EXPECT_THROW(sw::compare(rows, "cnn_lstm", sw::default_pairs()), alc::KeyMismatchError);
  EXPECT_THROW(sw::compare(rows, "mlp", sw::default_pairs()), alc::KeyMismatchError);
}

TEST(ResultsCsv, RoundTrip) {
  const auto rows = paired_rows(0.1, 0.2, 1.0 / 3);
  const auto path = fs::temp_directory_path() / "alc_results_roundtrip.csv";
  sw::write_text(path, sw::results_csv(rows));
  const auto back = sw::read_results_csv(path);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].config, rows[i].config);
    EXPECT_EQ(back[i].subject, rows[i].subject);
    EXPECT_EQ(back[i].macro_f1, rows[i].macro_f1);  // shortest round-trip text is exact
  }
  sw::write_text(path, "a,b\n");
  EXPECT_THROW(sw::read_results_csv(path), alc::FormatError);
}

TEST(Digest, SensitiveToData) {
  alc::prep::Dataset a{1, 2, {{{1.f, 2.f}, alc::pamap2::IntensityLevel::Low, 1}}};
  auto b = a;
  b.examples[0].data[1] = 2.5f;
  EXPECT_NE(sw::dataset_digest(a), sw::dataset_digest(b));
  b = a;
  b.examples[0].subject = 2;
  EXPECT_NE(sw::dataset_digest(a), sw::dataset_digest(b));
  EXPECT_EQ(sw::dataset_digest(a), sw::dataset_digest(a));
}

}  // namespace
