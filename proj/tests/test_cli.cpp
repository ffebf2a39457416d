// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "icefm/bench.hpp"
#include "icefm/io.hpp"
#include "support.hpp"

namespace icefm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliResult {
  int code;
  std::string out, err;
};

CliResult icefm(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const json kSynth{{"scene_size", {32, 32}},  {"patch_size", 16},     {"seeds_per_scene", 6},
                  {"scenes_per_domain", 3}, {"val_per_domain", 1}, {"test_per_domain", 1},
                  {"regions", {"east", "west", "canadian_arctic"}}};

json unet_json() { return {{"name", "unet"}, {"arch", "unet"}, {"in_channels", 2}, {"class_count", 6}, {"unet", {{"stage_channels", {3, 4, 5}}}}}; }

json vit_json() {
  return {{"name", "vit"},
          {"arch", "vit_tiny"},
          {"in_channels", 2},
          {"class_count", 6},
          {"vit", {{"patch_size", 4}, {"embed_dim", 8}, {"depth", 2}, {"heads", 2}, {"mlp_ratio", 2}, {"image_size", 16}}}};
}

const json kTrain{{"lr", 1e-3}, {"max_epochs", 1}};

class CliPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testing::temp_dir("cli");
    write_json_file(dir_ / "synth.json", kSynth);
    const CliResult r = icefm({"synth", "--config", (dir_ / "synth.json").string(), "--out", (dir_ / "data").string(), "-v", "0"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  fs::path write_config(const std::string& name, const json& j) {
    write_json_file(dir_ / name, j);
    return dir_ / name;
  }
  fs::path dir_;
};

TEST(Cli, UnknownCommandPrintsUsage) {
  const CliResult r = icefm({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("frobnicate"), std::string::npos);
  EXPECT_NE(r.err.find("bench"), std::string::npos);
  EXPECT_EQ(icefm({}).code, 1);
}

TEST(Cli, MissingConfigNamesThePath) {
  const CliResult r = icefm({"bench", "--config", "/nonexistent/grid.json", "--out", testing::temp_dir("o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nonexistent/grid.json"), std::string::npos);
}

TEST(Cli, InvalidConfigIsAValidationError) {
  const auto dir = testing::temp_dir("c");
  write_text_file(dir / "bad.json", "{not json");
  EXPECT_EQ(icefm({"train", "--config", (dir / "bad.json").string(), "--out", dir.string()}).code, 1);
  write_json_file(dir / "nomodel.json", {{"dataset", "x"}});
  EXPECT_EQ(icefm({"train", "--config", (dir / "nomodel.json").string(), "--out", dir.string()}).code, 1);
  EXPECT_EQ(icefm({"bench", "--config", (dir / "nomodel.json").string(), "--jobs", "0"}).code, 1);
  EXPECT_EQ(icefm({"report", "--in", dir.string(), "--format", "pie"}).code, 1);
}

TEST(Cli, VersionFlag) {
  const CliResult r = icefm({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("0.1.0"), std::string::npos);
}

TEST_F(CliPipeline, SynthThenBenchThenRadar) {
  EXPECT_TRUE(fs::exists(dir_ / "data" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "data" / "provenance.json"));
  const auto grid = write_config("grid.json", {{"dataset", "data/manifest.json"},
                                               {"patches_per_scene", 1},
                                               {"models", {vit_json(), unet_json()}},
                                               {"strategies", {"vpt", "bitfit", "full"}},
                                               {"train", kTrain},
                                               {"seeds", {0, 1}}});
  ::setenv("ICEFM_OUT_DIR", (dir_ / "env_out").c_str(), 1);
  const CliResult r = icefm({"bench", "--config", grid.string(), "-v", "0"});
  ::unsetenv("ICEFM_OUT_DIR");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = dir_ / "env_out";
  const auto rows = read_report(out / "report.csv");
  EXPECT_EQ(rows.size(), 12u);

  const json prov = read_json_file(out / "provenance.json");
  EXPECT_EQ(prov.at("version"), "0.1.0");
  EXPECT_EQ(prov.at("command"), "bench");
  EXPECT_EQ(prov.at("config_hash"), config_hash(read_json_file(out / "resolved_config.json")));
  EXPECT_EQ(read_json_file(out / "resolved_config.json").at("strategies").size(), 3u);

  const CliResult radar = icefm({"report", "--in", (out / "report.csv").string(), "--format", "radar", "--out", (dir_ / "rep").string()});
  ASSERT_EQ(radar.code, 0) << radar.err;
  std::set<std::string> strategies;
  for (const auto& row : rows)
    if (row.status == "ok") strategies.insert(row.strategy);
  const auto table = read_csv(dir_ / "rep" / "radar.csv");
  EXPECT_EQ(table.rows.size(), strategies.size());
  EXPECT_EQ(table.header, (std::vector<std::string>{"strategy", "vit", "unet"}));

  const CliResult t2 = icefm({"report", "--in", out.string(), "--format", "table2", "--out", (dir_ / "rep").string()});
  ASSERT_EQ(t2.code, 0) << t2.err;
  const auto tab = read_csv(dir_ / "rep" / "table2.csv");
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& row : rows)
    if (row.status == "ok") pairs.insert({row.strategy, row.model});
  ASSERT_EQ(tab.rows.size(), pairs.size());
  const std::vector<std::pair<std::string, std::string>> order{{"vpt", "vit"}, {"bitfit", "vit"}, {"bitfit", "unet"}, {"full", "vit"}, {"full", "unet"}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    EXPECT_EQ(tab.rows[i][0], order[i].first);
    EXPECT_EQ(tab.rows[i][1], order[i].second);
  }
  EXPECT_EQ(tab.rows[0][8], "2");
}

TEST_F(CliPipeline, BenchIsIdempotentAndSeedOverrideIsRecorded) {
  const auto grid = write_config("grid.json", {{"dataset", "data/manifest.json"},
                                               {"patches_per_scene", 1},
                                               {"models", {unet_json()}},
                                               {"strategies", {"full"}},
                                               {"train", kTrain},
                                               {"seeds", {0, 1, 2}}});
  const auto a = dir_ / "a", b = dir_ / "b";
  ASSERT_EQ(icefm({"bench", "-c", grid.string(), "-o", a.string(), "--seed", "7", "-v", "0"}).code, 0);
  ASSERT_EQ(icefm({"bench", "-c", grid.string(), "-o", b.string(), "--seed", "7", "-v", "0", "--jobs", "2"}).code, 0);
  EXPECT_EQ(read_text_file(a / "report.csv"), read_text_file(b / "report.csv"));
  EXPECT_EQ(read_text_file(a / "resolved_config.json"), read_text_file(b / "resolved_config.json"));
  const auto rows = read_report(a / "report.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].seed, 7u);
  const json prov = read_json_file(a / "provenance.json");
  EXPECT_EQ(prov.at("seed"), 7);
  EXPECT_TRUE(prov.at("seed_override").get<bool>());
  ASSERT_EQ(icefm({"bench", "-c", grid.string(), "-o", a.string(), "--seed", "7", "-v", "0"}).code, 0);
  EXPECT_EQ(read_text_file(a / "report.csv"), read_text_file(b / "report.csv"));
}

TEST_F(CliPipeline, FailedCellsGiveRuntimeExitCode) {
  const auto m = load_manifest(dir_ / "data" / "manifest.json");
  fs::remove(m.scene_path(m.split("train")[0]));
  const auto grid = write_config("grid.json", {{"dataset", "data/manifest.json"},
                                               {"patches_per_scene", 1},
                                               {"models", {unet_json()}},
                                               {"strategies", {"full"}},
                                               {"train", kTrain}});
  const CliResult r = icefm({"bench", "-c", grid.string(), "-o", (dir_ / "o").string(), "-v", "0"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(read_report(dir_ / "o" / "report.csv")[0].status, "failed");
}

TEST_F(CliPipeline, TrainThenEval) {
  const auto cfg = write_config("train.json", {{"dataset", "data/manifest.json"},
                                               {"patches_per_scene", 1},
                                               {"model", vit_json()},
                                               {"strategy", {{"name", "lora"}, {"lora", {{"rank", 2}}}}},
                                               {"train", kTrain},
                                               {"train_domain", "winter"}});
  const CliResult t = icefm({"train", "-c", cfg.string(), "-o", (dir_ / "run").string(), "-v", "0"});
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"best.ckpt", "history.csv", "metrics.json", "metrics.csv", "efficiency.json", "resolved_config.json", "provenance.json"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  const auto ev = write_config("eval.json", {{"dataset", "data/manifest.json"}, {"checkpoint", "run/best.ckpt"}, {"domain", "winter"}});
  const CliResult e = icefm({"eval", "-c", ev.string(), "-o", (dir_ / "ev").string(), "-v", "0"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("vit,lora,2,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "ev" / "confusion.json"));

  write_text_file(dir_ / "run" / "best.ckpt", "garbage");
  EXPECT_EQ(icefm({"eval", "-c", ev.string(), "-o", (dir_ / "ev2").string(), "-v", "0"}).code, 1);
}

TEST_F(CliPipeline, TransferSweepAndReports) {
  const auto tr = write_config("transfer.json",
                               {{"dataset", "data/manifest.json"}, {"patches_per_scene", 1}, {"axis", "season"}, {"model", unet_json()}, {"train", kTrain}});
  ASSERT_EQ(icefm({"transfer", "-c", tr.string(), "-o", (dir_ / "tr").string(), "-v", "0"}).code, 0);
  const CliResult rep = icefm({"report", "--in", (dir_ / "tr").string(), "--format", "transfer", "-o", (dir_ / "rep").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(read_text_file(dir_ / "rep" / "transfer_matrix.csv"), read_text_file(dir_ / "tr" / "transfer_matrix.csv"));

  const auto sw = write_config("sweep.json", {{"dataset", "data/manifest.json"},
                                              {"patches_per_scene", 1},
                                              {"sizes", {3, 9}},
                                              {"model", unet_json()},
                                              {"train", kTrain},
                                              {"seeds", {0, 1}}});
  ASSERT_EQ(icefm({"datasize", "-c", sw.string(), "-o", (dir_ / "sw").string(), "-v", "0"}).code, 0);
  EXPECT_EQ(read_csv(dir_ / "sw" / "sweep.csv").rows.size(), 4u);
  ASSERT_EQ(icefm({"report", "--in", (dir_ / "sw").string(), "--format", "sweep", "-o", (dir_ / "rep").string()}).code, 0);
  const auto series = read_csv(dir_ / "rep" / "sweep_series.csv");
  ASSERT_EQ(series.rows.size(), 2u);
  EXPECT_EQ(series.rows[0][0], "3");
  EXPECT_EQ(series.rows[0][1], "2");

  const auto big = write_config("big.json", {{"dataset", "data/manifest.json"}, {"patches_per_scene", 1}, {"sizes", {5000}}, {"model", unet_json()}});
  const CliResult err = icefm({"datasize", "-c", big.string(), "-o", (dir_ / "big").string(), "-v", "0"});
  EXPECT_EQ(err.code, 1);
  EXPECT_NE(err.err.find("exceeds"), std::string::npos);

  write_text_file(dir_ / "bad.csv", "model,strategy\nx,y\n");
  EXPECT_EQ(icefm({"report", "--in", (dir_ / "bad.csv").string(), "--format", "radar", "-o", (dir_ / "rep").string()}).code, 1);
}

TEST_F(CliPipeline, DistillProducesTable) {
  json cfg{{"dataset", "data/manifest.json"},
           {"patches_per_scene", 1},
           {"student", unet_json()},
           {"train", kTrain},
           {"experts", {{"model", unet_json()}, {"train", kTrain}, {"patches_per_scene", 1}}}};
  const auto c = write_config("distill.json", cfg);
  const CliResult r = icefm({"distill", "-c", c.string(), "-o", (dir_ / "kd").string(), "-v", "0"});
  // The region axis of this dataset lacks 'north', so the expert set is incomplete.
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("north"), std::string::npos);

  json synth = kSynth;
  synth.erase("regions");
  synth["scenes_per_domain"] = 3;
  write_json_file(dir_ / "synth_all.json", synth);
  ASSERT_EQ(icefm({"synth", "-c", (dir_ / "synth_all.json").string(), "-o", (dir_ / "all").string(), "-v", "0"}).code, 0);
  cfg["dataset"] = "all/manifest.json";
  write_config("distill.json", cfg);
  const CliResult ok = icefm({"distill", "-c", c.string(), "-o", (dir_ / "kd").string(), "-v", "0"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  const auto table = read_csv(dir_ / "kd" / "table4.csv");
  EXPECT_EQ(table.header, (std::vector<std::string>{"model", "f1", "acc", "prec", "rec", "iou"}));
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[1][0], "unet-kd");
  ASSERT_EQ(icefm({"report", "--in", (dir_ / "kd").string(), "--format", "table4", "-o", (dir_ / "rep").string()}).code, 0);
  EXPECT_EQ(read_text_file(dir_ / "rep" / "table4.csv"), read_text_file(dir_ / "kd" / "table4.csv"));
  EXPECT_EQ(icefm({"report", "--in", (dir_ / "kd").string(), "--format", "table4"}).code, 1);
}

}  // namespace
}  // namespace icefm
