// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <unistd.h>

#include <set>

#include "icefm/bench.hpp"
#include "support.hpp"

namespace icefm {
namespace {

namespace fs = std::filesystem;

SynthConfig bench_synth() {
  SynthConfig c;
  c.scene_height = c.scene_width = 32;
  c.patch_size = 16;
  c.seeds_per_scene = 6;
  c.scenes_per_domain = 3;
  c.val_per_domain = 1;
  c.test_per_domain = 1;
  c.regions = {Region::east, Region::west, Region::canadian_arctic};
  return c;
}

ModelSpec vit16() {
  auto s = testing::small_vit_spec(2, 6);
  s.name = "vit";
  s.vit.image_size = 16;
  return s;
}

ModelSpec unet6() {
  auto s = testing::small_unet_spec(2, 6);
  s.name = "unet";
  return s;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.lr = 1e-3;
  t.max_epochs = 2;
  return t;
}

class BenchData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "icefm_tests" / ("bench_dataset_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    generate_dataset(bench_synth(), root_);
  }
  static fs::path manifest() { return root_ / "manifest.json"; }

  static GridSpec grid() {
    GridSpec g;
    g.data = {manifest(), 2, true};
    g.models = {vit16(), unet6()};
    for (auto s : kAllStrategies) g.strategies.push_back({s, {}, {}});
    g.train = quick_train();
    return g;
  }

  static inline fs::path root_;
};

TEST(Report, CsvRoundTrip) {
  BenchRow r;
  r.model = "vit";
  r.strategy = "lora";
  r.seed = 3;
  r.size = 40;
  r.config_hash = "00ff";
  r.note = "a, quoted \"note\"";
  r.metrics.weighted_f1 = 0.5;
  r.metrics.accuracy = 0.625;
  r.metrics.weighted_precision = 0.25;
  r.metrics.weighted_recall = 0.625;
  r.metrics.weighted_iou = 0.125;
  r.trainable_params = 123;
  r.optimizer_state_bytes = 984;
  const auto dir = testing::temp_dir("r");
  write_report(dir / "report.csv", {r});
  const auto back = read_report(dir / "report.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(report_csv_line(back[0]), report_csv_line(r));
  EXPECT_EQ(back[0].note, r.note);
  const std::string header = report_csv_header();
  EXPECT_NE(header.find("f1,acc,prec,rec,iou"), std::string::npos);
}

TEST(Report, RejectsNonNumericCells) {
  const auto dir = testing::temp_dir("bad");
  write_text_file(dir / "report.csv", report_csv_header() + "\nvit,full,2,all,all,1,0,h,ok,,x,0,0,0,0,0,0,0,0\n");
  EXPECT_THROW(read_report(dir / "report.csv"), FormatError);
}

TEST(Stats, MedianAndSubsample) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), ValidationError);
  const auto a = subsample_indices(50, 10, 9);
  const auto b = subsample_indices(50, 20, 9);
  EXPECT_EQ(a, std::vector<std::size_t>(b.begin(), b.begin() + 10));
  EXPECT_EQ(std::set<std::size_t>(b.begin(), b.end()).size(), 20u);
  auto all = subsample_indices(50, 50, 1);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(all[i], i);
  EXPECT_NE(subsample_indices(50, 10, 1), a);
  EXPECT_THROW(subsample_indices(5, 6, 0), ValidationError);
}

TEST_F(BenchData, GridSkipsUnsupportedAndFillsMetrics) {
  const auto out = testing::temp_dir("grid");
  const auto rep = run_grid(grid(), out);
  ASSERT_EQ(rep.rows.size(), 10u);
  EXPECT_EQ(rep.executed, 10);
  int skipped = 0;
  for (const auto& r : rep.rows) {
    if (r.model == "unet" && (r.strategy == "vpt" || r.strategy == "lora")) {
      EXPECT_EQ(r.status, "skipped");
      EXPECT_EQ(r.note, "unsupported-architecture");
      ++skipped;
      continue;
    }
    EXPECT_EQ(r.status, "ok") << r.model << "/" << r.strategy << ": " << r.note;
    EXPECT_GT(r.metrics.total_pixels, 0);
    EXPECT_NEAR(r.metrics.accuracy, r.metrics.weighted_recall, 1e-12);
    EXPECT_GT(r.trainable_params, 0);
    EXPECT_EQ(r.optimizer_state_bytes, 8 * r.trainable_params);
    EXPECT_TRUE(fs::exists(out / "cells" / (r.config_hash + "-s0") / "best.ckpt"));
  }
  EXPECT_EQ(skipped, 2);
  EXPECT_EQ(rep.efficiency.size(), 8u);
  const auto radar = read_csv(out / "radar.csv");
  EXPECT_EQ(radar.header, (std::vector<std::string>{"strategy", "vit", "unet"}));
  ASSERT_EQ(radar.rows.size(), 5u);
  EXPECT_EQ(radar.rows[0][0], "vpt");
  EXPECT_EQ(radar.rows[0][2], "");
  const auto eff = read_csv(out / "efficiency.csv");
  EXPECT_EQ(eff.rows.size(), 8u);
  EXPECT_EQ(eff.header[0], "config_hash");
  const auto t2 = table2_table(rep.rows);
  EXPECT_EQ(t2.rows.size(), 8u);
}

TEST_F(BenchData, GridIsReproducibleAcrossRunsAndJobs) {
  auto g = grid();
  g.models = {vit16()};
  g.seeds = {0, 1};
  const auto a = testing::temp_dir("a"), b = testing::temp_dir("b");
  run_grid(g, a);
  run_grid(g, b, {2, {}});
  EXPECT_EQ(read_text_file(a / "report.csv"), read_text_file(b / "report.csv"));
  EXPECT_EQ(read_text_file(a / "radar.csv"), read_text_file(b / "radar.csv"));
}

TEST_F(BenchData, GridResumesMissingAndFailedCells) {
  auto g = grid();
  g.models = {vit16()};
  const auto fresh = testing::temp_dir("fresh");
  run_grid(g, fresh);
  const std::string expected = read_text_file(fresh / "report.csv");

  const auto out = testing::temp_dir("resume");
  auto rows = read_report(fresh / "report.csv");
  rows.resize(2);
  write_report(out / "report.csv", rows);
  auto rep = run_grid(g, out);
  EXPECT_EQ(rep.executed, 3);
  EXPECT_EQ(read_text_file(out / "report.csv"), expected);
  rep = run_grid(g, out);
  EXPECT_EQ(rep.executed, 0);
  EXPECT_EQ(read_text_file(out / "report.csv"), expected);

  rows = read_report(fresh / "report.csv");
  rows[1].status = "failed";
  rows[1].note = "interrupted";
  write_report(out / "report.csv", rows);
  rep = run_grid(g, out);
  EXPECT_EQ(rep.executed, 1);
  EXPECT_EQ(read_text_file(out / "report.csv"), expected);
}

TEST_F(BenchData, FailingCellIsRecordedNotFatal) {
  const auto data = testing::temp_dir("data");
  auto m = generate_dataset(bench_synth(), data);
  fs::remove(m.scene_path(m.split("train")[0]));
  auto g = grid();
  g.data.manifest = data / "manifest.json";
  g.models = {unet6()};
  g.strategies = {{Strategy::full, {}, {}}};
  const auto rep = run_grid(g, testing::temp_dir("out"));
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].status, "failed");
  EXPECT_FALSE(rep.rows[0].note.empty());
}

TEST_F(BenchData, GridRejectsIncompatibleModel) {
  auto g = grid();
  g.models[0].vit.image_size = 32;
  EXPECT_THROW(run_grid(g, testing::temp_dir("x")), ValidationError);
  g = grid();
  g.models[1].class_count = 4;
  EXPECT_THROW(run_grid(g, testing::temp_dir("y")), ValidationError);
}

TEST_F(BenchData, SeasonTransferMatrix) {
  TransferSpec t;
  t.data = {manifest(), 2, true};
  t.base = unet6();
  t.train = quick_train();
  t.train.max_epochs = 1;
  t.seeds = {0, 1};
  const auto out = testing::temp_dir("season");
  const auto res = run_transfer(t, out);
  EXPECT_EQ(res.train_domains, (std::vector<std::string>{"spring", "summer", "fall", "winter"}));
  EXPECT_EQ(res.test_domains, (std::vector<std::string>{"spring", "summer", "fall", "winter", "all"}));
  EXPECT_EQ(res.rows.size(), 40u);
  const auto med = res.median_f1();
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(med[a][b], median({res.f1[0][a][b], res.f1[1][a][b]}));
  const auto matrix = read_csv(out / "transfer_matrix.csv");
  EXPECT_EQ(matrix.rows.size(), 4u);
  EXPECT_EQ(matrix.header.size(), 6u);
  const auto lng = read_csv(out / "transfer_long.csv");
  EXPECT_EQ(lng.rows.size(), 40u);
  EXPECT_TRUE(lng.has_column("f1_open_water"));
  EXPECT_TRUE(lng.has_column("f1_old_ice"));
}

TEST_F(BenchData, RegionTransferDefaultsAndErrors) {
  TransferSpec t;
  t.data = {manifest(), 1, false};
  t.axis = TransferAxis::region;
  t.base = unet6();
  t.train = quick_train();
  t.train.max_epochs = 1;
  const auto res = run_transfer(t, {});
  EXPECT_EQ(res.train_domains, (std::vector<std::string>{"east", "west", "canadian_arctic"}));
  EXPECT_EQ(res.test_domains.size(), 4u);
  EXPECT_EQ(res.rows.size(), 12u);

  t.train_domains = {"north"};
  t.test_domains = {};
  EXPECT_THROW(run_transfer(t, {}), ValidationError);
  t.train_domains = {"all"};
  EXPECT_THROW(t.resolve(), ValidationError);
  t.train_domains = {"winter"};
  EXPECT_THROW(t.resolve(), ValidationError);
}

TEST_F(BenchData, SweepSizesAndPool) {
  SweepSpec s;
  s.data = {manifest(), 1, true};
  s.base = unet6();
  s.train = quick_train();
  s.train.max_epochs = 1;
  s.sizes = {4, 12};
  const auto out = testing::temp_dir("sweep");
  const auto pts = run_sweep(s, out);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].size, 4);
  EXPECT_EQ(pts[1].size, 12);
  EXPECT_EQ(read_csv(out / "sweep.csv").rows.size(), 2u);
  const auto rows = read_report(out / "report.csv");
  EXPECT_EQ(rows[1].size, 12);

  s.sizes = {4, 4};
  EXPECT_THROW(s.validate(), ValidationError);
  s.sizes = {};
  EXPECT_THROW(s.validate(), ValidationError);
  s.sizes = {4, 5000};
  try {
    run_sweep(s, {});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("5000"), std::string::npos);
  }
}

TEST(GridSpecJson, DefaultsAndValidation) {
  const nlohmann::json j{{"dataset", "data/manifest.json"}, {"models", {to_json(vit16())}}, {"seeds", {0, 1}}};
  const auto g = grid_spec_from_json(j, "/runs");
  EXPECT_EQ(g.data.manifest, fs::path("/runs/data/manifest.json"));
  EXPECT_EQ(g.strategies.size(), 5u);
  EXPECT_EQ(g.seeds, (std::vector<std::uint64_t>{0, 1}));
  const auto again = grid_spec_from_json(to_json(g));
  EXPECT_EQ(again.models, g.models);

  auto dup = j;
  dup["models"].push_back(to_json(vit16()));
  EXPECT_THROW(grid_spec_from_json(dup), ValidationError);
  auto nodata = j;
  nodata.erase("dataset");
  EXPECT_THROW(grid_spec_from_json(nodata), ValidationError);
  auto badstrat = j;
  badstrat["strategies"] = {"prefix"};
  EXPECT_THROW(grid_spec_from_json(badstrat), ValidationError);
}

}  // namespace
}  // namespace icefm
