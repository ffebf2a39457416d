// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "icefm/io.hpp"
#include "icefm/sardata.hpp"
#include "support.hpp"

namespace icefm {
namespace {

SynthConfig tiny_config() {
  SynthConfig c;
  c.scene_height = 32;
  c.scene_width = 40;
  c.patch_size = 16;
  c.seeds_per_scene = 6;
  return c;
}

double mean_of(const FloatRaster& r) {
  double s = 0.0;
  for (float v : r.data) s += v;
  return s / static_cast<double>(r.size());
}

TEST(Synth, SceneIsDeterministicAndValid) {
  const auto cfg = tiny_config();
  const auto a = synthesize_scene(cfg, Season::winter, Region::west, 1);
  const auto b = synthesize_scene(cfg, Season::winter, Region::west, 1);
  const auto c = synthesize_scene(cfg, Season::winter, Region::west, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.hh, c.hh);
  a.validate();
  EXPECT_EQ(a.height(), 32);
  EXPECT_EQ(a.width(), 40);
  EXPECT_EQ(a.scene_id, scene_id_for(Season::winter, Region::west, 1));
  std::set<int> classes;
  for (auto v : a.labels.data) classes.insert(v);
  EXPECT_TRUE(classes.count(kIgnoreLabel)) << "border pixels are ignored";
  for (int v : classes) EXPECT_TRUE(v < 6 || v == kIgnoreLabel);
  for (float v : a.hh.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Synth, ShiftHeavyPresetSeparatesSeasons) {
  auto cfg = SynthConfig::preset("shift_heavy");
  cfg.scene_height = cfg.scene_width = 48;
  const double spring = mean_of(synthesize_scene(cfg, Season::spring, Region::east, 0).hh);
  const double winter = mean_of(synthesize_scene(cfg, Season::winter, Region::east, 0).hh);
  EXPECT_GT(std::abs(winter - spring), 4.0);
  EXPECT_NE(cfg.priors_for(Season::summer, Region::east), cfg.priors_for(Season::winter, Region::east));
  EXPECT_EQ(SynthConfig::preset("shift_free").offset_for(Season::winter, Region::north), 0.0);
  EXPECT_THROW(SynthConfig::preset("nope"), ValidationError);
}

TEST(Synth, ConfigValidationAndJson) {
  auto cfg = tiny_config();
  EXPECT_EQ(synth_config_from_json(to_json(cfg)).scene_width, 40);
  cfg.val_per_domain = 2;
  cfg.test_per_domain = 1;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.patch_size = 64;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.speckle_looks = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(SceneFile, RoundTripAndCorruption) {
  const auto dir = testing::temp_dir("scene");
  const auto scene = synthesize_scene(tiny_config(), Season::fall, Region::north, 0);
  write_scene(scene, dir / "a.icescene");
  EXPECT_EQ(load_scene(dir / "a.icescene"), scene);
  EXPECT_THROW(load_scene(dir / "a.icescene", 4), FormatError);

  std::string bytes = read_text_file(dir / "a.icescene");
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write_text_file(dir / "b.icescene", flipped);
  EXPECT_THROW(load_scene(dir / "b.icescene"), FormatError);
  write_text_file(dir / "c.icescene", bytes.substr(0, bytes.size() - 20));
  EXPECT_THROW(load_scene(dir / "c.icescene"), FormatError);
  write_text_file(dir / "d.icescene", "ICE");
  EXPECT_THROW(load_scene(dir / "d.icescene"), FormatError);
  EXPECT_THROW(load_scene(dir / "missing.icescene"), std::exception);
}

TEST(Dataset, TwoScenesPerDomainGivesThirtyTwo) {
  const auto dir = testing::temp_dir("ds");
  auto cfg = tiny_config();
  const auto m = generate_dataset(cfg, dir);
  EXPECT_EQ(m.scenes.size(), 32u);
  EXPECT_EQ(m.split("train").size(), 32u);
  for (auto s : kSeasons) EXPECT_EQ(m.split("train", s).size(), 8u);
  for (auto r : kRegions) EXPECT_EQ(m.split("train", std::nullopt, r).size(), 8u);
  EXPECT_EQ(m.split("train", Season::winter, Region::east).size(), 2u);
  EXPECT_TRUE(m.split("test").empty());
  const auto loaded = load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded.scenes.size(), 32u);
  EXPECT_EQ(loaded.hh.mean, m.hh.mean);
  EXPECT_EQ(loaded.root, dir);
  EXPECT_GT(m.hh.std, 0.0);
  EXPECT_NEAR(m.ratio.mean, m.hh.mean - m.hv.mean, 1e-6);
  EXPECT_EQ(load_scene(loaded.scene_path(loaded.scene(m.scenes[5].scene_id))), synthesize_scene(cfg, m.scenes[5].season, m.scenes[5].region, 1));
}

TEST(Dataset, HeldOutScenesPerDomain) {
  const auto dir = testing::temp_dir("ds");
  auto cfg = tiny_config();
  cfg.scenes_per_domain = 3;
  cfg.val_per_domain = 1;
  cfg.test_per_domain = 1;
  cfg.seasons = {Season::spring, Season::summer};
  cfg.regions = {Region::east};
  const auto m = generate_dataset(cfg, dir);
  EXPECT_EQ(m.split("train").size(), 2u);
  EXPECT_EQ(m.split("val").size(), 2u);
  EXPECT_EQ(m.split("test", Season::summer).size(), 1u);
  EXPECT_THROW(m.split("bogus"), ValidationError);
}

TEST(Manifest, ValidationRejectsUnknownScene) {
  DatasetManifest m;
  m.scenes.push_back({"a", "scenes/a.icescene", Season::spring, Region::east});
  m.splits["train"] = {"b"};
  EXPECT_THROW(m.validate(), ValidationError);
  m.splits["train"] = {"a"};
  m.hv.std = 0.0;
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Channels, ThreeChannelModeAddsDifference) {
  const auto scene = synthesize_scene(tiny_config(), Season::spring, Region::east, 0);
  const auto two = adapt_channels(scene, ChannelMode::two_channel);
  const auto three = adapt_channels(scene, ChannelMode::three_channel);
  ASSERT_EQ(two.channels, 2);
  ASSERT_EQ(three.channels, 3);
  EXPECT_EQ(three.at(0, 3, 4), scene.hh(3, 4));
  EXPECT_EQ(three.at(1, 3, 4), scene.hv(3, 4));
  EXPECT_FLOAT_EQ(three.at(2, 3, 4), scene.hh(3, 4) - scene.hv(3, 4));
  const auto stats = channel_statistics({scene});
  EXPECT_NEAR(stats[0].mean, mean_of(scene.hh), 1e-4);
  EXPECT_EQ(channel_mode_for(3), ChannelMode::three_channel);
  EXPECT_THROW(channel_mode_for(4), ValidationError);
}

TEST(Patches, TilingDropsRemainders) {
  const auto dir = testing::temp_dir("ds");
  auto cfg = tiny_config();
  cfg.seasons = {Season::spring};
  cfg.regions = {Region::east};
  const auto m = generate_dataset(cfg, dir);
  const auto scene = load_scene(m.scene_path(m.scenes[0]));
  Rng rng(1);
  const auto tiles = extract_patches(scene, m, PatchMode::tiled_eval, 0, false, ChannelMode::two_channel, rng);
  ASSERT_EQ(tiles.size(), 4u);  // 32x40 with 16-pixel tiles: 2 rows x 2 cols
  EXPECT_EQ(tiles[3].row, 16);
  EXPECT_EQ(tiles[3].col, 16);
  EXPECT_EQ(tiles[1].labels(0, 0), scene.labels(0, 16));
  EXPECT_FLOAT_EQ(tiles[1].channels.at(0, 2, 3), static_cast<float>((scene.hh(2, 19) - m.hh.mean) / m.hh.std));

  const auto crops = extract_patches(scene, m, PatchMode::random_train, 7, true, ChannelMode::three_channel, rng);
  ASSERT_EQ(crops.size(), 7u);
  EXPECT_EQ(crops[0].channels.channels, 3);
  EXPECT_EQ(crops[0].labels.height, 16);
  EXPECT_THROW(extract_patches(scene, m, PatchMode::random_train, 0, false, ChannelMode::two_channel, rng), ValidationError);
  auto big = m;
  big.patch_size = 64;
  EXPECT_THROW(extract_patches(scene, big, PatchMode::tiled_eval, 0, false, ChannelMode::two_channel, rng), ValidationError);
}

TEST(Augment, RotationMatchesCounterClockwiseConvention) {
  Raster<int> r(2, 3);
  r.data = {1, 2, 3, 4, 5, 6};
  const auto q = rotate90(Raster<std::uint8_t>(2, 3), 1);
  EXPECT_EQ(q.height, 3);
  Raster<float> f(2, 3);
  for (int i = 0; i < 6; ++i) f.data[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
  const auto rot = rotate90(f, 1);
  EXPECT_EQ(rot.data, (std::vector<float>{3, 6, 2, 5, 1, 4}));
  EXPECT_EQ(rotate90(f, 4), f);
  EXPECT_EQ(rotate90(rotate90(f, 1), 3), f);
  EXPECT_EQ(flip_horizontal(f).data, (std::vector<float>{3, 2, 1, 6, 5, 4}));
  EXPECT_EQ(flip_vertical(f).data, (std::vector<float>{4, 5, 6, 1, 2, 3}));
}

TEST(Augment, ChannelsAndLabelsMoveTogether) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Patch p;
    p.labels = testing::random_labels(6, 6, 6, rng, 0.1);
    p.channels = Planes<float>(2, 6, 6);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        p.channels.at(0, y, x) = p.labels(y, x);
        p.channels.at(1, y, x) = -static_cast<float>(p.labels(y, x));
      }
    augment_patch(p, rng);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        EXPECT_EQ(p.channels.at(0, y, x), p.labels(y, x));
        EXPECT_EQ(p.channels.at(1, y, x), -static_cast<float>(p.labels(y, x)));
      }
  }
}

}  // namespace
}  // namespace icefm
