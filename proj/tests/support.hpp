// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit tests.
#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "icefm/model.hpp"
#include "icefm/rng.hpp"
#include "icefm/sardata.hpp"
#include "icefm/tensor.hpp"

namespace icefm::testing {

template <typename S>
Planes<S> random_planes(int c, int h, int w, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Planes<S> p(c, h, w);
  for (Eigen::Index i = 0; i < p.data.size(); ++i) p.data.data()[i] = static_cast<S>(n(rng));
  return p;
}

/// Labels in [0, k) with roughly ignore_fraction of pixels set to 255.
inline LabelRaster random_labels(int h, int w, int k, Rng& rng, double ignore_fraction = 0.0) {
  std::uniform_int_distribution<int> cls(0, k - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelRaster l(h, w);
  for (auto& v : l.data) v = u(rng) < ignore_fraction ? kIgnoreLabel : static_cast<std::uint8_t>(cls(rng));
  return l;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "icefm_tests" / (std::string(info ? info->test_suite_name() : "x") + "_" +
                                                                        (info ? info->name() : "x") + "_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Relative error with an absolute floor, for finite-difference checks.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline ModelSpec small_vit_spec(int in_channels = 2, int classes = 3) {
  ModelSpec s;
  s.name = "vit_small";
  s.kind = ArchKind::vit_tiny;
  s.in_channels = in_channels;
  s.class_count = classes;
  s.vit.patch_size = 4;
  s.vit.embed_dim = 8;
  s.vit.depth = 2;
  s.vit.heads = 2;
  s.vit.mlp_ratio = 2;
  s.vit.image_size = 8;
  return s;
}

inline ModelSpec small_unet_spec(int in_channels = 2, int classes = 3) {
  ModelSpec s;
  s.name = "unet_small";
  s.kind = ArchKind::unet;
  s.in_channels = in_channels;
  s.class_count = classes;
  s.unet.stage_channels = {3, 4, 5};
  return s;
}

/// Random training crops from in-memory synthetic scenes of every domain in cfg.
inline std::vector<Patch> synthetic_patches(const SynthConfig& cfg, int per_scene, std::uint64_t seed, ChannelMode mode = ChannelMode::two_channel,
                                            PatchMode patch_mode = PatchMode::random_train, int first_index = 0) {
  std::vector<Scene> scenes;
  for (auto s : cfg.seasons)
    for (auto r : cfg.regions)
      for (int i = 0; i < cfg.scenes_per_domain; ++i) scenes.push_back(synthesize_scene(cfg, s, r, first_index + i));
  DatasetManifest m;
  m.patch_size = cfg.patch_size;
  const auto stats = channel_statistics(scenes);
  m.hh = stats[0];
  m.hv = stats[1];
  m.ratio = stats[2];
  Rng rng(seed);
  std::vector<Patch> out;
  for (const auto& sc : scenes)
    for (auto& p : extract_patches(sc, m, patch_mode, per_scene, patch_mode == PatchMode::random_train, mode, rng)) out.push_back(std::move(p));
  return out;
}

}  // namespace icefm::testing
