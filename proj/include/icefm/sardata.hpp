// SPDX-License-Identifier: Apache-2.0
//
// Dual-polarization scene model, synthetic domain-shifted scene generator,
// the scene/manifest containers, and patch extraction.
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icefm/errors.hpp"
#include "icefm/rng.hpp"
#include "icefm/tensor.hpp"

namespace icefm {

enum class Season { spring, summer, fall, winter };
enum class Region { east, west, canadian_arctic, north };

inline constexpr std::array<Season, 4> kSeasons{Season::spring, Season::summer, Season::fall, Season::winter};
inline constexpr std::array<Region, 4> kRegions{Region::east, Region::west, Region::canadian_arctic, Region::north};

std::string to_string(Season s);
std::string to_string(Region r);
Season season_from_string(const std::string& s);
Region region_from_string(const std::string& s);

/// Default class names for the six stage-of-development classes.
inline const std::array<const char*, 6> kIceClassNames{"open_water", "new_ice", "young_ice", "thin_fyi", "thick_fyi", "old_ice"};

struct Scene {
  FloatRaster hh;  // backscatter, dB
  FloatRaster hv;  // backscatter, dB
  LabelRaster labels;
  Season season = Season::spring;
  Region region = Region::east;
  std::string scene_id;
  int class_count = 6;

  [[nodiscard]] int height() const { return labels.height; }
  [[nodiscard]] int width() const { return labels.width; }
  /// Throws FormatError if rasters disagree in shape or a label is out of range.
  void validate() const;

  friend bool operator==(const Scene&, const Scene&) = default;
};

enum class ChannelMode { two_channel, three_channel };

inline int channel_count(ChannelMode m) { return m == ChannelMode::two_channel ? 2 : 3; }
inline ChannelMode channel_mode_for(int in_channels) {
  if (in_channels == 2) return ChannelMode::two_channel;
  if (in_channels == 3) return ChannelMode::three_channel;
  throw ValidationError("in_channels must be 2 or 3");
}

struct ChannelStat {
  double mean = 0.0;
  double std = 1.0;
};

struct SceneRef {
  std::string scene_id;
  std::string file;  // relative to the manifest directory
  Season season = Season::spring;
  Region region = Region::east;
};

struct DatasetManifest {
  std::vector<SceneRef> scenes;
  ChannelStat hh, hv, ratio;  // ratio = HH - HV in dB
  int class_count = 6;
  int patch_size = 64;
  std::map<std::string, std::vector<std::string>> splits;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  /// Throws ValidationError if a split names an unknown scene or a std is not positive.
  void validate() const;
  [[nodiscard]] const SceneRef& scene(const std::string& id) const;
  [[nodiscard]] std::filesystem::path scene_path(const SceneRef& ref) const { return root / ref.file; }
  /// Scenes of a split, optionally restricted to one season or region.
  [[nodiscard]] std::vector<SceneRef> split(const std::string& name, std::optional<Season> season = std::nullopt,
                                            std::optional<Region> region = std::nullopt) const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

/// Parameters of the synthetic generator. Per-domain tables are keyed
/// "season:region"; "*" matches any season or region and the most specific
/// key wins ("winter:east" > "winter:*" > "*:east" > "*:*").
struct SynthConfig {
  int scenes_per_domain = 2;
  int val_per_domain = 0;   // taken from scenes_per_domain
  int test_per_domain = 0;  // taken from scenes_per_domain
  int scene_height = 128;
  int scene_width = 128;
  int seeds_per_scene = 24;
  int class_count = 6;
  int patch_size = 64;
  std::map<std::string, std::vector<double>> class_priors{{"*:*", {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 - 5.0 / 6}}};
  std::vector<std::array<double, 2>> class_backscatter{  // (mu_HH, mu_HV) dB per class
      {-22.0, -31.0}, {-19.0, -28.5}, {-13.5, -24.5}, {-17.0, -26.0}, {-15.0, -22.0}, {-10.5, -19.5}};
  std::map<std::string, double> domain_offset;           // dB added to both channels
  double texture_db = 1.0;                               // std of the smooth texture field
  int texture_radius = 4;                                // box-blur radius of the texture field
  double speckle_looks = 4.4;
  int ignore_border = 2;
  std::uint64_t rng_seed = 7;
  std::vector<Season> seasons{kSeasons.begin(), kSeasons.end()};
  std::vector<Region> regions{kRegions.begin(), kRegions.end()};

  /// Throws ValidationError naming the offending field.
  void validate() const;
  [[nodiscard]] const std::vector<double>& priors_for(Season s, Region r) const;
  [[nodiscard]] double offset_for(Season s, Region r) const;

  /// Named presets: "shift_free" (the defaults: no domain structure) and "shift_heavy"
  /// (season/region-specific class mixes and large backscatter offsets).
  static SynthConfig preset(const std::string& name);
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// Deterministic scene for (cfg, season, region, index).
Scene synthesize_scene(const SynthConfig& cfg, Season season, Region region, int index);
std::string scene_id_for(Season season, Region region, int index);

/// Writes every scene plus manifest.json into out_dir.
DatasetManifest generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Scene container; see docs/formats.md.
void write_scene(const Scene& scene, const std::filesystem::path& file);
Scene load_scene(const std::filesystem::path& file, std::optional<int> expected_class_count = std::nullopt);

/// [HH, HV] or [HH, HV, HH-HV] in dB, un-normalized.
Planes<float> adapt_channels(const Scene& scene, ChannelMode mode);

/// Statistics of HH, HV and HH-HV over all pixels of the given scenes.
std::array<ChannelStat, 3> channel_statistics(const std::vector<Scene>& scenes);

struct Patch {
  Planes<float> channels;  // normalized
  LabelRaster labels;
  std::string source_scene;
  int row = 0;
  int col = 0;
};

enum class PatchMode { random_train, tiled_eval };

/// Random crops (optionally augmented) or non-overlapping tiles with
/// right/bottom remainders dropped. Channels are normalized with the manifest
/// statistics; labels are only permuted, never resampled.
std::vector<Patch> extract_patches(const Scene& scene, const DatasetManifest& manifest, PatchMode mode, int count, bool augment,
                                   ChannelMode channels, Rng& rng);

/// Loads each scene and extracts its patches. Every scene draws from its own
/// generator seeded by (seed, scene_id), so results do not depend on order.
std::vector<Patch> load_patches(const DatasetManifest& manifest, const std::vector<SceneRef>& scenes, PatchMode mode, int per_scene,
                                bool augment, ChannelMode channels, std::uint64_t seed);

/// Counter-clockwise rotation by quarter_turns·90°.
template <typename T>
Raster<T> rotate90(const Raster<T>& in, int quarter_turns);
template <typename T>
Raster<T> flip_horizontal(const Raster<T>& in);
template <typename T>
Raster<T> flip_vertical(const Raster<T>& in);

/// Applies the random flip/rotation draw to every channel and the labels.
void augment_patch(Patch& patch, Rng& rng);

}  // namespace icefm
