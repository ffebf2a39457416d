// SPDX-License-Identifier: Apache-2.0
#include "icefm/sardata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "icefm/io.hpp"

namespace icefm {

namespace fs = std::filesystem;

std::string to_string(Season s) {
  switch (s) {
    case Season::spring: return "spring";
    case Season::summer: return "summer";
    case Season::fall: return "fall";
    case Season::winter: return "winter";
  }
  return "?";
}

std::string to_string(Region r) {
  switch (r) {
    case Region::east: return "east";
    case Region::west: return "west";
    case Region::canadian_arctic: return "canadian_arctic";
    case Region::north: return "north";
  }
  return "?";
}

Season season_from_string(const std::string& s) {
  for (auto v : kSeasons)
    if (to_string(v) == s) return v;
  throw ValidationError("unknown season '" + s + "'");
}

Region region_from_string(const std::string& s) {
  for (auto v : kRegions)
    if (to_string(v) == s) return v;
  throw ValidationError("unknown region '" + s + "'");
}

void Scene::validate() const {
  if (hh.height != labels.height || hh.width != labels.width || hv.height != labels.height || hv.width != labels.width)
    throw FormatError("scene " + scene_id + ": hh/hv/labels dimensions differ");
  if (class_count < 1 || class_count > 254) throw FormatError("scene " + scene_id + ": invalid class_count");
  for (auto v : labels.data)
    if (v != kIgnoreLabel && v >= class_count)
      throw FormatError("scene " + scene_id + ": label value " + std::to_string(v) + " outside 0.." + std::to_string(class_count - 1) + " and not 255");
}

// ------------------------------------------------------------------ manifest

void DatasetManifest::validate() const {
  if (class_count < 1 || class_count > 254) throw ValidationError("manifest.class_count must be in [1, 254]");
  if (patch_size < 1) throw ValidationError("manifest.patch_size must be >= 1");
  for (const auto* s : {&hh, &hv, &ratio})
    if (!(s->std > 0.0) || !std::isfinite(s->mean)) throw ValidationError("manifest.channel_stats: std must be > 0");
  std::map<std::string, int> known;
  for (const auto& s : scenes)
    if (!known.emplace(s.scene_id, 0).second) throw ValidationError("manifest.scenes: duplicate scene id '" + s.scene_id + "'");
  for (const auto& [name, ids] : splits)
    for (const auto& id : ids)
      if (!known.count(id)) throw ValidationError("manifest.splits." + name + " references unknown scene '" + id + "'");
}

const SceneRef& DatasetManifest::scene(const std::string& id) const {
  for (const auto& s : scenes)
    if (s.scene_id == id) return s;
  throw ValidationError("unknown scene id '" + id + "'");
}

std::vector<SceneRef> DatasetManifest::split(const std::string& name, std::optional<Season> season, std::optional<Region> region) const {
  std::vector<SceneRef> out;
  auto it = splits.find(name);
  if (it == splits.end()) throw ValidationError("manifest has no split named '" + name + "'");
  for (const auto& id : it->second) {
    const auto& ref = scene(id);
    if (season && ref.season != *season) continue;
    if (region && ref.region != *region) continue;
    out.push_back(ref);
  }
  return out;
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "icefm-manifest";
  j["version"] = 1;
  j["class_count"] = m.class_count;
  j["patch_size"] = m.patch_size;
  auto stat = [](const ChannelStat& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.std}}; };
  j["channel_stats"] = {{"hh", stat(m.hh)}, {"hv", stat(m.hv)}, {"hh_minus_hv", stat(m.ratio)}};
  j["scenes"] = nlohmann::json::array();
  for (const auto& s : m.scenes)
    j["scenes"].push_back({{"scene_id", s.scene_id}, {"file", s.file}, {"season", to_string(s.season)}, {"region", to_string(s.region)}});
  j["splits"] = m.splits;
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.class_count = j.at("class_count").get<int>();
    m.patch_size = j.at("patch_size").get<int>();
    const auto& cs = j.at("channel_stats");
    auto stat = [](const nlohmann::json& s) { return ChannelStat{s.at("mean").get<double>(), s.at("std").get<double>()}; };
    m.hh = stat(cs.at("hh"));
    m.hv = stat(cs.at("hv"));
    m.ratio = stat(cs.at("hh_minus_hv"));
    for (const auto& s : j.at("scenes"))
      m.scenes.push_back({s.at("scene_id").get<std::string>(), s.at("file").get<std::string>(), season_from_string(s.at("season").get<std::string>()),
                          region_from_string(s.at("region").get<std::string>())});
    m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
}

void save_manifest(const DatasetManifest& m, const fs::path& file) { write_json_file(file, to_json(m)); }

DatasetManifest load_manifest(const fs::path& file) {
  DatasetManifest m = manifest_from_json(read_json_file(file));
  m.root = file.parent_path();
  return m;
}

// ------------------------------------------------------------- synth config

namespace {

template <typename V>
const V* lookup_domain(const std::map<std::string, V>& table, Season s, Region r) {
  for (const auto& key : {to_string(s) + ":" + to_string(r), to_string(s) + ":*", "*:" + to_string(r), std::string("*:*")}) {
    auto it = table.find(key);
    if (it != table.end()) return &it->second;
  }
  return nullptr;
}

void check_domain_key(const std::string& field, const std::string& key) {
  const auto colon = key.find(':');
  if (colon == std::string::npos) throw ValidationError(field + ": key '" + key + "' must look like 'season:region'");
  const auto s = key.substr(0, colon), r = key.substr(colon + 1);
  try {
    if (s != "*") season_from_string(s);
    if (r != "*") region_from_string(r);
  } catch (const ValidationError&) {
    throw ValidationError(field + ": key '" + key + "' names an unknown season or region");
  }
}

}  // namespace

const std::vector<double>& SynthConfig::priors_for(Season s, Region r) const {
  const auto* p = lookup_domain(class_priors, s, r);
  if (!p) throw ValidationError("class_priors: no entry covers " + to_string(s) + ":" + to_string(r));
  return *p;
}

double SynthConfig::offset_for(Season s, Region r) const {
  const auto* p = lookup_domain(domain_offset, s, r);
  return p ? *p : 0.0;
}

void SynthConfig::validate() const {
  if (scenes_per_domain < 1) throw ValidationError("scenes_per_domain must be >= 1");
  if (val_per_domain < 0 || test_per_domain < 0) throw ValidationError("val_per_domain/test_per_domain must be >= 0");
  if (scenes_per_domain - val_per_domain - test_per_domain < 1)
    throw ValidationError("scenes_per_domain must leave at least one training scene after val_per_domain and test_per_domain");
  if (patch_size < 1) throw ValidationError("patch_size must be >= 1");
  if (scene_height < patch_size || scene_width < patch_size) throw ValidationError("scene_size must be >= patch_size");
  if (seeds_per_scene < 1) throw ValidationError("seeds_per_scene must be >= 1");
  if (class_count < 1 || class_count > 254) throw ValidationError("class_count must be in [1, 254]");
  if (!(speckle_looks > 0.0)) throw ValidationError("speckle_looks must be > 0");
  if (texture_db < 0.0) throw ValidationError("texture_db must be >= 0");
  if (texture_radius < 0) throw ValidationError("texture_radius must be >= 0");
  if (ignore_border < 0 || 2 * ignore_border >= std::min(scene_height, scene_width)) throw ValidationError("ignore_border out of range");
  if (static_cast<int>(class_backscatter.size()) != class_count) throw ValidationError("class_backscatter must have class_count entries");
  if (seasons.empty() || regions.empty()) throw ValidationError("seasons/regions must not be empty");
  for (const auto& [key, priors] : class_priors) {
    check_domain_key("class_priors", key);
    if (static_cast<int>(priors.size()) != class_count) throw ValidationError("class_priors[" + key + "] must have class_count entries");
    double sum = 0.0;
    for (double p : priors) {
      if (p < 0.0) throw ValidationError("class_priors[" + key + "] has a negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("class_priors[" + key + "] must sum to 1");
  }
  for (const auto& [key, v] : domain_offset) {
    check_domain_key("domain_offset", key);
    if (!std::isfinite(v)) throw ValidationError("domain_offset[" + key + "] must be finite");
  }
  for (auto s : seasons)
    for (auto r : regions) (void)priors_for(s, r);
}

SynthConfig SynthConfig::preset(const std::string& name) {
  SynthConfig c;
  if (name == "shift_free") return c;
  if (name == "shift_heavy") {
    c.class_priors.clear();
    // Each season favours a different part of the ice-type range and shifts
    // backscatter strongly; regions add a milder offset.
    c.class_priors["spring:*"] = {0.30, 0.05, 0.05, 0.25, 0.30, 0.05};
    c.class_priors["summer:*"] = {0.55, 0.02, 0.03, 0.15, 0.15, 0.10};
    c.class_priors["fall:*"] = {0.25, 0.35, 0.20, 0.10, 0.05, 0.05};
    c.class_priors["winter:*"] = {0.05, 0.15, 0.45, 0.15, 0.10, 0.10};
    c.domain_offset["spring:*"] = 0.0;
    c.domain_offset["summer:*"] = 5.0;
    c.domain_offset["fall:*"] = -5.0;
    c.domain_offset["winter:*"] = 9.0;
    for (const auto& [season, base] : std::map<std::string, double>{{"spring", 0.0}, {"summer", 5.0}, {"fall", -5.0}, {"winter", 9.0}}) {
      c.domain_offset[season + ":west"] = base - 1.5;
      c.domain_offset[season + ":canadian_arctic"] = base + 1.5;
      c.domain_offset[season + ":north"] = base + 0.75;
    }
    return c;
  }
  throw ValidationError("unknown synth preset '" + name + "'");
}

nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json j;
  j["scenes_per_domain"] = c.scenes_per_domain;
  j["val_per_domain"] = c.val_per_domain;
  j["test_per_domain"] = c.test_per_domain;
  j["scene_size"] = {c.scene_height, c.scene_width};
  j["seeds_per_scene"] = c.seeds_per_scene;
  j["class_count"] = c.class_count;
  j["patch_size"] = c.patch_size;
  j["class_priors"] = c.class_priors;
  j["class_backscatter"] = c.class_backscatter;
  j["domain_offset"] = c.domain_offset;
  j["texture_db"] = c.texture_db;
  j["texture_radius"] = c.texture_radius;
  j["speckle_looks"] = c.speckle_looks;
  j["ignore_border"] = c.ignore_border;
  j["rng_seed"] = c.rng_seed;
  std::vector<std::string> seasons, regions;
  for (auto s : c.seasons) seasons.push_back(to_string(s));
  for (auto r : c.regions) regions.push_back(to_string(r));
  j["seasons"] = seasons;
  j["regions"] = regions;
  return j;
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  try {
    // Fields present in the document override the preset (default shift_free).
    SynthConfig c = SynthConfig::preset(j.value("preset", std::string("shift_free")));
    c.scenes_per_domain = j.value("scenes_per_domain", c.scenes_per_domain);
    c.val_per_domain = j.value("val_per_domain", c.val_per_domain);
    c.test_per_domain = j.value("test_per_domain", c.test_per_domain);
    if (j.contains("scene_size")) {
      const auto& ss = j.at("scene_size");
      c.scene_height = ss.at(0).get<int>();
      c.scene_width = ss.at(1).get<int>();
    }
    c.seeds_per_scene = j.value("seeds_per_scene", c.seeds_per_scene);
    c.class_count = j.value("class_count", c.class_count);
    c.patch_size = j.value("patch_size", c.patch_size);
    if (j.contains("class_priors")) c.class_priors = j.at("class_priors").get<std::map<std::string, std::vector<double>>>();
    if (j.contains("class_backscatter")) c.class_backscatter = j.at("class_backscatter").get<std::vector<std::array<double, 2>>>();
    if (j.contains("domain_offset")) c.domain_offset = j.at("domain_offset").get<std::map<std::string, double>>();
    c.texture_db = j.value("texture_db", c.texture_db);
    c.texture_radius = j.value("texture_radius", c.texture_radius);
    c.speckle_looks = j.value("speckle_looks", c.speckle_looks);
    c.ignore_border = j.value("ignore_border", c.ignore_border);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    if (j.contains("seasons")) {
      c.seasons.clear();
      for (const auto& s : j.at("seasons")) c.seasons.push_back(season_from_string(s.get<std::string>()));
    }
    if (j.contains("regions")) {
      c.regions.clear();
      for (const auto& r : j.at("regions")) c.regions.push_back(region_from_string(r.get<std::string>()));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
}

// -------------------------------------------------------------- generation

std::string scene_id_for(Season season, Region region, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", index);
  return to_string(season) + "_" + to_string(region) + "_" + buf;
}

namespace {

/// Separable box blur with edge clamping, in place.
void box_blur(std::vector<double>& f, int h, int w, int radius) {
  if (radius <= 0) return;
  std::vector<double> tmp(f.size());
  const double norm = 1.0 / (2 * radius + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += f[y * w + std::clamp(x + d, 0, w - 1)];
      tmp[y * w + x] = s * norm;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += tmp[std::clamp(y + d, 0, h - 1) * w + x];
      f[y * w + x] = s * norm;
    }
}

/// Zero-mean, unit-std smooth random field.
std::vector<double> texture_field(int h, int w, int radius, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> f(static_cast<std::size_t>(h) * w);
  for (auto& v : f) v = normal(rng);
  for (int pass = 0; pass < 3; ++pass) box_blur(f, h, w, radius);
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / f.size();
  double var = 0.0;
  for (auto& v : f) {
    v -= mean;
    var += v * v;
  }
  const double sd = std::sqrt(var / f.size());
  if (sd > 0.0)
    for (auto& v : f) v /= sd;
  return f;
}

}  // namespace

Scene synthesize_scene(const SynthConfig& cfg, Season season, Region region, int index) {
  Scene scene;
  scene.scene_id = scene_id_for(season, region, index);
  scene.season = season;
  scene.region = region;
  scene.class_count = cfg.class_count;
  const int h = cfg.scene_height, w = cfg.scene_width;
  Rng rng(derive_seed(cfg.rng_seed, scene.scene_id));

  // Voronoi partition; each cell draws its class from the domain prior.
  const auto& priors = cfg.priors_for(season, region);
  std::discrete_distribution<int> class_draw(priors.begin(), priors.end());
  std::uniform_real_distribution<double> uy(0.0, h), ux(0.0, w);
  std::vector<std::array<double, 2>> seeds(cfg.seeds_per_scene);
  std::vector<std::uint8_t> cell_class(cfg.seeds_per_scene);
  for (int s = 0; s < cfg.seeds_per_scene; ++s) {
    seeds[s] = {uy(rng), ux(rng)};
    cell_class[s] = static_cast<std::uint8_t>(class_draw(rng));
  }
  scene.labels = LabelRaster(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_d = 1e300;
      for (int s = 0; s < cfg.seeds_per_scene; ++s) {
        const double dy = seeds[s][0] - (y + 0.5), dx = seeds[s][1] - (x + 0.5);
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      scene.labels(y, x) = cell_class[best];
    }

  // Backscatter: class mean + domain offset + texture, then multiplicative
  // Gamma(L, 1/L) speckle on linear intensity.
  const double offset = cfg.offset_for(season, region);
  const auto tex_hh = texture_field(h, w, cfg.texture_radius, rng);
  const auto tex_hv = texture_field(h, w, cfg.texture_radius, rng);
  std::gamma_distribution<double> speckle(cfg.speckle_looks, 1.0 / cfg.speckle_looks);
  scene.hh = FloatRaster(h, w);
  scene.hv = FloatRaster(h, w);
  for (std::size_t i = 0; i < scene.labels.size(); ++i) {
    const auto& mu = cfg.class_backscatter[scene.labels.data[i]];
    const double db_hh = mu[0] + offset + cfg.texture_db * tex_hh[i];
    const double db_hv = mu[1] + offset + cfg.texture_db * tex_hv[i];
    const double lin_hh = std::pow(10.0, db_hh / 10.0) * speckle(rng);
    const double lin_hv = std::pow(10.0, db_hv / 10.0) * speckle(rng);
    scene.hh.data[i] = static_cast<float>(10.0 * std::log10(std::max(lin_hh, 1e-30)));
    scene.hv.data[i] = static_cast<float>(10.0 * std::log10(std::max(lin_hv, 1e-30)));
  }

  const int b = cfg.ignore_border;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y < b || x < b || y >= h - b || x >= w - b) scene.labels(y, x) = kIgnoreLabel;
  return scene;
}

std::array<ChannelStat, 3> channel_statistics(const std::vector<Scene>& scenes) {
  std::array<double, 3> sum{}, sumsq{};
  double n = 0.0;
  for (const auto& s : scenes)
    for (std::size_t i = 0; i < s.hh.size(); ++i) {
      const double v[3] = {s.hh.data[i], s.hv.data[i], double(s.hh.data[i]) - double(s.hv.data[i])};
      for (int c = 0; c < 3; ++c) {
        sum[c] += v[c];
        sumsq[c] += v[c] * v[c];
      }
      n += 1.0;
    }
  if (n == 0.0) throw ValidationError("channel statistics need at least one pixel");
  std::array<ChannelStat, 3> out;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / n;
    const double var = std::max(sumsq[c] / n - mean * mean, 0.0);
    out[c] = {mean, std::sqrt(var)};
  }
  return out;
}

DatasetManifest generate_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "scenes", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "scenes").string() + ": " + ec.message());

  DatasetManifest m;
  m.class_count = cfg.class_count;
  m.patch_size = cfg.patch_size;
  m.root = out_dir;
  std::vector<Scene> train_scenes;
  const int n_train = cfg.scenes_per_domain - cfg.val_per_domain - cfg.test_per_domain;
  for (auto season : cfg.seasons)
    for (auto region : cfg.regions)
      for (int i = 0; i < cfg.scenes_per_domain; ++i) {
        Scene scene = synthesize_scene(cfg, season, region, i);
        const std::string rel = "scenes/" + scene.scene_id + ".icescene";
        write_scene(scene, out_dir / rel);
        m.scenes.push_back({scene.scene_id, rel, season, region});
        const char* split = i < n_train ? "train" : (i < n_train + cfg.val_per_domain ? "val" : "test");
        m.splits[split].push_back(scene.scene_id);
        if (i < n_train) train_scenes.push_back(std::move(scene));
      }
  for (const char* name : {"train", "val", "test"}) m.splits[name];  // always present
  const auto stats = channel_statistics(train_scenes);
  m.hh = stats[0];
  m.hv = stats[1];
  m.ratio = stats[2];
  m.validate();
  save_manifest(m, out_dir / "manifest.json");
  write_json_file(out_dir / "synth_config.json", to_json(cfg));
  return m;
}

// ----------------------------------------------------------- scene container

namespace {

constexpr char kSceneMagic[8] = {'I', 'C', 'E', 'S', 'C', 'E', 'N', 'E'};
constexpr std::uint32_t kSceneVersion = 1;

}  // namespace

void write_scene(const Scene& scene, const fs::path& file) {
  scene.validate();
  if (scene.scene_id.size() > 0xffff) throw ValidationError("scene_id too long");
  ByteWriter w;
  w.bytes(kSceneMagic, sizeof(kSceneMagic));
  w.u32(kSceneVersion);
  w.u32(static_cast<std::uint32_t>(scene.height()));
  w.u32(static_cast<std::uint32_t>(scene.width()));
  w.u8(static_cast<std::uint8_t>(scene.season));
  w.u8(static_cast<std::uint8_t>(scene.region));
  w.u8(static_cast<std::uint8_t>(scene.class_count));
  w.u8(0);
  w.u16(static_cast<std::uint16_t>(scene.scene_id.size()));
  w.bytes(scene.scene_id.data(), scene.scene_id.size());
  w.f32_array(scene.hh.data.data(), scene.hh.size());
  w.f32_array(scene.hv.data.data(), scene.hv.size());
  w.bytes(scene.labels.data.data(), scene.labels.size());
  w.u64(fnv1a(w.view()));
  w.save(file);
}

Scene load_scene(const fs::path& file, std::optional<int> expected_class_count) {
  ByteReader r = ByteReader::from_file(file);
  const std::string where = "scene file " + file.string();
  if (r.size() < 8 + 8) throw FormatError(where + ": truncated");
  const std::uint64_t stored = ByteReader(r.view().substr(r.size() - 8), where).u64();
  if (stored != fnv1a(r.view().substr(0, r.size() - 8))) throw FormatError(where + ": checksum mismatch (corrupt or truncated)");
  ByteReader body(r.view().substr(0, r.size() - 8), where);
  char magic[8];
  body.bytes(magic, 8);
  if (std::memcmp(magic, kSceneMagic, 8) != 0) throw FormatError(where + ": bad magic");
  if (const auto v = body.u32(); v != kSceneVersion) throw FormatError(where + ": unsupported version " + std::to_string(v));
  Scene s;
  const auto h = body.u32(), w = body.u32();
  if (h == 0 || w == 0 || h > 1u << 16 || w > 1u << 16) throw FormatError(where + ": implausible dimensions");
  const auto season = body.u8(), region = body.u8();
  if (season > 3 || region > 3) throw FormatError(where + ": bad season/region code");
  s.season = static_cast<Season>(season);
  s.region = static_cast<Region>(region);
  s.class_count = body.u8();
  body.u8();
  const auto id_len = body.u16();
  s.scene_id.resize(id_len);
  body.bytes(s.scene_id.data(), id_len);
  s.hh = FloatRaster(static_cast<int>(h), static_cast<int>(w));
  s.hv = FloatRaster(static_cast<int>(h), static_cast<int>(w));
  s.labels = LabelRaster(static_cast<int>(h), static_cast<int>(w));
  body.f32_array(s.hh.data.data(), s.hh.size());
  body.f32_array(s.hv.data.data(), s.hv.size());
  body.bytes(s.labels.data.data(), s.labels.size());
  if (!body.at_end()) throw FormatError(where + ": trailing bytes");
  if (expected_class_count && *expected_class_count != s.class_count)
    throw FormatError(where + ": class_count " + std::to_string(s.class_count) + " does not match expected " + std::to_string(*expected_class_count));
  s.validate();
  return s;
}

// ------------------------------------------------------------------ patches

Planes<float> adapt_channels(const Scene& scene, ChannelMode mode) {
  scene.validate();
  Planes<float> out(channel_count(mode), scene.height(), scene.width());
  for (std::size_t i = 0; i < scene.hh.size(); ++i) {
    out.data(0, static_cast<Eigen::Index>(i)) = scene.hh.data[i];
    out.data(1, static_cast<Eigen::Index>(i)) = scene.hv.data[i];
    if (mode == ChannelMode::three_channel) out.data(2, static_cast<Eigen::Index>(i)) = scene.hh.data[i] - scene.hv.data[i];
  }
  return out;
}

template <typename T>
Raster<T> rotate90(const Raster<T>& in, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return in;
  const int h = in.height, w = in.width;
  Raster<T> out = (k == 2) ? Raster<T>(h, w) : Raster<T>(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T v = in(y, x);
      switch (k) {
        case 1: out(w - 1 - x, y) = v; break;
        case 2: out(h - 1 - y, w - 1 - x) = v; break;
        case 3: out(x, h - 1 - y) = v; break;
      }
    }
  return out;
}

template <typename T>
Raster<T> flip_horizontal(const Raster<T>& in) {
  Raster<T> out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) out(y, in.width - 1 - x) = in(y, x);
  return out;
}

template <typename T>
Raster<T> flip_vertical(const Raster<T>& in) {
  Raster<T> out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) out(in.height - 1 - y, x) = in(y, x);
  return out;
}

template Raster<float> rotate90(const Raster<float>&, int);
template Raster<std::uint8_t> rotate90(const Raster<std::uint8_t>&, int);
template Raster<float> flip_horizontal(const Raster<float>&);
template Raster<std::uint8_t> flip_horizontal(const Raster<std::uint8_t>&);
template Raster<float> flip_vertical(const Raster<float>&);
template Raster<std::uint8_t> flip_vertical(const Raster<std::uint8_t>&);

namespace {

template <typename F>
void transform_patch(Patch& p, F&& f) {
  p.labels = f(p.labels);
  Planes<float> out;
  for (int c = 0; c < p.channels.channels; ++c) {
    FloatRaster plane(p.channels.height, p.channels.width);
    for (Eigen::Index i = 0; i < p.channels.pixels(); ++i) plane.data[static_cast<std::size_t>(i)] = p.channels.data(c, i);
    FloatRaster t = f(plane);
    if (c == 0) out = Planes<float>(p.channels.channels, t.height, t.width);
    for (Eigen::Index i = 0; i < out.pixels(); ++i) out.data(c, i) = t.data[static_cast<std::size_t>(i)];
  }
  p.channels = std::move(out);
}

}  // namespace

void augment_patch(Patch& patch, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> quarter(0, 3);
  const bool fh = coin(rng);
  const bool fv = coin(rng);
  const int k = quarter(rng);
  if (fh) transform_patch(patch, [](const auto& r) { return flip_horizontal(r); });
  if (fv) transform_patch(patch, [](const auto& r) { return flip_vertical(r); });
  if (k) transform_patch(patch, [k](const auto& r) { return rotate90(r, k); });
}

std::vector<Patch> extract_patches(const Scene& scene, const DatasetManifest& manifest, PatchMode mode, int count, bool augment,
                                   ChannelMode channels, Rng& rng) {
  const int p = manifest.patch_size;
  if (scene.height() < p || scene.width() < p)
    throw ValidationError("scene " + scene.scene_id + " (" + std::to_string(scene.height()) + "x" + std::to_string(scene.width()) +
                          ") is smaller than the patch size " + std::to_string(p));
  if (mode == PatchMode::random_train && count <= 0) throw ValidationError("patch count must be > 0");

  const Planes<float> raw = adapt_channels(scene, channels);
  const ChannelStat stats[3] = {manifest.hh, manifest.hv, manifest.ratio};
  auto crop = [&](int r0, int c0) {
    Patch patch;
    patch.source_scene = scene.scene_id;
    patch.row = r0;
    patch.col = c0;
    patch.channels = Planes<float>(raw.channels, p, p);
    patch.labels = LabelRaster(p, p);
    for (int c = 0; c < raw.channels; ++c) {
      const double mean = stats[c].mean, inv = 1.0 / stats[c].std;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) patch.channels.at(c, y, x) = static_cast<float>((raw.at(c, r0 + y, c0 + x) - mean) * inv);
    }
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) patch.labels(y, x) = scene.labels(r0 + y, c0 + x);
    return patch;
  };

  std::vector<Patch> out;
  if (mode == PatchMode::tiled_eval) {
    for (int r0 = 0; r0 + p <= scene.height(); r0 += p)
      for (int c0 = 0; c0 + p <= scene.width(); c0 += p) out.push_back(crop(r0, c0));
    return out;
  }
  std::uniform_int_distribution<int> ry(0, scene.height() - p), rx(0, scene.width() - p);
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int r0 = ry(rng);
    const int c0 = rx(rng);
    Patch patch = crop(r0, c0);
    if (augment) augment_patch(patch, rng);
    out.push_back(std::move(patch));
  }
  return out;
}

}  // namespace icefm

namespace icefm {

std::vector<Patch> load_patches(const DatasetManifest& manifest, const std::vector<SceneRef>& scenes, PatchMode mode, int per_scene,
                                bool augment, ChannelMode channels, std::uint64_t seed) {
  std::vector<Patch> out;
  for (const auto& ref : scenes) {
    const Scene scene = load_scene(manifest.scene_path(ref), manifest.class_count);
    Rng rng(derive_seed(seed, ref.scene_id));
    for (auto& p : extract_patches(scene, manifest, mode, per_scene, augment, channels, rng)) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace icefm
