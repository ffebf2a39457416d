// SPDX-License-Identifier: Apache-2.0
#include "icefm/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <omp.h>

namespace icefm {

namespace fs = std::filesystem;

namespace {

void log(const BenchOptions& opt, const std::string& msg) {
  if (opt.log) opt.log(msg);
}

/// Runs body(i) for i in [0, n) on up to `jobs` threads and rethrows the
/// first failure in index order.
template <typename F>
void run_jobs(std::size_t n, int jobs, F&& body) {
  std::vector<std::exception_ptr> errors(n);
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        omp_set_num_threads(1);
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

DataSpec data_spec_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.contains("dataset")) throw ValidationError("config: missing 'dataset' (path to manifest.json)");
  DataSpec d;
  d.manifest = j.at("dataset").get<std::string>();
  if (d.manifest.is_relative() && !base_dir.empty()) d.manifest = base_dir / d.manifest;
  d.patches_per_scene = j.value("patches_per_scene", d.patches_per_scene);
  d.augment = j.value("augment", d.augment);
  if (d.patches_per_scene < 1) throw ValidationError("config: patches_per_scene must be >= 1");
  return d;
}

nlohmann::json to_json(const DataSpec& d) {
  return {{"dataset", d.manifest.string()}, {"patches_per_scene", d.patches_per_scene}, {"augment", d.augment}};
}

std::vector<std::uint64_t> seeds_from_json(const nlohmann::json& j) {
  std::vector<std::uint64_t> seeds{0};
  if (j.contains("seeds")) seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.empty()) throw ValidationError("config: seeds must not be empty");
  return seeds;
}

/// Data-dependent hash input: the manifest content, not its location.
nlohmann::json data_identity(const DataSpec& d, const DatasetManifest& m) {
  return {{"manifest", config_hash(to_json(m))}, {"patches_per_scene", d.patches_per_scene}, {"augment", d.augment}};
}

nlohmann::json train_identity(TrainConfig t) {
  t.seed = 0;
  return to_json(t);
}

void check_compatible(const ModelSpec& spec, const DatasetManifest& m) {
  if (spec.class_count != m.class_count)
    throw ValidationError("model '" + spec.name + "' has class_count " + std::to_string(spec.class_count) + " but the dataset has " +
                          std::to_string(m.class_count));
  if (spec.kind == ArchKind::vit_tiny && spec.vit.image_size != m.patch_size)
    throw ValidationError("model '" + spec.name + "' expects " + std::to_string(spec.vit.image_size) + "px inputs but the dataset patch size is " +
                          std::to_string(m.patch_size));
  if (m.patch_size % spec.size_multiple() != 0)
    throw ValidationError("model '" + spec.name + "' needs inputs that are multiples of " + std::to_string(spec.size_multiple()));
}

std::vector<SceneRef> split_or_throw(const DatasetManifest& m, const std::string& name, std::optional<Season> s = std::nullopt,
                                     std::optional<Region> r = std::nullopt) {
  auto refs = m.split(name, s, r);
  if (refs.empty()) throw ValidationError("dataset has no '" + name + "' scenes for the requested domain");
  return refs;
}

struct CellRun {
  TrainResult fit;
  MetricsReport metrics;
  std::int64_t trainable = 0;
  std::int64_t optimizer_bytes = 0;
  EfficiencyRecord inference;
};

/// Builds, adapts, trains and evaluates one model.
CellRun train_and_test(const ModelSpec& spec, const StrategyConfig& strategy, TrainConfig tc, std::uint64_t seed,
                       const std::vector<Patch>& train, const std::vector<Patch>& val, const std::vector<Patch>& test,
                       const fs::path& out_dir, const std::string& train_domain) {
  Rng rng(derive_seed(seed, "init"));
  auto plan = apply_strategy(build_model<float>(spec, rng), strategy, rng);
  tc.seed = seed;
  FitOptions fo;
  fo.out_dir = out_dir;
  fo.meta = {to_string(strategy.kind), train_domain, {}};
  CellRun run;
  run.fit = fit(plan, train, val, tc, fo);
  run.trainable = run.fit.efficiency.trainable_params;
  run.optimizer_bytes = run.fit.efficiency.optimizer_state_bytes;
  auto [cm, rec] = profile([&] { return evaluate(*plan.model, test); }, Phase::inference);
  run.metrics = report(cm);
  run.inference = rec;
  run.inference.sample_count = static_cast<std::int64_t>(test.size());
  if (!out_dir.empty()) write_json_file(out_dir / "metrics.json", to_json(run.metrics));
  return run;
}

BenchRow row_from_run(const ModelSpec& spec, const StrategyConfig& strategy, const CellRun& run, std::int64_t size, std::uint64_t seed) {
  BenchRow row;
  row.model = spec.name;
  row.strategy = to_string(strategy.kind);
  row.channels = spec.in_channels;
  row.size = size;
  row.seed = seed;
  row.metrics = run.metrics;
  row.trainable_params = run.trainable;
  row.optimizer_state_bytes = run.optimizer_bytes;
  row.best_epoch = run.fit.best_epoch;
  row.epochs = run.fit.stopped_epoch + 1;
  return row;
}

std::string class_name(int c) { return c < static_cast<int>(kIceClassNames.size()) ? kIceClassNames[c] : "class" + std::to_string(c); }

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("report: column '" + what + "' holds '" + s + "', not a number");
  }
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("report: column '" + what + "' holds '" + s + "', not an integer");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string report_csv_header() {
  return "model,strategy,channels,train_domain,test_domain,size,seed,config_hash,status,note,f1,acc,prec,rec,iou,trainable_params,"
         "optimizer_state_bytes,best_epoch,epochs";
}

std::string report_csv_line(const BenchRow& r) {
  const auto& m = r.metrics;
  return csv_line({r.model, r.strategy, std::to_string(r.channels), r.train_domain, r.test_domain, std::to_string(r.size),
                   std::to_string(r.seed), r.config_hash, r.status, r.note, format_metric(m.weighted_f1), format_metric(m.accuracy),
                   format_metric(m.weighted_precision), format_metric(m.weighted_recall), format_metric(m.weighted_iou),
                   std::to_string(r.trainable_params), std::to_string(r.optimizer_state_bytes), std::to_string(r.best_epoch),
                   std::to_string(r.epochs)});
}

std::vector<BenchRow> read_report(const fs::path& file) {
  const CsvTable t = read_csv(file);
  auto col = [&](const char* name) { return t.column(name); };
  std::vector<BenchRow> rows;
  for (const auto& f : t.rows) {
    BenchRow r;
    r.model = f[col("model")];
    r.strategy = f[col("strategy")];
    r.channels = static_cast<int>(parse_int(f[col("channels")], "channels"));
    r.train_domain = f[col("train_domain")];
    r.test_domain = f[col("test_domain")];
    r.size = parse_int(f[col("size")], "size");
    r.seed = static_cast<std::uint64_t>(parse_int(f[col("seed")], "seed"));
    r.config_hash = f[col("config_hash")];
    r.status = f[col("status")];
    r.note = f[col("note")];
    r.metrics.weighted_f1 = parse_double(f[col("f1")], "f1");
    r.metrics.accuracy = parse_double(f[col("acc")], "acc");
    r.metrics.weighted_precision = parse_double(f[col("prec")], "prec");
    r.metrics.weighted_recall = parse_double(f[col("rec")], "rec");
    r.metrics.weighted_iou = parse_double(f[col("iou")], "iou");
    r.trainable_params = parse_int(f[col("trainable_params")], "trainable_params");
    r.optimizer_state_bytes = parse_int(f[col("optimizer_state_bytes")], "optimizer_state_bytes");
    r.best_epoch = static_cast<int>(parse_int(f[col("best_epoch")], "best_epoch"));
    r.epochs = static_cast<int>(parse_int(f[col("epochs")], "epochs"));
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_report(const fs::path& file, const std::vector<BenchRow>& rows) {
  std::string text = report_csv_header() + "\n";
  for (const auto& r : rows) text += report_csv_line(r) + "\n";
  write_text_file(file, text);
}

double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::size_t> subsample_indices(std::size_t pool, std::size_t size, std::uint64_t seed) {
  if (size > pool)
    throw ValidationError("subsample: requested " + std::to_string(size) + " items from a pool of " + std::to_string(pool));
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < size; ++i) std::swap(idx[i], idx[i + rng() % (pool - i)]);
  idx.resize(size);
  return idx;
}

// ---------------------------------------------------------------- grid

void GridSpec::validate() const {
  if (models.empty()) throw ValidationError("grid: models must not be empty");
  if (strategies.empty()) throw ValidationError("grid: strategies must not be empty");
  if (seeds.empty()) throw ValidationError("grid: seeds must not be empty");
  std::set<std::string> names;
  for (const auto& m : models) {
    m.validate();
    if (!names.insert(m.name).second) throw ValidationError("grid: duplicate model name '" + m.name + "'");
  }
  train.validate();
}

nlohmann::json to_json(const GridSpec& g) {
  nlohmann::json j = to_json(g.data);
  j["models"] = nlohmann::json::array();
  for (const auto& m : g.models) j["models"].push_back(to_json(m));
  j["strategies"] = nlohmann::json::array();
  for (const auto& s : g.strategies) j["strategies"].push_back(to_json(s));
  j["train"] = to_json(g.train);
  j["seeds"] = g.seeds;
  return j;
}

GridSpec grid_spec_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  GridSpec g;
  g.data = data_spec_from_json(j, base_dir);
  if (!j.contains("models")) throw ValidationError("grid: missing 'models'");
  for (const auto& m : j.at("models")) g.models.push_back(model_spec_from_json(m));
  if (j.contains("strategies")) {
    for (const auto& s : j.at("strategies")) g.strategies.push_back(strategy_config_from_any(s));
  } else {
    for (auto s : kAllStrategies) g.strategies.push_back({s, {}, {}});
  }
  if (j.contains("train")) g.train = train_config_from_json(j.at("train"));
  g.seeds = seeds_from_json(j);
  g.validate();
  return g;
}

BenchReport run_grid(const GridSpec& spec, const fs::path& out_dir, const BenchOptions& opt) {
  spec.validate();
  const DatasetManifest manifest = load_manifest(spec.data.manifest);
  for (const auto& m : spec.models) check_compatible(m, manifest);
  split_or_throw(manifest, "train");
  split_or_throw(manifest, "val");
  split_or_throw(manifest, "test");

  struct Cell {
    const ModelSpec* model;
    const StrategyConfig* strategy;
    std::uint64_t seed;
    std::string hash;
  };
  std::vector<Cell> cells;
  for (const auto& m : spec.models)
    for (const auto& s : spec.strategies)
      for (auto seed : spec.seeds) {
        const nlohmann::json id{{"kind", "grid"},
                                {"model", to_json(m)},
                                {"strategy", to_json(s)},
                                {"train", train_identity(spec.train)},
                                {"data", data_identity(spec.data, manifest)}};
        cells.push_back({&m, &s, seed, config_hash(id)});
      }

  const fs::path report_file = out_dir / "report.csv";
  const fs::path eff_file = out_dir / "efficiency.csv";
  const std::string eff_header = "config_hash,seed," + efficiency_csv_header();
  std::map<std::pair<std::string, std::uint64_t>, BenchRow> previous;
  std::map<std::pair<std::string, std::uint64_t>, std::string> eff_lines;
  if (fs::exists(report_file)) {
    for (auto& r : read_report(report_file))
      if (r.status == "ok" || r.status == "skipped") previous[{r.config_hash, r.seed}] = r;
  }
  if (fs::exists(eff_file)) {
    const std::string text = read_text_file(eff_file);
    std::size_t pos = text.find('\n');
    while (pos != std::string::npos && pos + 1 < text.size()) {
      const std::size_t end = text.find('\n', pos + 1);
      const std::string line = text.substr(pos + 1, end - pos - 1);
      const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
      if (c1 != std::string::npos && c2 != std::string::npos)
        eff_lines[{line.substr(0, c1), static_cast<std::uint64_t>(std::stoull(line.substr(c1 + 1, c2 - c1 - 1)))}] = line;
      pos = end;
    }
  }

  std::vector<std::optional<BenchRow>> rows(cells.size());
  std::vector<std::optional<EfficiencyRow>> eff(cells.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto it = previous.find({cells[i].hash, cells[i].seed});
    if (it != previous.end())
      rows[i] = it->second;
    else
      todo.push_back(i);
  }

  std::mutex mu;
  auto flush = [&] {
    std::vector<BenchRow> done;
    std::string eff_text = eff_header + "\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (rows[i]) done.push_back(*rows[i]);
      auto it = eff_lines.find({cells[i].hash, cells[i].seed});
      if (it != eff_lines.end()) eff_text += it->second + "\n";
    }
    write_report(report_file, done);
    write_text_file(eff_file, eff_text);
  };
  fs::create_directories(out_dir);
  flush();

  BenchReport out;
  out.executed = static_cast<int>(todo.size());
  run_jobs(todo.size(), opt.jobs, [&](std::size_t t) {
    const std::size_t i = todo[t];
    const Cell& c = cells[i];
    BenchRow row;
    row.model = c.model->name;
    row.strategy = to_string(c.strategy->kind);
    row.channels = c.model->in_channels;
    row.seed = c.seed;
    row.config_hash = c.hash;
    std::optional<EfficiencyRow> er;
    if (!strategy_supported(c.strategy->kind, c.model->kind)) {
      row.status = "skipped";
      row.note = "unsupported-architecture";
    } else {
      try {
        const ChannelMode ch = channel_mode_for(c.model->in_channels);
        const auto train = load_patches(manifest, manifest.split("train"), PatchMode::random_train, spec.data.patches_per_scene,
                                        spec.data.augment, ch, derive_seed(c.seed, "patches"));
        const auto val = load_patches(manifest, manifest.split("val"), PatchMode::tiled_eval, 0, false, ch, 0);
        const auto test = load_patches(manifest, manifest.split("test"), PatchMode::tiled_eval, 0, false, ch, 0);
        const fs::path cell_dir = out_dir / "cells" / (c.hash + "-s" + std::to_string(c.seed));
        const CellRun run = train_and_test(*c.model, *c.strategy, spec.train, c.seed, train, val, test, cell_dir, "all");
        const std::string hash = row.config_hash;
        row = row_from_run(*c.model, *c.strategy, run, static_cast<std::int64_t>(train.size()), c.seed);
        row.config_hash = hash;
        er = EfficiencyRow{hash, c.seed, row.model, row.strategy, run.fit.efficiency, run.inference};
      } catch (const std::exception& e) {
        row.status = "failed";
        row.note = e.what();
      }
    }
    std::lock_guard lock(mu);
    log(opt, row.model + " / " + row.strategy + " / seed " + std::to_string(row.seed) + ": " + row.status +
                 (row.status == "ok" ? " f1=" + fmt(row.metrics.weighted_f1) : row.note.empty() ? "" : " (" + row.note + ")"));
    rows[i] = row;
    if (er) {
      eff_lines[{er->config_hash, er->seed}] =
          csv_line({er->config_hash, std::to_string(er->seed)}) + "," + efficiency_csv_row(er->model, er->strategy, er->train, er->inference);
      eff[i] = std::move(er);
    }
    flush();
  });

  for (std::size_t i = 0; i < cells.size(); ++i) {
    out.rows.push_back(*rows[i]);
    if (eff[i]) out.efficiency.push_back(*eff[i]);
  }
  write_csv(out_dir / "radar.csv", radar_table(out.rows));
  return out;
}

CsvTable radar_table(const std::vector<BenchRow>& rows) {
  std::vector<std::string> models;
  for (const auto& r : rows)
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
  CsvTable t;
  t.header.push_back("strategy");
  t.header.insert(t.header.end(), models.begin(), models.end());
  for (auto s : kAllStrategies) {
    const std::string name = to_string(s);
    std::vector<std::string> line{name};
    bool any = false;
    for (const auto& m : models) {
      double sum = 0.0;
      int n = 0;
      for (const auto& r : rows)
        if (r.model == m && r.strategy == name && r.status == "ok") {
          sum += r.metrics.weighted_f1;
          ++n;
        }
      line.push_back(n ? format_metric(sum / n) : "");
      any = any || n > 0;
    }
    if (any) t.rows.push_back(std::move(line));
  }
  return t;
}

CsvTable table2_table(const std::vector<BenchRow>& rows) {
  std::vector<std::string> models;
  for (const auto& r : rows)
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
  CsvTable t;
  t.header = {"strategy", "model", "channels", "f1", "acc", "prec", "rec", "iou", "seeds"};
  for (auto s : kAllStrategies) {
    const std::string name = to_string(s);
    for (const auto& m : models) {
      std::map<int, std::vector<const BenchRow*>> by_channels;
      for (const auto& r : rows)
        if (r.model == m && r.strategy == name && r.status == "ok") by_channels[r.channels].push_back(&r);
      for (const auto& [ch, rs] : by_channels) {
        double f1 = 0, acc = 0, prec = 0, rec = 0, iou = 0;
        for (const auto* r : rs) {
          f1 += r->metrics.weighted_f1;
          acc += r->metrics.accuracy;
          prec += r->metrics.weighted_precision;
          rec += r->metrics.weighted_recall;
          iou += r->metrics.weighted_iou;
        }
        const double n = static_cast<double>(rs.size());
        t.rows.push_back({name, m, std::to_string(ch), format_metric(f1 / n), format_metric(acc / n), format_metric(prec / n),
                          format_metric(rec / n), format_metric(iou / n), std::to_string(rs.size())});
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------- transfer

namespace {

struct DomainFilter {
  std::optional<Season> season;
  std::optional<Region> region;
};

DomainFilter domain_filter(TransferAxis axis, const std::string& name) {
  if (name == "all") return {};
  if (axis == TransferAxis::season) return {season_from_string(name), std::nullopt};
  return {std::nullopt, region_from_string(name)};
}

}  // namespace

void TransferSpec::resolve() {
  if (train_domains.empty()) {
    if (axis == TransferAxis::season)
      for (auto s : kSeasons) train_domains.push_back(to_string(s));
    else
      train_domains = {"east", "west", "canadian_arctic"};
  }
  if (test_domains.empty()) {
    test_domains = train_domains;
    test_domains.push_back("all");
  }
  for (const auto& d : train_domains) {
    if (d == "all") throw ValidationError("transfer: 'all' is only valid as a test domain");
    domain_filter(axis, d);
  }
  for (const auto& d : test_domains) domain_filter(axis, d);
  if (seeds.empty()) throw ValidationError("transfer: seeds must not be empty");
  base.validate();
  train.validate();
}

nlohmann::json to_json(const TransferSpec& t) {
  nlohmann::json j = to_json(t.data);
  j["axis"] = t.axis == TransferAxis::season ? "season" : "region";
  j["train_domains"] = t.train_domains;
  j["test_domains"] = t.test_domains;
  j["model"] = to_json(t.base);
  j["strategy"] = to_json(t.strategy);
  j["train"] = to_json(t.train);
  j["seeds"] = t.seeds;
  return j;
}

TransferSpec transfer_spec_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  TransferSpec t;
  t.data = data_spec_from_json(j, base_dir);
  const std::string axis = j.value("axis", std::string("season"));
  if (axis == "season")
    t.axis = TransferAxis::season;
  else if (axis == "region")
    t.axis = TransferAxis::region;
  else
    throw ValidationError("transfer: axis must be 'season' or 'region', got '" + axis + "'");
  if (j.contains("train_domains")) t.train_domains = j.at("train_domains").get<std::vector<std::string>>();
  if (j.contains("test_domains")) t.test_domains = j.at("test_domains").get<std::vector<std::string>>();
  if (!j.contains("model")) throw ValidationError("transfer: missing 'model'");
  t.base = model_spec_from_json(j.at("model"));
  if (j.contains("strategy")) t.strategy = strategy_config_from_any(j.at("strategy"));
  if (j.contains("train")) t.train = train_config_from_json(j.at("train"));
  t.seeds = seeds_from_json(j);
  t.resolve();
  return t;
}

std::vector<std::vector<double>> TransferResult::median_f1() const {
  std::vector<std::vector<double>> out(train_domains.size(), std::vector<double>(test_domains.size(), 0.0));
  for (std::size_t a = 0; a < train_domains.size(); ++a)
    for (std::size_t b = 0; b < test_domains.size(); ++b) {
      std::vector<double> v;
      for (const auto& s : f1) v.push_back(s[a][b]);
      out[a][b] = median(v);
    }
  return out;
}

CsvTable transfer_matrix_table(const std::vector<std::string>& train, const std::vector<std::string>& test,
                               const std::vector<std::vector<double>>& f1) {
  CsvTable t;
  t.header.push_back("train\\test");
  t.header.insert(t.header.end(), test.begin(), test.end());
  for (std::size_t a = 0; a < train.size(); ++a) {
    std::vector<std::string> line{train[a]};
    for (double v : f1[a]) line.push_back(format_metric(v));
    t.rows.push_back(std::move(line));
  }
  return t;
}

TransferResult run_transfer(const TransferSpec& input, const fs::path& out_dir, const BenchOptions& opt) {
  TransferSpec spec = input;
  spec.resolve();
  if (!strategy_supported(spec.strategy.kind, spec.base.kind))
    throw UnsupportedArchitecture("transfer: strategy '" + to_string(spec.strategy.kind) + "' does not apply to " + to_string(spec.base.kind));
  const DatasetManifest manifest = load_manifest(spec.data.manifest);
  check_compatible(spec.base, manifest);
  const ChannelMode ch = channel_mode_for(spec.base.in_channels);

  std::vector<std::vector<Patch>> tests;
  for (const auto& d : spec.test_domains) {
    const auto f = domain_filter(spec.axis, d);
    tests.push_back(load_patches(manifest, split_or_throw(manifest, "test", f.season, f.region), PatchMode::tiled_eval, 0, false, ch, 0));
  }
  for (const auto& d : spec.train_domains) {
    const auto f = domain_filter(spec.axis, d);
    split_or_throw(manifest, "train", f.season, f.region);
  }
  if (manifest.split("val").empty()) throw ValidationError("transfer: the dataset has no validation scenes");

  TransferResult res;
  res.train_domains = spec.train_domains;
  res.test_domains = spec.test_domains;
  const std::size_t na = spec.train_domains.size(), nb = spec.test_domains.size();
  res.f1.assign(spec.seeds.size(), std::vector<std::vector<double>>(na, std::vector<double>(nb, 0.0)));
  std::vector<std::vector<BenchRow>> cell_rows(spec.seeds.size() * na);
  std::vector<std::vector<MetricsReport>> cell_metrics(spec.seeds.size() * na);
  const std::string axis = spec.axis == TransferAxis::season ? "season" : "region";
  const std::string hash = config_hash({{"kind", "transfer:" + axis},
                                        {"model", to_json(spec.base)},
                                        {"strategy", to_json(spec.strategy)},
                                        {"train", train_identity(spec.train)},
                                        {"data", data_identity(spec.data, manifest)}});

  std::mutex mu;
  run_jobs(spec.seeds.size() * na, opt.jobs, [&](std::size_t job) {
    const std::size_t si = job / na, a = job % na;
    const std::uint64_t seed = spec.seeds[si];
    const std::string& dom = spec.train_domains[a];
    const auto f = domain_filter(spec.axis, dom);
    const std::uint64_t data_seed = derive_seed(seed, "transfer:" + dom);
    const auto train = load_patches(manifest, manifest.split("train", f.season, f.region), PatchMode::random_train,
                                    spec.data.patches_per_scene, spec.data.augment, ch, data_seed);
    auto val_refs = manifest.split("val", f.season, f.region);
    if (val_refs.empty()) val_refs = manifest.split("val");
    const auto val = load_patches(manifest, val_refs, PatchMode::tiled_eval, 0, false, ch, 0);

    Rng rng(derive_seed(seed, "init"));
    auto plan = apply_strategy(build_model<float>(spec.base, rng), spec.strategy, rng);
    TrainConfig tc = spec.train;
    tc.seed = seed;
    FitOptions fo;
    fo.meta = {to_string(spec.strategy.kind), dom, {}};
    if (!out_dir.empty()) fo.out_dir = out_dir / "cells" / (axis + "-" + dom + "-s" + std::to_string(seed));
    const TrainResult tr = fit(plan, train, val, tc, fo);
    for (std::size_t b = 0; b < nb; ++b) {
      const MetricsReport m = report(evaluate(*plan.model, tests[b]));
      res.f1[si][a][b] = m.weighted_f1;
      BenchRow row;
      row.model = spec.base.name;
      row.strategy = to_string(spec.strategy.kind);
      row.channels = spec.base.in_channels;
      row.train_domain = dom;
      row.test_domain = spec.test_domains[b];
      row.size = static_cast<std::int64_t>(train.size());
      row.seed = seed;
      row.config_hash = hash;
      row.metrics = m;
      row.trainable_params = tr.efficiency.trainable_params;
      row.optimizer_state_bytes = tr.efficiency.optimizer_state_bytes;
      row.best_epoch = tr.best_epoch;
      row.epochs = tr.stopped_epoch + 1;
      cell_rows[job].push_back(row);
      cell_metrics[job].push_back(m);
    }
    std::lock_guard lock(mu);
    log(opt, "transfer " + axis + " train=" + dom + " seed " + std::to_string(seed) + " done");
  });

  CsvTable long_table;
  long_table.header = {"axis", "train_domain", "test_domain", "seed", "f1", "acc", "prec", "rec", "iou"};
  for (int c = 0; c < manifest.class_count; ++c) long_table.header.push_back("f1_" + class_name(c));
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
      const std::size_t job = si * na + a;
      for (std::size_t b = 0; b < nb; ++b) {
        const auto& r = cell_rows[job][b];
        const auto& m = cell_metrics[job][b];
        std::vector<std::string> line{axis,
                                      r.train_domain,
                                      r.test_domain,
                                      std::to_string(r.seed),
                                      format_metric(m.weighted_f1),
                                      format_metric(m.accuracy),
                                      format_metric(m.weighted_precision),
                                      format_metric(m.weighted_recall),
                                      format_metric(m.weighted_iou)};
        for (const auto& pc : m.per_class) line.push_back(format_metric(pc.f1));
        long_table.rows.push_back(std::move(line));
        res.rows.push_back(r);
      }
    }
  if (!out_dir.empty()) {
    write_csv(out_dir / "transfer_matrix.csv", transfer_matrix_table(res.train_domains, res.test_domains, res.median_f1()));
    write_csv(out_dir / "transfer_long.csv", long_table);
    write_report(out_dir / "report.csv", res.rows);
  }
  return res;
}

// ---------------------------------------------------------------- sweep

void SweepSpec::validate() const {
  if (sizes.empty()) throw ValidationError("sweep: sizes must not be empty");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ValidationError("sweep: sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ValidationError("sweep: sizes must be strictly increasing");
  }
  if (seeds.empty()) throw ValidationError("sweep: seeds must not be empty");
  base.validate();
  train.validate();
}

nlohmann::json to_json(const SweepSpec& s) {
  nlohmann::json j = to_json(s.data);
  j["sizes"] = s.sizes;
  j["model"] = to_json(s.base);
  j["strategy"] = to_json(s.strategy);
  j["train"] = to_json(s.train);
  j["seeds"] = s.seeds;
  return j;
}

SweepSpec sweep_spec_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  SweepSpec s;
  s.data = data_spec_from_json(j, base_dir);
  if (j.contains("sizes")) s.sizes = j.at("sizes").get<std::vector<int>>();
  if (!j.contains("model")) throw ValidationError("sweep: missing 'model'");
  s.base = model_spec_from_json(j.at("model"));
  if (j.contains("strategy")) s.strategy = strategy_config_from_any(j.at("strategy"));
  if (j.contains("train")) s.train = train_config_from_json(j.at("train"));
  s.seeds = seeds_from_json(j);
  s.validate();
  return s;
}

std::vector<SweepPoint> run_sweep(const SweepSpec& spec, const fs::path& out_dir, const BenchOptions& opt) {
  spec.validate();
  if (!strategy_supported(spec.strategy.kind, spec.base.kind))
    throw UnsupportedArchitecture("sweep: strategy '" + to_string(spec.strategy.kind) + "' does not apply to " + to_string(spec.base.kind));
  const DatasetManifest manifest = load_manifest(spec.data.manifest);
  check_compatible(spec.base, manifest);
  const ChannelMode ch = channel_mode_for(spec.base.in_channels);
  const auto train_refs = split_or_throw(manifest, "train");
  const std::size_t pool_size = train_refs.size() * static_cast<std::size_t>(spec.data.patches_per_scene);
  if (static_cast<std::size_t>(spec.sizes.back()) > pool_size)
    throw ValidationError("sweep: size " + std::to_string(spec.sizes.back()) + " exceeds the pool of " + std::to_string(pool_size) +
                          " training patches (" + std::to_string(train_refs.size()) + " scenes x " + std::to_string(spec.data.patches_per_scene) +
                          " per scene)");
  const auto val = load_patches(manifest, split_or_throw(manifest, "val"), PatchMode::tiled_eval, 0, false, ch, 0);
  const auto test = load_patches(manifest, split_or_throw(manifest, "test"), PatchMode::tiled_eval, 0, false, ch, 0);
  const std::string hash = config_hash({{"kind", "sweep"},
                                        {"model", to_json(spec.base)},
                                        {"strategy", to_json(spec.strategy)},
                                        {"train", train_identity(spec.train)},
                                        {"sizes", spec.sizes},
                                        {"data", data_identity(spec.data, manifest)}});

  std::vector<std::vector<Patch>> pools(spec.seeds.size());
  for (std::size_t si = 0; si < spec.seeds.size(); ++si)
    pools[si] = load_patches(manifest, train_refs, PatchMode::random_train, spec.data.patches_per_scene, spec.data.augment, ch,
                             derive_seed(spec.seeds[si], "pool"));

  const std::size_t nsz = spec.sizes.size();
  std::vector<SweepPoint> points(spec.seeds.size() * nsz);
  std::vector<BenchRow> rows(points.size());
  std::mutex mu;
  run_jobs(points.size(), opt.jobs, [&](std::size_t job) {
    const std::size_t si = job / nsz, k = job % nsz;
    const std::uint64_t seed = spec.seeds[si];
    const auto& pool = pools[si];
    std::vector<Patch> train;
    for (std::size_t i : subsample_indices(pool.size(), static_cast<std::size_t>(spec.sizes[k]), derive_seed(seed, "subsample")))
      train.push_back(pool[i]);
    const fs::path cell_dir = out_dir.empty() ? fs::path{} : out_dir / "cells" / ("n" + std::to_string(spec.sizes[k]) + "-s" + std::to_string(seed));
    const CellRun run = train_and_test(spec.base, spec.strategy, spec.train, seed, train, val, test, cell_dir, "all");
    points[job] = {spec.sizes[k], seed, run.metrics};
    rows[job] = row_from_run(spec.base, spec.strategy, run, spec.sizes[k], seed);
    rows[job].config_hash = hash;
    std::lock_guard lock(mu);
    log(opt, "sweep n=" + std::to_string(spec.sizes[k]) + " seed " + std::to_string(seed) + " f1=" + fmt(run.metrics.weighted_f1));
  });

  if (!out_dir.empty()) {
    CsvTable t;
    t.header = {"size", "seed", "f1", "acc", "prec", "rec", "iou"};
    for (const auto& p : points)
      t.rows.push_back({std::to_string(p.size), std::to_string(p.seed), format_metric(p.metrics.weighted_f1), format_metric(p.metrics.accuracy),
                        format_metric(p.metrics.weighted_precision), format_metric(p.metrics.weighted_recall),
                        format_metric(p.metrics.weighted_iou)});
    write_csv(out_dir / "sweep.csv", t);
    write_report(out_dir / "report.csv", rows);
  }
  return points;
}

// ---------------------------------------------------------------- distillation

void KdExperimentSpec::validate() const {
  distill.validate();
  if (seeds.empty()) throw ValidationError("distill: seeds must not be empty");
  if (distill.teachers.empty()) {
    experts.base.validate();
    experts.train.validate();
    if (experts.base.in_channels != distill.student_spec.in_channels || experts.base.class_count != distill.student_spec.class_count)
      throw ValidationError("distill: experts.model and student must agree on in_channels and class_count");
  }
}

nlohmann::json to_json(const KdExperimentSpec& k) {
  nlohmann::json j = to_json(k.data);
  j.update(to_json(k.distill));
  j["baseline"] = k.baseline;
  j["seeds"] = k.seeds;
  if (k.distill.teachers.empty())
    j["experts"] = {{"model", to_json(k.experts.base)},
                    {"strategy", to_json(k.experts.strategy)},
                    {"train", to_json(k.experts.train)},
                    {"patches_per_scene", k.experts.patches_per_scene},
                    {"augment", k.experts.augment}};
  return j;
}

KdExperimentSpec kd_experiment_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  KdExperimentSpec k;
  k.data = data_spec_from_json(j, base_dir);
  k.distill = distill_config_from_json(j, base_dir);
  k.baseline = j.value("baseline", k.baseline);
  k.seeds = seeds_from_json(j);
  if (j.contains("experts")) {
    const auto& e = j.at("experts");
    if (!e.contains("model")) throw ValidationError("distill: experts.model is required");
    k.experts.base = model_spec_from_json(e.at("model"));
    if (e.contains("strategy")) k.experts.strategy = strategy_config_from_any(e.at("strategy"));
    if (e.contains("train")) k.experts.train = train_config_from_json(e.at("train"));
    k.experts.patches_per_scene = e.value("patches_per_scene", k.experts.patches_per_scene);
    k.experts.augment = e.value("augment", k.experts.augment);
  } else if (k.distill.teachers.empty()) {
    throw ValidationError("distill: give either 'teachers' (checkpoint list) or 'experts' (how to train them)");
  }
  k.validate();
  return k;
}

KdExperimentResult run_kd_experiment(const KdExperimentSpec& spec, const fs::path& out_dir, const BenchOptions& opt) {
  spec.validate();
  const DatasetManifest manifest = load_manifest(spec.data.manifest);
  const ModelSpec& student = spec.distill.student_spec;
  check_compatible(student, manifest);
  if (spec.distill.teachers.empty()) check_compatible(spec.experts.base, manifest);
  const ChannelMode ch = channel_mode_for(student.in_channels);
  const auto val = load_patches(manifest, split_or_throw(manifest, "val"), PatchMode::tiled_eval, 0, false, ch, 0);
  const auto test = load_patches(manifest, split_or_throw(manifest, "test"), PatchMode::tiled_eval, 0, false, ch, 0);
  std::optional<TeacherEnsemble> loaded;
  if (!spec.distill.teachers.empty()) loaded = TeacherEnsemble::load(spec.distill.teachers);

  nlohmann::json id{{"kind", "distill"},       {"distill", to_json(spec.distill)}, {"data", data_identity(spec.data, manifest)},
                    {"baseline", spec.baseline}};
  if (!loaded) id["experts"] = {{"model", to_json(spec.experts.base)},
                                {"strategy", to_json(spec.experts.strategy)},
                                {"train", train_identity(spec.experts.train)},
                                {"patches_per_scene", spec.experts.patches_per_scene},
                                {"augment", spec.experts.augment}};
  id["distill"]["train"]["seed"] = 0;
  const std::string hash = config_hash(id);

  KdExperimentResult res;
  res.seeds = spec.seeds;
  std::vector<BenchRow> rows;
  for (const auto seed : spec.seeds) {
    const std::string tag = "s" + std::to_string(seed);
    std::optional<TeacherEnsemble> built;
    if (!loaded) {
      ExpertConfig ec = spec.experts;
      ec.train.seed = seed;
      if (!out_dir.empty()) ec.out_dir = out_dir / "experts" / tag;
      built = build_expert_teachers(manifest, ec);
      log(opt, "distill seed " + std::to_string(seed) + ": trained " + std::to_string(built->size()) + " experts");
    }
    const TeacherEnsemble& teachers = loaded ? *loaded : *built;
    const auto train = load_patches(manifest, split_or_throw(manifest, "train"), PatchMode::random_train, spec.data.patches_per_scene,
                                    spec.data.augment, ch, derive_seed(seed, "student"));
    DistillConfig dc = spec.distill;
    dc.train_cfg.seed = seed;

    auto run_student = [&](bool kd) {
      Rng rng(derive_seed(seed, "init"));
      auto plan = apply_full(build_model<float>(student, rng));
      FitOptions fo;
      fo.meta = {kd ? "kd" : "hard_label", "all", {}};
      if (!out_dir.empty()) fo.out_dir = out_dir / (kd ? "student_kd" : "student_ce") / tag;
      DistillConfig c = dc;
      if (!kd) c.kd.alpha = 1.0;
      const TrainResult tr = distill(c, teachers, train, val, plan, fo);
      const MetricsReport m = report(evaluate(*plan.model, test));
      if (!fo.out_dir.empty()) write_json_file(fo.out_dir / "metrics.json", to_json(m));
      BenchRow row;
      row.model = student.name;
      row.strategy = kd ? "kd" : "hard_label";
      row.channels = student.in_channels;
      row.size = static_cast<std::int64_t>(train.size());
      row.seed = seed;
      row.config_hash = hash;
      row.metrics = m;
      row.trainable_params = tr.efficiency.trainable_params;
      row.optimizer_state_bytes = tr.efficiency.optimizer_state_bytes;
      row.best_epoch = tr.best_epoch;
      row.epochs = tr.stopped_epoch + 1;
      rows.push_back(row);
      log(opt, "distill seed " + std::to_string(seed) + ": " + row.strategy + " student f1=" + fmt(m.weighted_f1));
      return m;
    };
    res.kd.push_back(run_student(true));
    if (spec.baseline) res.ce.push_back(run_student(false));
  }

  if (!out_dir.empty()) {
    auto med = [](const std::vector<MetricsReport>& v) {
      MetricsReport m;
      auto pick = [&](auto field) {
        std::vector<double> xs;
        for (const auto& r : v) xs.push_back(r.*field);
        return median(xs);
      };
      m.weighted_f1 = pick(&MetricsReport::weighted_f1);
      m.accuracy = pick(&MetricsReport::accuracy);
      m.weighted_precision = pick(&MetricsReport::weighted_precision);
      m.weighted_recall = pick(&MetricsReport::weighted_recall);
      m.weighted_iou = pick(&MetricsReport::weighted_iou);
      return m;
    };
    std::string table = table4_csv_header() + "\n";
    if (spec.baseline) table += table4_csv_row(student.name, med(res.ce)) + "\n";
    table += table4_csv_row(student.name + "-kd", med(res.kd)) + "\n";
    write_text_file(out_dir / "table4.csv", table);
    write_report(out_dir / "report.csv", rows);
  }
  return res;
}

}  // namespace icefm
