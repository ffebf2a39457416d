// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "icefm/bench.hpp"
#include "icefm/checkpoint.hpp"
#include "icefm/io.hpp"
#include "icefm/sardata.hpp"
#include "icefm/train.hpp"
#include "icefm/version.hpp"

namespace icefm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  int verbosity = 1;
};

struct Context {
  std::string command;
  Common common;
  std::vector<std::string> argv;
  std::ostream* out;
  std::ostream* err;

  void log(const std::string& msg, int level = 1) const {
    if (common.verbosity >= level) *err << "[icefm] " << msg << "\n";
  }
  [[nodiscard]] BenchOptions bench_options() const {
    BenchOptions o;
    o.jobs = common.jobs;
    o.log = [this](const std::string& m) { log(m); };
    return o;
  }
};

fs::path resolve_out_dir(const Context& ctx, const fs::path& fallback = {}) {
  if (!ctx.common.out.empty()) return ctx.common.out;
  if (const char* env = std::getenv("ICEFM_OUT_DIR"); env && *env) return env;
  if (!fallback.empty()) return fallback;
  return "icefm-out";
}

json load_config(const Context& ctx) {
  if (ctx.common.config.empty()) throw ValidationError(ctx.command + ": --config is required");
  const fs::path p = ctx.common.config;
  if (!fs::exists(p)) throw ValidationError("config file not found: " + p.string());
  try {
    return read_json_file(p);
  } catch (const json::exception& e) {
    throw ValidationError("config file " + p.string() + " is not valid JSON: " + e.what());
  }
}

fs::path config_dir(const Context& ctx) { return fs::absolute(ctx.common.config).parent_path(); }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_run_records(const Context& ctx, const fs::path& out_dir, const json& resolved, std::optional<std::uint64_t> seed) {
  fs::create_directories(out_dir);
  write_json_file(out_dir / "resolved_config.json", resolved);
  json prov{{"tool", "icefm"},
            {"version", kVersion},
            {"command", ctx.command},
            {"config_hash", config_hash(resolved)},
            {"config_path", ctx.common.config},
            {"seed_override", ctx.common.seed.has_value()},
            {"timestamp", utc_timestamp()},
            {"argv", ctx.argv}};
  prov["seed"] = seed ? json(*seed) : json(nullptr);
  write_json_file(out_dir / "provenance.json", prov);
}

std::vector<std::uint64_t> seeds_with_override(const Context& ctx, const std::vector<std::uint64_t>& seeds) {
  return ctx.common.seed ? std::vector<std::uint64_t>{*ctx.common.seed} : seeds;
}

struct DomainSel {
  std::optional<Season> season;
  std::optional<Region> region;
};

DomainSel parse_domain(const std::string& d) {
  if (d == "all") return {};
  for (auto s : kSeasons)
    if (to_string(s) == d) return {s, std::nullopt};
  for (auto r : kRegions)
    if (to_string(r) == d) return {std::nullopt, r};
  throw ValidationError("unknown domain '" + d + "' (expected 'all', a season or a region)");
}

fs::path resolve_path(const fs::path& p, const fs::path& base) { return p.is_relative() ? base / p : p; }

// ---------------------------------------------------------------- commands

int cmd_synth(const Context& ctx) {
  json j = load_config(ctx);
  if (ctx.common.seed) j["rng_seed"] = *ctx.common.seed;
  const SynthConfig cfg = synth_config_from_json(j);
  const fs::path out = resolve_out_dir(ctx);
  const auto m = generate_dataset(cfg, out);
  const json resolved = to_json(cfg);
  write_run_records(ctx, out, resolved, cfg.rng_seed);
  ctx.log("wrote " + std::to_string(m.scenes.size()) + " scenes and manifest.json to " + out.string());
  return 0;
}

int cmd_train(const Context& ctx) {
  const json j = load_config(ctx);
  const fs::path base = config_dir(ctx);
  if (!j.contains("dataset")) throw ValidationError("train: missing 'dataset'");
  if (!j.contains("model")) throw ValidationError("train: missing 'model'");
  const fs::path manifest_path = resolve_path(j.at("dataset").get<std::string>(), base);
  const ModelSpec spec = model_spec_from_json(j.at("model"));
  const StrategyConfig strategy = j.contains("strategy") ? strategy_config_from_any(j.at("strategy")) : StrategyConfig{};
  TrainConfig tc = j.contains("train") ? train_config_from_json(j.at("train")) : TrainConfig{};
  if (ctx.common.seed) tc.seed = *ctx.common.seed;
  const int per_scene = j.value("patches_per_scene", 32);
  const bool augment = j.value("augment", true);
  const std::string domain = j.value("train_domain", std::string("all"));
  const DomainSel sel = parse_domain(domain);
  if (per_scene < 1) throw ValidationError("train: patches_per_scene must be >= 1");
  if (!strategy_supported(strategy.kind, spec.kind))
    throw UnsupportedArchitecture("train: strategy '" + to_string(strategy.kind) + "' does not apply to " + to_string(spec.kind));

  const DatasetManifest m = load_manifest(manifest_path);
  const ChannelMode ch = channel_mode_for(spec.in_channels);
  const auto train_refs = m.split("train", sel.season, sel.region);
  if (train_refs.empty()) throw ValidationError("train: no training scenes for domain '" + domain + "'");
  auto val_refs = m.split("val", sel.season, sel.region);
  if (val_refs.empty()) val_refs = m.split("val");
  if (val_refs.empty()) throw ValidationError("train: the dataset has no validation scenes");
  const auto train = load_patches(m, train_refs, PatchMode::random_train, per_scene, augment, ch, derive_seed(tc.seed, "patches"));
  const auto val = load_patches(m, val_refs, PatchMode::tiled_eval, 0, false, ch, 0);

  const json resolved{{"dataset", fs::absolute(manifest_path).string()},
                      {"model", to_json(spec)},
                      {"strategy", to_json(strategy)},
                      {"train", to_json(tc)},
                      {"patches_per_scene", per_scene},
                      {"augment", augment},
                      {"train_domain", domain}};
  const fs::path out = resolve_out_dir(ctx);
  write_run_records(ctx, out, resolved, tc.seed);

  Rng rng(derive_seed(tc.seed, "init"));
  auto plan = apply_strategy(build_model<float>(spec, rng), strategy, rng);
  for (const auto& w : plan.warnings) ctx.log("warning: " + w);
  FitOptions fo;
  fo.out_dir = out;
  fo.meta = {to_string(strategy.kind), domain, {}};
  fo.on_epoch = [&](const EpochRecord& r) {
    ctx.log("epoch " + std::to_string(r.epoch) + " train_loss=" + std::to_string(r.train_loss) + " val_loss=" + std::to_string(r.val_loss), 2);
  };
  const TrainResult tr = fit(plan, train, val, tc, fo);
  write_json_file(out / "efficiency.json", to_json(tr.efficiency));
  const auto test_refs = m.split("test");
  if (!test_refs.empty()) {
    const MetricsReport r = report(evaluate(*plan.model, load_patches(m, test_refs, PatchMode::tiled_eval, 0, false, ch, 0)));
    write_json_file(out / "metrics.json", to_json(r));
    write_text_file(out / "metrics.csv", metrics_csv_header() + "\n" + metrics_csv_row(spec.name, to_string(strategy.kind), spec.in_channels, r) + "\n");
    ctx.log("test f1=" + format_metric(r.weighted_f1));
  }
  ctx.log("best epoch " + std::to_string(tr.best_epoch) + "; checkpoint " + tr.best_checkpoint.string());
  return 0;
}

int cmd_eval(const Context& ctx) {
  const json j = load_config(ctx);
  const fs::path base = config_dir(ctx);
  if (!j.contains("checkpoint")) throw ValidationError("eval: missing 'checkpoint'");
  if (!j.contains("dataset")) throw ValidationError("eval: missing 'dataset'");
  const fs::path ckpt = resolve_path(j.at("checkpoint").get<std::string>(), base);
  const fs::path manifest_path = resolve_path(j.at("dataset").get<std::string>(), base);
  const std::string split = j.value("split", std::string("test"));
  const std::string domain = j.value("domain", std::string("all"));
  const DomainSel sel = parse_domain(domain);
  const DatasetManifest m = load_manifest(manifest_path);
  const auto loaded = load_checkpoint(ckpt);
  const ModelSpec& spec = loaded.model->spec();
  if (spec.class_count != m.class_count)
    throw ValidationError("eval: checkpoint has " + std::to_string(spec.class_count) + " classes but the dataset has " + std::to_string(m.class_count));
  const auto refs = m.split(split, sel.season, sel.region);
  if (refs.empty()) throw ValidationError("eval: no '" + split + "' scenes for domain '" + domain + "'");
  const auto data = load_patches(m, refs, PatchMode::tiled_eval, 0, false, channel_mode_for(spec.in_channels), 0);

  const json resolved{{"checkpoint", fs::absolute(ckpt).string()}, {"dataset", fs::absolute(manifest_path).string()}, {"split", split}, {"domain", domain}};
  const fs::path out = resolve_out_dir(ctx);
  write_run_records(ctx, out, resolved, std::nullopt);
  const ConfusionMatrix cm = evaluate(*loaded.model, data);
  const MetricsReport r = report(cm);
  write_json_file(out / "metrics.json", to_json(r));
  write_json_file(out / "confusion.json", to_json(cm));
  const std::string row = metrics_csv_row(spec.name, loaded.meta.strategy, spec.in_channels, r);
  write_text_file(out / "metrics.csv", metrics_csv_header() + "\n" + row + "\n");
  *ctx.out << metrics_csv_header() << "\n" << row << "\n";
  return 0;
}

int cmd_bench(const Context& ctx) {
  GridSpec g = grid_spec_from_json(load_config(ctx), config_dir(ctx));
  g.seeds = seeds_with_override(ctx, g.seeds);
  const fs::path out = resolve_out_dir(ctx);
  write_run_records(ctx, out, to_json(g), ctx.common.seed);
  const auto rep = run_grid(g, out, ctx.bench_options());
  int failed = 0;
  for (const auto& r : rep.rows) failed += r.status == "failed";
  ctx.log(std::to_string(rep.rows.size()) + " cells (" + std::to_string(rep.executed) + " run, " + std::to_string(failed) + " failed); report at " +
          (out / "report.csv").string());
  return failed ? 2 : 0;
}

int cmd_transfer(const Context& ctx) {
  TransferSpec t = transfer_spec_from_json(load_config(ctx), config_dir(ctx));
  t.seeds = seeds_with_override(ctx, t.seeds);
  const fs::path out = resolve_out_dir(ctx);
  write_run_records(ctx, out, to_json(t), ctx.common.seed);
  run_transfer(t, out, ctx.bench_options());
  ctx.log("transfer matrix at " + (out / "transfer_matrix.csv").string());
  return 0;
}

int cmd_datasize(const Context& ctx) {
  SweepSpec s = sweep_spec_from_json(load_config(ctx), config_dir(ctx));
  s.seeds = seeds_with_override(ctx, s.seeds);
  const fs::path out = resolve_out_dir(ctx);
  write_run_records(ctx, out, to_json(s), ctx.common.seed);
  run_sweep(s, out, ctx.bench_options());
  ctx.log("sweep series at " + (out / "sweep.csv").string());
  return 0;
}

int cmd_distill(const Context& ctx) {
  KdExperimentSpec k = kd_experiment_from_json(load_config(ctx), config_dir(ctx));
  k.seeds = seeds_with_override(ctx, k.seeds);
  const fs::path out = resolve_out_dir(ctx);
  write_run_records(ctx, out, to_json(k), ctx.common.seed);
  run_kd_experiment(k, out, ctx.bench_options());
  ctx.log("table at " + (out / "table4.csv").string());
  return 0;
}

// ---------------------------------------------------------------- report

CsvTable pivot_transfer(const CsvTable& in) {
  const auto ctr = in.column("train_domain"), cte = in.column("test_domain"), cf = in.column("f1");
  std::vector<std::string> train, test;
  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
  for (const auto& r : in.rows) {
    if (std::find(train.begin(), train.end(), r[ctr]) == train.end()) train.push_back(r[ctr]);
    if (std::find(test.begin(), test.end(), r[cte]) == test.end()) test.push_back(r[cte]);
    cells[{r[ctr], r[cte]}].push_back(std::stod(r[cf]));
  }
  std::vector<std::vector<double>> f1(train.size(), std::vector<double>(test.size(), 0.0));
  for (std::size_t a = 0; a < train.size(); ++a)
    for (std::size_t b = 0; b < test.size(); ++b) {
      auto it = cells.find({train[a], test[b]});
      if (it == cells.end()) throw ValidationError("report: transfer input lacks the cell " + train[a] + " -> " + test[b]);
      f1[a][b] = median(it->second);
    }
  return transfer_matrix_table(train, test, f1);
}

CsvTable sweep_series(const CsvTable& in) {
  const auto csize = in.column("size");
  const std::vector<std::string> metrics{"f1", "acc", "prec", "rec", "iou"};
  std::vector<std::size_t> cols;
  for (const auto& m : metrics) cols.push_back(in.column(m));
  std::map<long long, std::vector<std::vector<double>>> by_size;
  for (const auto& r : in.rows) {
    if (in.has_column("status") && r[in.column("status")] != "ok") continue;
    auto& v = by_size[std::stoll(r[csize])];
    v.resize(metrics.size());
    for (std::size_t k = 0; k < metrics.size(); ++k) v[k].push_back(std::stod(r[cols[k]]));
  }
  CsvTable t;
  t.header = {"size", "seeds", "f1", "acc", "prec", "rec", "iou"};
  for (const auto& [size, v] : by_size) {
    std::vector<std::string> line{std::to_string(size), std::to_string(v[0].size())};
    for (const auto& xs : v) line.push_back(format_metric(median(xs)));
    t.rows.push_back(std::move(line));
  }
  return t;
}

CsvTable table4_passthrough(const CsvTable& in) {
  CsvTable t;
  t.header = {"model", "f1", "acc", "prec", "rec", "iou"};
  std::vector<std::size_t> cols;
  for (const auto& h : t.header) cols.push_back(in.column(h));
  for (const auto& r : in.rows) {
    std::vector<std::string> line;
    for (auto c : cols) line.push_back(r[c]);
    t.rows.push_back(std::move(line));
  }
  return t;
}

int cmd_report(const Context& ctx, const std::string& in_arg, const std::string& format) {
  static const std::map<std::string, std::pair<std::string, std::string>> kFormats{
      {"table2", {"report.csv", "table2.csv"}},       {"radar", {"report.csv", "radar.csv"}},
      {"transfer", {"transfer_long.csv", "transfer_matrix.csv"}}, {"sweep", {"sweep.csv", "sweep_series.csv"}},
      {"table4", {"table4.csv", "table4.csv"}}};
  const auto f = kFormats.find(format);
  if (f == kFormats.end()) throw ValidationError("report: unknown format '" + format + "' (table2, radar, transfer, sweep, table4)");
  if (in_arg.empty()) throw ValidationError("report: --in is required");
  fs::path in = in_arg;
  if (fs::is_directory(in)) in /= f->second.first;
  if (!fs::exists(in)) throw ValidationError("report: input not found: " + in.string());

  CsvTable table;
  if (format == "table2")
    table = table2_table(read_report(in));
  else if (format == "radar")
    table = radar_table(read_report(in));
  else if (format == "transfer")
    table = pivot_transfer(read_csv(in));
  else if (format == "sweep")
    table = sweep_series(read_csv(in));
  else
    table = table4_passthrough(read_csv(in));

  const fs::path out = resolve_out_dir(ctx, fs::absolute(in).parent_path());
  const fs::path target = out / f->second.second;
  if (fs::exists(target) && fs::equivalent(target, in)) throw ValidationError("report: refusing to overwrite the input " + in.string());
  write_csv(target, table);
  write_run_records(ctx, out, {{"in", fs::absolute(in).string()}, {"format", format}}, std::nullopt);
  *ctx.out << csv_line(table.header) << "\n";
  for (const auto& r : table.rows) *ctx.out << csv_line(r) << "\n";
  return 0;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config,-c", c.config, "JSON config file");
  sub->add_option("--out,-o", c.out, "output directory (default: $ICEFM_OUT_DIR)");
  sub->add_option("--seed", c.seed, "override the config seed");
  sub->add_option("--jobs,-j", c.jobs, "parallel benchmark cells")->check(CLI::PositiveNumber);
  sub->add_option("--verbosity,-v", c.verbosity, "0 quiet, 1 progress, 2 per-epoch")->check(CLI::Range(0, 2));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sea-ice segmentation benchmark toolkit", "icefm"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough(false);

  Context ctx;
  ctx.argv = args;
  ctx.out = &out;
  ctx.err = &err;
  std::string report_in, report_format;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate a synthetic dataset"},      {"train", "train one model with one strategy"},
      {"eval", "evaluate a checkpoint"},              {"bench", "run the model x strategy grid"},
      {"transfer", "season or region transfer matrix"}, {"datasize", "training-set size sweep"},
      {"distill", "multi-teacher distillation vs hard-label student"}, {"report", "emit table/chart data from result CSVs"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, ctx.common);
    subs[name] = sub;
  }
  subs["report"]->add_option("--in", report_in, "input CSV file or result directory");
  subs["report"]->add_option("--format", report_format, "table2, radar, transfer, sweep or table4")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (!args.empty() && args[0].rfind('-', 0) != 0 && !subs.count(args[0])) {
      err << "icefm: unknown command '" << args[0] << "'\n\n" << app.help();
      return 1;
    }
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  for (const auto& [name, sub] : subs)
    if (sub->parsed()) ctx.command = name;
  try {
    if (ctx.command == "synth") return cmd_synth(ctx);
    if (ctx.command == "train") return cmd_train(ctx);
    if (ctx.command == "eval") return cmd_eval(ctx);
    if (ctx.command == "bench") return cmd_bench(ctx);
    if (ctx.command == "transfer") return cmd_transfer(ctx);
    if (ctx.command == "datasize") return cmd_datasize(ctx);
    if (ctx.command == "distill") return cmd_distill(ctx);
    return cmd_report(ctx, report_in, report_format);
  } catch (const ValidationError& e) {
    err << "icefm " << ctx.command << ": invalid input: " << e.what() << "\n";
    return 1;
  } catch (const UnsupportedArchitecture& e) {
    err << "icefm " << ctx.command << ": invalid input: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    err << "icefm " << ctx.command << ": invalid input file: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "icefm " << ctx.command << ": invalid config: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "icefm " << ctx.command << ": failed: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace icefm::cli
