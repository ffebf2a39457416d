// SPDX-License-Identifier: Apache-2.0
#include "icefm/profiler.hpp"

#include <sys/resource.h>
#include <time.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "icefm/io.hpp"
#include "icefm/metrics.hpp"

namespace icefm {

namespace {

constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

double process_cpu_seconds() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) + 1e-6 * static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec);
}

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

std::string optional_field(const std::optional<double>& v) { return v ? format_metric(*v) : std::string(); }

}  // namespace

std::string to_string(Phase p) { return p == Phase::train ? "train" : "inference"; }

std::optional<std::int64_t> resident_bytes() {
  std::ifstream in("/proc/self/statm");
  std::int64_t size = 0, resident = 0;
  if (!(in >> size >> resident)) return std::nullopt;
  return resident * static_cast<std::int64_t>(sysconf(_SC_PAGESIZE));
}

nlohmann::json to_json(const EfficiencyRecord& r) {
  nlohmann::json j{{"phase", to_string(r.phase)},
                   {"peak_host_mem_gb", r.peak_host_mem_gb},
                   {"mean_cpu_util_pct", r.mean_cpu_util_pct},
                   {"minutes_per_epoch", r.minutes_per_epoch},
                   {"total_minutes", r.total_minutes},
                   {"sample_count", r.sample_count},
                   {"epochs", r.epochs},
                   {"trainable_params", r.trainable_params},
                   {"optimizer_state_bytes", r.optimizer_state_bytes},
                   {"warnings", r.warnings}};
  j["peak_accelerator_mem_gb"] = r.peak_accelerator_mem_gb ? nlohmann::json(*r.peak_accelerator_mem_gb) : nlohmann::json();
  j["mean_accelerator_util_pct"] = r.mean_accelerator_util_pct ? nlohmann::json(*r.mean_accelerator_util_pct) : nlohmann::json();
  return j;
}

struct Sampler::State {
  ProfilerOptions opt;
  std::thread thread;
  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::chrono::steady_clock::time_point t0;
  double cpu0 = 0.0;
  std::int64_t baseline_rss = 0;
  std::int64_t peak_rss = 0;
  std::vector<double> util;
  double last_cpu = 0.0;
  std::chrono::steady_clock::time_point last_t;
  bool rss_ok = true;
  double sampler_cpu = 0.0;

  void sample() {
    const auto now = std::chrono::steady_clock::now();
    const double cpu = process_cpu_seconds();
    const double wall = std::chrono::duration<double>(now - last_t).count();
    if (wall > 0.0) util.push_back(100.0 * (cpu - last_cpu) / wall);
    last_cpu = cpu;
    last_t = now;
    if (auto rss = resident_bytes())
      peak_rss = std::max(peak_rss, *rss);
    else
      rss_ok = false;
  }

  void loop() {
    const double c0 = thread_cpu_seconds();
    std::unique_lock lock(mu);
    while (!cv.wait_for(lock, opt.interval, [&] { return stopping; })) sample();
    sampler_cpu = thread_cpu_seconds() - c0;
  }
};

Sampler::Sampler(ProfilerOptions opt) : state_(std::make_unique<State>()) { state_->opt = opt; }

Sampler::~Sampler() {
  if (state_->thread.joinable()) {
    {
      std::lock_guard lock(state_->mu);
      state_->stopping = true;
    }
    state_->cv.notify_all();
    state_->thread.join();
  }
}

void Sampler::start() {
  auto& s = *state_;
  s.t0 = s.last_t = std::chrono::steady_clock::now();
  s.cpu0 = s.last_cpu = process_cpu_seconds();
  const auto rss = resident_bytes();
  s.rss_ok = rss.has_value();
  s.baseline_rss = s.peak_rss = rss.value_or(0);
  s.stopping = false;
  s.util.clear();
  try {
    s.thread = std::thread([&s] { s.loop(); });
  } catch (const std::system_error&) {
    s.rss_ok = false;
  }
}

EfficiencyRecord Sampler::stop(Phase phase) {
  auto& s = *state_;
  const bool threaded = s.thread.joinable();
  if (threaded) {
    {
      std::lock_guard lock(s.mu);
      s.stopping = true;
    }
    s.cv.notify_all();
    s.thread.join();
  }
  s.sample();
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - s.t0).count();
  EfficiencyRecord r;
  r.phase = phase;
  r.total_minutes = wall / 60.0;
  r.minutes_per_epoch = phase == Phase::train ? r.total_minutes : 0.0;
  r.peak_host_mem_gb = static_cast<double>(s.peak_rss) / kGiB;
  double sum = 0.0;
  for (double u : s.util) sum += u;
  r.mean_cpu_util_pct = s.util.empty() ? 0.0 : std::max(0.0, sum / static_cast<double>(s.util.size()));
  r.sample_count = static_cast<std::int64_t>(s.util.size());
  r.sampler_cpu_seconds = s.sampler_cpu;
  if (!threaded) r.warnings.emplace_back("profiler: sampler thread unavailable; only start/stop samples recorded");
  if (!s.rss_ok) r.warnings.emplace_back("profiler: resident memory unavailable; host memory not recorded");
  return r;
}

std::string efficiency_csv_header() {
  return "model,strategy,gpu_mem_gb,ram_gb,gpu_util_pct,cpu_util_pct,t_time_min_per_epoch,i_gpu_mem_gb,i_ram_gb,i_gpu_util_pct,"
         "i_cpu_util_pct,i_time_min,trainable_params,optimizer_state_bytes";
}

std::string efficiency_csv_row(const std::string& model, const std::string& strategy, const EfficiencyRecord& train,
                               const std::optional<EfficiencyRecord>& inference) {
  std::vector<std::string> f{model,
                             strategy,
                             optional_field(train.peak_accelerator_mem_gb),
                             format_metric(train.peak_host_mem_gb),
                             optional_field(train.mean_accelerator_util_pct),
                             format_metric(train.mean_cpu_util_pct),
                             format_metric(train.minutes_per_epoch)};
  if (inference) {
    f.push_back(optional_field(inference->peak_accelerator_mem_gb));
    f.push_back(format_metric(inference->peak_host_mem_gb));
    f.push_back(optional_field(inference->mean_accelerator_util_pct));
    f.push_back(format_metric(inference->mean_cpu_util_pct));
    f.push_back(format_metric(inference->total_minutes));
  } else {
    f.insert(f.end(), 5, std::string());
  }
  f.push_back(std::to_string(train.trainable_params));
  f.push_back(std::to_string(train.optimizer_state_bytes));
  return csv_line(f);
}

}  // namespace icefm
