// SPDX-License-Identifier: Apache-2.0
//
// Wall-clock, host-memory and CPU-utilization profiling of a unit of work.
// A background thread samples process counters at a fixed interval.
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

namespace icefm {

enum class Phase { train, inference };

std::string to_string(Phase p);

struct EfficiencyRecord {
  Phase phase = Phase::train;
  std::optional<double> peak_accelerator_mem_gb;    // absent without an accelerator backend
  double peak_host_mem_gb = 0.0;                    // resident set size
  std::optional<double> mean_accelerator_util_pct;  // absent without an accelerator backend
  double mean_cpu_util_pct = 0.0;                   // process CPU time / wall time, whole-run mean
  double minutes_per_epoch = 0.0;                   // train phase
  double total_minutes = 0.0;
  std::int64_t sample_count = 0;
  int epochs = 0;
  std::int64_t trainable_params = 0;
  std::int64_t optimizer_state_bytes = 0;
  double sampler_cpu_seconds = 0.0;  // CPU time spent by the sampler thread itself
  std::vector<std::string> warnings;

  /// Trainable parameter bytes plus optimizer state bytes.
  [[nodiscard]] std::int64_t memory_proxy_bytes() const { return trainable_params * 4 + optimizer_state_bytes; }
};

nlohmann::json to_json(const EfficiencyRecord& r);

/// Resident set size of this process in bytes, or nullopt if unavailable.
std::optional<std::int64_t> resident_bytes();

struct ProfilerOptions {
  std::chrono::milliseconds interval{500};
};

/// Samples host counters on a background thread between start() and stop().
class Sampler {
 public:
  explicit Sampler(ProfilerOptions opt = {});
  ~Sampler();
  Sampler(const Sampler&) = delete;
  Sampler& operator=(const Sampler&) = delete;

  void start();
  /// Stops sampling and fills the host and timing fields of a record.
  EfficiencyRecord stop(Phase phase);

 private:
  struct State;
  std::unique_ptr<State> state_;
};

/// Runs work() under a Sampler and returns its result with the record.
template <typename F>
auto profile(F&& work, Phase phase, ProfilerOptions opt = {}) {
  Sampler s(opt);
  s.start();
  if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
    std::forward<F>(work)();
    return s.stop(phase);
  } else {
    auto result = std::forward<F>(work)();
    auto rec = s.stop(phase);
    return std::make_pair(std::move(result), std::move(rec));
  }
}

/// Header of the efficiency CSV (one row per model/strategy and phase).
std::string efficiency_csv_header();
std::string efficiency_csv_row(const std::string& model, const std::string& strategy, const EfficiencyRecord& train,
                               const std::optional<EfficiencyRecord>& inference);

}  // namespace icefm
