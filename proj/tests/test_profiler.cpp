// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <thread>

#include "icefm/io.hpp"
#include "icefm/profiler.hpp"

namespace icefm {
namespace {

using namespace std::chrono_literals;

TEST(Profiler, SleepWorkloadWallClock) {
  const auto rec = profile([] { std::this_thread::sleep_for(1200ms); }, Phase::inference);
  EXPECT_GE(rec.total_minutes, 0.02);
  EXPECT_LE(rec.total_minutes, 0.03);
  EXPECT_EQ(rec.phase, Phase::inference);
  EXPECT_GE(rec.sample_count, 2);
  EXPECT_FALSE(rec.peak_accelerator_mem_gb.has_value());
  EXPECT_FALSE(rec.mean_accelerator_util_pct.has_value());
  EXPECT_GT(rec.peak_host_mem_gb, 0.0);
  EXPECT_LT(rec.mean_cpu_util_pct, 50.0);
}

TEST(Profiler, HeldAllocationRaisesPeakResidentMemory) {
  const double baseline = static_cast<double>(resident_bytes().value()) / (1024.0 * 1024.0 * 1024.0);
  const auto rec = profile(
      [] {
        const std::size_t n = 512ull * 1024 * 1024;
        std::unique_ptr<char[]> block(new char[n]);
        std::memset(block.get(), 1, n);
        std::this_thread::sleep_for(700ms);
        volatile char sink = block[n / 3];
        (void)sink;
      },
      Phase::train);
  EXPECT_GE(rec.peak_host_mem_gb, baseline + 0.45);
}

TEST(Profiler, ReturnsWorkResultAndTracksBusyCpu) {
  auto [value, rec] = profile(
      [] {
        const auto end = std::chrono::steady_clock::now() + 1100ms;
        double x = 0;
        while (std::chrono::steady_clock::now() < end) x += 1e-9;
        return x > 0 ? 42 : 0;
      },
      Phase::train, ProfilerOptions{100ms});
  EXPECT_EQ(value, 42);
  EXPECT_GT(rec.mean_cpu_util_pct, 50.0);
  EXPECT_GE(rec.sample_count, 5);
}

TEST(Profiler, LongerRunsReportLongerTimes) {
  const auto a = profile([] { std::this_thread::sleep_for(100ms); }, Phase::inference);
  const auto b = profile([] { std::this_thread::sleep_for(200ms); }, Phase::inference);
  EXPECT_GE(b.total_minutes, a.total_minutes);
}

TEST(Profiler, CsvLeavesAbsentAcceleratorFieldsEmpty) {
  EfficiencyRecord train;
  train.peak_host_mem_gb = 1.5;
  train.mean_cpu_util_pct = 90;
  train.minutes_per_epoch = 0.25;
  train.trainable_params = 10;
  train.optimizer_state_bytes = 80;
  const std::string row = efficiency_csv_row("vit", "bitfit", train, std::nullopt);
  EXPECT_EQ(row, "vit,bitfit,,1.500000,,90.000000,0.250000,,,,,,10,80");
  const std::string header = efficiency_csv_header();
  const auto header_fields = std::count(header.begin(), header.end(), ',');
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), header_fields);
  EXPECT_EQ(train.memory_proxy_bytes(), 120);
  EXPECT_TRUE(to_json(train)["peak_accelerator_mem_gb"].is_null());
}

}  // namespace
}  // namespace icefm
