// Serial references against their OpenMP kernels.

#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <thread>

#include "famguard/baselines.hpp"
#include "famguard/concepts.hpp"
#include "famguard/config.hpp"
#include "famguard/evalkit.hpp"
#include "famguard/familiarity.hpp"
#include "famguard/lm.hpp"
#include "famguard/parallel.hpp"

using namespace famguard;

namespace {

int hardware_jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

std::vector<double> random_scores(std::size_t n) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.3, 1.0);
  std::vector<double> out(n);
  for (auto& x : out) x = u(rng);
  return out;
}

std::vector<std::string> random_texts(std::size_t n, std::size_t words) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> w(0, 200);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    for (std::size_t k = 0; k < words; ++k) t += "w" + std::to_string(w(rng)) + " ";
    out.push_back(std::move(t));
  }
  return out;
}

void BM_BootstrapSerial(benchmark::State& state) {
  const auto scores = random_scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap_statistics_serial(scores, 1000, 0.05, 42));
}

void BM_BootstrapParallel(benchmark::State& state) {
  const auto scores = random_scores(static_cast<std::size_t>(state.range(0)));
  const int jobs = hardware_jobs();
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap_statistics_parallel(scores, 1000, 0.05, 42, jobs));
}

void BM_SimilaritySerial(benchmark::State& state) {
  const auto texts = random_texts(static_cast<std::size_t>(state.range(0)), 60);
  TokenF1Similarity f1;
  for (auto _ : state) benchmark::DoNotOptimize(similarity_matrix_serial(f1, texts));
}

void BM_SimilarityParallel(benchmark::State& state) {
  const auto texts = random_texts(static_cast<std::size_t>(state.range(0)), 60);
  TokenF1Similarity f1;
  const int jobs = hardware_jobs();
  for (auto _ : state) benchmark::DoNotOptimize(similarity_matrix_parallel(f1, texts, jobs));
}

void score_records(benchmark::State& state, int jobs) {
  auto model = load_toy_lm(FAMGUARD_FIXTURE_DIR "/toy_lm.json");
  const auto dict = FrequencyDictionary::load(FAMGUARD_FIXTURE_DIR "/freq_dict.txt");
  const auto opts = PipelineOptions::from_config(Config{});
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<double> out(n);
  for (auto _ : state) {
    parallel_for(n, jobs, [&](std::size_t i) {
      out[i] = assess_concept(*model, dict, i % 2 ? "Pepsi" : "Zorblax", "drinks", opts).instruction_score;
    });
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_RecordScoringSerial(benchmark::State& state) { score_records(state, 1); }
void BM_RecordScoringParallel(benchmark::State& state) { score_records(state, hardware_jobs()); }

}  // namespace

BENCHMARK(BM_BootstrapSerial)->Arg(50)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BootstrapParallel)->Arg(50)->Arg(1000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SimilaritySerial)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimilarityParallel)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_RecordScoringSerial)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RecordScoringParallel)->Arg(64)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
