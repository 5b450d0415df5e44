#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fidolab/model.hpp"

namespace fidolab {

// Toy-scale inference benchmark: real forward/decode passes with
// counters, cross-checked against the analytical cost model. Wall-clock
// numbers are informational only (commodity CPU, not an accelerator);
// the counters are the verifiable surface.
struct BenchReport {
  ModelConfig config;
  int batch = 0;
  int repeats = 0;
  std::uint64_t seed = 0;
  int steps_per_sample = 0;            // decode steps actually taken (eos disabled)

  std::vector<double> raw_wall_totals; // one entry per timed repeat, seconds
  double median_wall_encoder = 0.0;
  double median_wall_decoder = 0.0;
  double median_wall_total = 0.0;
  double samples_per_sec = 0.0;

  Counters encoder_counters;           // aggregated over the batch, one run
  Counters decoder_counters;

  // |measured - formula| / formula against the cost model evaluated at
  // the same shape (8-byte floats, per-sample times batch). Exact match
  // is expected: the engine and the formulas share one definition.
  double rel_err_enc_multiplies = 0.0;
  double rel_err_dec_multiplies = 0.0;
  double rel_err_dec_kv_bytes = 0.0;
};

// Runs `repeats` timed batch decodes (plus one untimed warm-up) on a
// seeded random model. Guard: d <= 1024 and n_s <= 16384; larger shapes
// throw std::invalid_argument advising cost-model-only analysis.
// Samples decode on parallel threads, capped by FIDO_LAB_THREADS.
BenchReport run_bench(const ModelConfig& cfg, int batch, int repeats, std::uint64_t seed);

std::string bench_report_to_json(const BenchReport& r);
std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& r);

}  // namespace fidolab
