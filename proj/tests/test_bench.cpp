#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <string>

#include "fidolab/bench.hpp"

using namespace fidolab;

namespace {

ModelConfig toy(int K = 1) {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.h = 4;
  cfg.d_ff = 128;
  cfg.L_enc = 2;
  cfg.L_dec = 2;
  cfg.K = K;
  cfg.vocab = 128;
  cfg.n_p = 16;
  cfg.n_passages = 4;
  cfg.n_t_max = 8;
  return cfg;
}

}  // namespace

TEST_CASE("guard rejects configs beyond toy scale") {
  ModelConfig cfg = toy();
  cfg.d = 4096;
  cfg.d_ff = 4 * 4096;
  try {
    run_bench(cfg, 1, 1, 0);
    FAIL("expected std::invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("cost model") != std::string::npos);
  }

  ModelConfig wide = toy();
  wide.n_passages = 4096;  // n_s = 65536 > 16384
  CHECK_THROWS_AS(run_bench(wide, 1, 1, 0), std::invalid_argument);
}

TEST_CASE("counter-vs-costmodel relative error is exactly zero") {
  const BenchReport r = run_bench(toy(2), 3, 2, 7);
  CHECK(r.rel_err_enc_multiplies == 0.0);
  CHECK(r.rel_err_dec_multiplies == 0.0);
  CHECK(r.rel_err_dec_kv_bytes == 0.0);
}

TEST_CASE("report carries one raw timing per repeat plus medians") {
  const BenchReport r = run_bench(toy(), 2, 5, 1);
  CHECK(r.raw_wall_totals.size() == 5);
  CHECK(r.median_wall_total > 0.0);
  CHECK(r.samples_per_sec > 0.0);
  CHECK(r.steps_per_sample == toy().n_t_max);
  // The phase medians account for the total up to scheduling noise
  // between the two barriers.
  CHECK(r.median_wall_encoder + r.median_wall_decoder <= r.median_wall_total * 1.25);
  CHECK(r.median_wall_encoder > 0.0);
  CHECK(r.median_wall_decoder > 0.0);
}

TEST_CASE("counters are deterministic for a fixed seed") {
  const BenchReport a = run_bench(toy(2), 4, 2, 42);
  const BenchReport b = run_bench(toy(2), 4, 2, 42);
  CHECK(a.encoder_counters.multiplies == b.encoder_counters.multiplies);
  CHECK(a.decoder_counters.multiplies == b.decoder_counters.multiplies);
  CHECK(a.decoder_counters.bytes_kv == b.decoder_counters.bytes_kv);
}

TEST_CASE("thread cap does not change counters") {
  setenv("FIDO_LAB_THREADS", "1", 1);
  const BenchReport serial = run_bench(toy(), 4, 1, 3);
  setenv("FIDO_LAB_THREADS", "4", 1);
  const BenchReport parallel = run_bench(toy(), 4, 1, 3);
  unsetenv("FIDO_LAB_THREADS");
  CHECK(serial.encoder_counters.multiplies == parallel.encoder_counters.multiplies);
  CHECK(serial.decoder_counters.multiplies == parallel.decoder_counters.multiplies);
}

TEST_CASE("encoder multiplies grow exactly linearly in n_passages") {
  std::vector<double> xs, ys;
  for (int n : {2, 4, 6, 8}) {
    ModelConfig cfg = toy();
    cfg.n_passages = n;
    const BenchReport r = run_bench(cfg, 1, 1, 5);
    xs.push_back(static_cast<double>(n));
    ys.push_back(static_cast<double>(r.encoder_counters.multiplies));
  }
  // R^2 of the least-squares line over the four points.
  const std::size_t n = xs.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double fit = slope * xs[i] + intercept;
    ss_res += (ys[i] - fit) * (ys[i] - fit);
    ss_tot += (ys[i] - sy / n) * (ys[i] - sy / n);
  }
  const double r2 = 1.0 - ss_res / ss_tot;
  CHECK(r2 >= 0.999);
  CHECK(slope > 0.0);
}

TEST_CASE("decoder/encoder multiply ratio matches the exact formulas") {
  const BenchReport r = run_bench(toy(), 2, 1, 9);
  const double measured = static_cast<double>(r.decoder_counters.multiplies) /
                          static_cast<double>(r.encoder_counters.multiplies);
  // Independent evaluation of the same per-layer expressions.
  const double d = 32, ns = 64, np = 16, nt = 8, L = 2;
  const double enc = L * (12 * ns * d * d + 2 * ns * np * d);
  const double dec = L * (12 * nt * d * d + nt * (nt + 1) * d) +
                     L * (2 * nt * d * d + 2 * ns * d * d + 2 * nt * ns * d);
  CHECK(measured == doctest::Approx(dec / enc).epsilon(1e-12));
}

TEST_CASE("report serializes to JSON and CSV") {
  const BenchReport r = run_bench(toy(), 1, 2, 11);
  const std::string j = bench_report_to_json(r);
  CHECK(j.find("\"rel_err_dec_multiplies\": 0.0") != std::string::npos);
  const std::string header = bench_csv_header();
  const std::string row = bench_csv_row(r);
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(row.begin(), row.end(), ','));
}
