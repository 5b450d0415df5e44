#include "fidolab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "fidolab/costmodel.hpp"
#include "fidolab/decoding.hpp"

namespace fidolab {

namespace {

using Clock = std::chrono::steady_clock;

int thread_budget(int batch) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("FIDO_LAB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return std::min(n, batch);
}

FiDInput make_input(const ModelConfig& cfg, std::uint64_t seed, int sample) {
  Rng rng(seed + 1000003ULL * static_cast<std::uint64_t>(sample + 1));
  auto draw = [&](int len) {
    std::vector<int> ids(static_cast<std::size_t>(len));
    for (int& id : ids) {
      id = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(cfg.vocab));
    }
    return ids;
  };
  FiDInput input;
  input.question = draw(cfg.n_p / 4);
  for (int p = 0; p < cfg.n_passages; ++p) input.passages.push_back(draw(cfg.n_p));
  return input;
}

// Run the workers over [0, batch), static chunking.
template <typename Fn>
void parallel_for_samples(int batch, int threads, Fn&& fn) {
  if (threads <= 1) {
    for (int i = 0; i < batch; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < batch; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double rel_err(std::uint64_t measured, std::uint64_t expected) {
  const double e = static_cast<double>(expected);
  return std::abs(static_cast<double>(measured) - e) / e;
}

CostInput cost_shape(const ModelConfig& cfg, int n_t) {
  CostInput c;
  c.b = 1;
  c.d = cfg.d;
  c.h = cfg.h;
  c.L_enc = cfg.L_enc;
  c.L_dec = cfg.L_dec;
  c.K = cfg.K;
  c.attention_kind = cfg.attention_kind;
  c.n_p = cfg.n_p;
  c.n_passages = cfg.n_passages;
  c.n_t = n_t;
  c.float_bytes = 8;  // engine stores doubles
  return c;
}

}  // namespace

BenchReport run_bench(const ModelConfig& cfg, int batch, int repeats, std::uint64_t seed) {
  cfg.validate();
  if (cfg.d > 1024 || cfg.n_s() > 16384) {
    throw std::invalid_argument(
        "bench: config exceeds the toy-scale guard (d <= 1024, n_s <= 16384); "
        "use the cost model for analysis at this scale");
  }
  if (batch < 1) throw std::invalid_argument("bench: batch must be >= 1");
  if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");

  const FidModel model = FidModel::randomly_initialized(cfg, seed);
  std::vector<FiDInput> inputs;
  inputs.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) inputs.push_back(make_input(cfg, seed, i));

  const int threads = thread_budget(batch);
  const int steps = cfg.n_t_max;

  BenchReport report;
  report.config = cfg;
  report.batch = batch;
  report.repeats = repeats;
  report.seed = seed;
  report.steps_per_sample = steps;

  std::vector<double> wall_enc, wall_dec;
  // One untimed warm-up run, then `repeats` timed runs.
  for (int run = 0; run <= repeats; ++run) {
    std::vector<Counters> enc_ctrs(static_cast<std::size_t>(batch));
    std::vector<Counters> dec_ctrs(static_cast<std::size_t>(batch));
    std::vector<EncoderOutput> encoded(static_cast<std::size_t>(batch));

    const auto t0 = Clock::now();
    parallel_for_samples(batch, threads, [&](int i) {
      encoded[static_cast<std::size_t>(i)] =
          model.encode(inputs[static_cast<std::size_t>(i)], enc_ctrs[static_cast<std::size_t>(i)]);
    });
    const auto t1 = Clock::now();
    parallel_for_samples(batch, threads, [&](int i) {
      auto& ctr = dec_ctrs[static_cast<std::size_t>(i)];
      KVCache cache = model.make_cache(encoded[static_cast<std::size_t>(i)], ctr);
      greedy_steps(model, cache, steps, kNoEos, ctr);
    });
    const auto t2 = Clock::now();

    if (run == 0) continue;  // warm-up
    wall_enc.push_back(std::chrono::duration<double>(t1 - t0).count());
    wall_dec.push_back(std::chrono::duration<double>(t2 - t1).count());
    report.raw_wall_totals.push_back(std::chrono::duration<double>(t2 - t0).count());

    if (run == repeats) {
      report.encoder_counters = Counters{};
      report.decoder_counters = Counters{};
      for (const auto& c : enc_ctrs) report.encoder_counters += c;
      for (const auto& c : dec_ctrs) report.decoder_counters += c;
    }
  }

  report.median_wall_encoder = median(wall_enc);
  report.median_wall_decoder = median(wall_dec);
  report.median_wall_total = median(report.raw_wall_totals);
  report.samples_per_sec = static_cast<double>(batch) / report.median_wall_total;

  const CostInput shape = cost_shape(cfg, steps);
  const std::uint64_t nb = static_cast<std::uint64_t>(batch);
  report.rel_err_enc_multiplies =
      rel_err(report.encoder_counters.multiplies, nb * encoder_flops_exact(shape));
  report.rel_err_dec_multiplies =
      rel_err(report.decoder_counters.multiplies, nb * decoder_flops_exact(shape));
  report.rel_err_dec_kv_bytes =
      rel_err(report.decoder_counters.bytes_kv, nb * decode_kv_read_bytes(shape));
  return report;
}

namespace {

nlohmann::json counters_json(const Counters& c) {
  nlohmann::json j;
  j["multiplies"] = c.multiplies;
  j["bytes_weights"] = c.bytes_weights;
  j["bytes_kv"] = c.bytes_kv;
  return j;
}

}  // namespace

std::string bench_report_to_json(const BenchReport& r) {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(model_config_to_json(r.config));
  j["batch"] = r.batch;
  j["repeats"] = r.repeats;
  j["seed"] = r.seed;
  j["steps_per_sample"] = r.steps_per_sample;
  j["raw_wall_totals"] = r.raw_wall_totals;
  j["median_wall_encoder"] = r.median_wall_encoder;
  j["median_wall_decoder"] = r.median_wall_decoder;
  j["median_wall_total"] = r.median_wall_total;
  j["samples_per_sec"] = r.samples_per_sec;
  j["encoder_counters"] = counters_json(r.encoder_counters);
  j["decoder_counters"] = counters_json(r.decoder_counters);
  j["rel_err_enc_multiplies"] = r.rel_err_enc_multiplies;
  j["rel_err_dec_multiplies"] = r.rel_err_dec_multiplies;
  j["rel_err_dec_kv_bytes"] = r.rel_err_dec_kv_bytes;
  return j.dump(2);
}

std::string bench_csv_header() {
  return "d,h,L_enc,L_dec,K,attention_kind,vocab,n_p,n_passages,n_t_max,"
         "batch,repeats,seed,steps_per_sample,median_wall_encoder,median_wall_decoder,"
         "median_wall_total,samples_per_sec,enc_multiplies,dec_multiplies,"
         "dec_bytes_weights,dec_bytes_kv,rel_err_enc_multiplies,rel_err_dec_multiplies,"
         "rel_err_dec_kv_bytes";
}

std::string bench_csv_row(const BenchReport& r) {
  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << r.config.d << ',' << r.config.h << ',' << r.config.L_enc << ',' << r.config.L_dec
     << ',' << r.config.K << ',' << to_string(r.config.attention_kind) << ','
     << r.config.vocab << ',' << r.config.n_p << ',' << r.config.n_passages << ','
     << r.config.n_t_max << ',' << r.batch << ',' << r.repeats << ',' << r.seed << ','
     << r.steps_per_sample << ',' << fmt(r.median_wall_encoder) << ','
     << fmt(r.median_wall_decoder) << ',' << fmt(r.median_wall_total) << ','
     << fmt(r.samples_per_sec) << ',' << r.encoder_counters.multiplies << ','
     << r.decoder_counters.multiplies << ',' << r.decoder_counters.bytes_weights << ','
     << r.decoder_counters.bytes_kv << ',' << fmt(r.rel_err_enc_multiplies) << ','
     << fmt(r.rel_err_dec_multiplies) << ',' << fmt(r.rel_err_dec_kv_bytes);
  return os.str();
}

}  // namespace fidolab
