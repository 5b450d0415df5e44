#include "fidolab/verify.hpp"

#include <cmath>
#include <sstream>

#include "fidolab/costmodel.hpp"
#include "fidolab/decoding.hpp"

namespace fidolab {

namespace {

ModelConfig toy_config(int K, AttentionKind kind) {
  ModelConfig cfg;
  cfg.d = 64;
  cfg.h = 4;
  cfg.d_ff = 256;
  cfg.L_enc = 4;
  cfg.L_dec = 4;
  cfg.K = K;
  cfg.attention_kind = kind;
  cfg.vocab = 512;
  cfg.n_p = 32;
  cfg.n_passages = 8;
  cfg.n_t_max = 32;
  return cfg;
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
  c.float_bytes = 8;
  return c;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Max abs difference between each incremental step's logits and the
// matching teacher-forced row, along the model's own greedy path.
double incremental_vs_teacher_gap(const FidModel& model, const FiDInput& input, int steps) {
  Counters scratch;
  const EncoderOutput enc = model.encode(input, scratch);
  KVCache cache = model.make_cache(enc, scratch);

  std::vector<std::vector<double>> step_logits;
  std::vector<int> tokens;
  int prev = FidModel::kBosToken;
  for (int t = 0; t < steps; ++t) {
    step_logits.push_back(model.decoder_step(cache, prev, scratch));
    const auto& logits = step_logits.back();
    int best = 0;
    for (int j = 1; j < static_cast<int>(logits.size()); ++j) {
      if (logits[j] > logits[best]) best = j;
    }
    tokens.push_back(best);
    prev = best;
  }

  const Matrix full = model.teacher_forced_forward(enc, tokens, scratch);
  double gap = 0.0;
  for (int t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < full.cols(); ++j) {
      gap = std::max(gap, std::abs(full.at(static_cast<std::size_t>(t), j) -
                                   step_logits[static_cast<std::size_t>(t)][j]));
    }
  }
  return gap;
}

SuiteResult suite_incremental_vs_teacher(const FidModel& model, const FiDInput& input) {
  const int steps = std::min(8, model.config().n_t_max);
  const double gap = incremental_vs_teacher_gap(model, input, steps);
  return {"incremental-vs-teacher-forced", gap <= 1e-9, "max logit gap " + fmt(gap)};
}

SuiteResult suite_mqa_tied_head(std::uint64_t seed) {
  const FidModel mqa = FidModel::randomly_initialized(toy_config(2, AttentionKind::MQA), seed);
  const FidModel mha = replicate_kv_heads(mqa);
  const FiDInput input = verification_input(mqa.config(), seed + 1);

  Counters scratch;
  const EncoderOutput enc = mqa.encode(input, scratch);
  KVCache cache_mqa = mqa.make_cache(enc, scratch);
  KVCache cache_mha = mha.make_cache(enc, scratch);

  double gap = 0.0;
  int prev = FidModel::kBosToken;
  for (int t = 0; t < 4; ++t) {
    const auto a = mqa.decoder_step(cache_mqa, prev, scratch);
    const auto b = mha.decoder_step(cache_mha, prev, scratch);
    for (std::size_t j = 0; j < a.size(); ++j) gap = std::max(gap, std::abs(a[j] - b[j]));
    int best = 0;
    for (int j = 1; j < static_cast<int>(a.size()); ++j) {
      if (a[static_cast<std::size_t>(j)] > a[static_cast<std::size_t>(best)]) best = j;
    }
    prev = best;
  }
  return {"mqa-tied-head", gap <= 1e-9, "max logit gap " + fmt(gap)};
}

std::uint64_t decode_multiplies(const FidModel& model, const FiDInput& input, int steps) {
  Counters enc_ctr, dec_ctr;
  const EncoderOutput enc = model.encode(input, enc_ctr);
  KVCache cache = model.make_cache(enc, dec_ctr);
  greedy_steps(model, cache, steps, kNoEos, dec_ctr);
  return dec_ctr.multiplies;
}

// Layers outside the LSA schedule must contribute zero cross-attention
// multiplies: the measured K=1 vs K=L difference has to equal the
// formula's per-LSA-layer cross cost times the schedule-size delta.
SuiteResult suite_lsa_sparsity(std::uint64_t seed) {
  const int steps = 4;
  const ModelConfig dense_cfg = toy_config(1, AttentionKind::MHA);
  const ModelConfig sparse_cfg = toy_config(dense_cfg.L_dec, AttentionKind::MHA);
  const std::uint64_t dense = decode_multiplies(
      FidModel::randomly_initialized(dense_cfg, seed), verification_input(dense_cfg, seed), steps);
  const std::uint64_t sparse = decode_multiplies(
      FidModel::randomly_initialized(sparse_cfg, seed), verification_input(sparse_cfg, seed), steps);

  const std::uint64_t expected =
      decoder_flops_exact(cost_shape(dense_cfg, steps)) -
      decoder_flops_exact(cost_shape(sparse_cfg, steps));
  const bool ok = dense - sparse == expected && dense > sparse;
  std::ostringstream os;
  os << "measured delta " << (dense - sparse) << ", formula delta " << expected;
  return {"lsa-cross-attention-sparsity", ok, os.str()};
}

SuiteResult suite_counter_equality(const FidModel& model, const FiDInput& input) {
  const int steps = std::min(6, model.config().n_t_max);
  Counters enc_ctr, dec_ctr;
  const EncoderOutput enc = model.encode(input, enc_ctr);
  KVCache cache = model.make_cache(enc, dec_ctr);
  greedy_steps(model, cache, steps, kNoEos, dec_ctr);

  const CostInput shape = cost_shape(model.config(), steps);
  const std::uint64_t enc_expected = encoder_flops_exact(shape);
  const std::uint64_t dec_expected = decoder_flops_exact(shape);
  const bool ok =
      enc_ctr.multiplies == enc_expected && dec_ctr.multiplies == dec_expected;
  std::ostringstream os;
  os << "enc " << enc_ctr.multiplies << "/" << enc_expected << ", dec "
     << dec_ctr.multiplies << "/" << dec_expected;
  return {"counter-formula-equality", ok, os.str()};
}

SuiteResult suite_beam1_greedy(const FidModel& model, const FiDInput& input) {
  const int steps = std::min(8, model.config().n_t_max);
  const DecodeResult g = greedy_decode(model, input, steps, 1);
  const DecodeResult b = beam_decode(model, input, 1, steps, 1);
  const bool ok = g.tokens == b.tokens;
  return {"beam1-greedy-equivalence", ok,
          ok ? "identical tokens" : "token sequences differ"};
}

SuiteResult suite_weights_finite(const FidModel& model) {
  std::string bad;
  auto& w = const_cast<Weights&>(model.weights());
  visit_weights(model.config(), w, [&](const std::string& name, Matrix& m, bool) {
    if (!bad.empty()) return;
    for (double v : m.data()) {
      if (!std::isfinite(v)) {
        bad = name;
        return;
      }
    }
  });
  return {"weights-finite", bad.empty(),
          bad.empty() ? "all parameters finite" : "non-finite values in " + bad};
}

SuiteResult suite_greedy_determinism(const FidModel& model, const FiDInput& input) {
  const int steps = std::min(6, model.config().n_t_max);
  const DecodeResult a = greedy_decode(model, input, steps, kNoEos);
  const DecodeResult b = greedy_decode(model, input, steps, kNoEos);
  const bool ok = a.tokens == b.tokens &&
                  a.decoder_counters.multiplies == b.decoder_counters.multiplies &&
                  a.encoder_counters.multiplies == b.encoder_counters.multiplies;
  return {"greedy-determinism", ok, ok ? "identical tokens and counters" : "runs differ"};
}

}  // namespace

FiDInput verification_input(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
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

std::vector<SuiteResult> run_verification(std::uint64_t seed) {
  const ModelConfig cfg = toy_config(2, AttentionKind::MHA);
  const FidModel model = FidModel::randomly_initialized(cfg, seed);
  const FiDInput input = verification_input(cfg, seed + 17);

  std::vector<SuiteResult> results;
  results.push_back(suite_incremental_vs_teacher(model, input));
  results.push_back(suite_mqa_tied_head(seed));
  results.push_back(suite_lsa_sparsity(seed));
  results.push_back(suite_counter_equality(model, input));
  results.push_back(suite_beam1_greedy(model, input));
  return results;
}

std::vector<SuiteResult> run_verification_on(const FidModel& model, std::uint64_t seed) {
  const FiDInput input = verification_input(model.config(), seed + 17);
  std::vector<SuiteResult> results;
  results.push_back(suite_weights_finite(model));
  results.push_back(suite_incremental_vs_teacher(model, input));
  results.push_back(suite_counter_equality(model, input));
  results.push_back(suite_greedy_determinism(model, input));
  return results;
}

}  // namespace fidolab
