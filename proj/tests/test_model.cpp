#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fidolab/decoding.hpp"
#include "fidolab/model.hpp"
#include "fidolab/verify.hpp"

using namespace fidolab;

namespace {

ModelConfig toy(int K = 1, AttentionKind kind = AttentionKind::MHA) {
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

// Per-layer encoder multiplies, written out independently of the
// costmodel implementation: MLP 8*ns*d^2, QKVO 4*ns*d^2, attention
// 2*ns*np*d.
std::uint64_t encoder_formula(const ModelConfig& cfg) {
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.d);
  const std::uint64_t ns = static_cast<std::uint64_t>(cfg.n_s());
  const std::uint64_t np = static_cast<std::uint64_t>(cfg.n_p);
  return static_cast<std::uint64_t>(cfg.L_enc) * (12 * ns * d * d + 2 * ns * np * d);
}

// Incremental decoder multiplies over n_t steps including cache init.
std::uint64_t decoder_formula(const ModelConfig& cfg, std::uint64_t nt) {
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.d);
  const std::uint64_t w = static_cast<std::uint64_t>(cfg.kv_width());
  const std::uint64_t ns = static_cast<std::uint64_t>(cfg.n_s());
  const std::uint64_t lsa = lsa_schedule(cfg.L_dec, cfg.K).size();
  const std::uint64_t per_layer =
      8 * nt * d * d + nt * (2 * d * d + 2 * d * w) + nt * (nt + 1) * d;
  const std::uint64_t per_lsa = 2 * nt * d * d + 2 * ns * d * w + 2 * nt * ns * d;
  return static_cast<std::uint64_t>(cfg.L_dec) * per_layer + lsa * per_lsa;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("lsa_schedule keeps one of every K layers") {
  CHECK(lsa_schedule(24, 6) == std::vector<int>{6, 12, 18, 24});
  CHECK(lsa_schedule(12, 1) ==
        std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  CHECK(lsa_schedule(12, 6) == std::vector<int>{6, 12});
  // K beyond the stack still leaves one fusing layer.
  CHECK(lsa_schedule(4, 7) == std::vector<int>{4});
  CHECK(lsa_schedule(1, 1) == std::vector<int>{1});
}

TEST_CASE("config invariants are enforced") {
  ModelConfig cfg = toy();
  cfg.h = 5;  // 64 % 5 != 0
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = toy();
  cfg.d_ff = 128;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = toy();
  cfg.K = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("encode produces n_p rows per passage") {
  ModelConfig cfg = toy();
  cfg.n_passages = 1;
  const FidModel model = FidModel::randomly_initialized(cfg, 1);
  FiDInput input = verification_input(cfg, 2);
  Counters ctr;
  const EncoderOutput out = model.encode(input, ctr);
  CHECK(out.fused.rows() == static_cast<std::size_t>(cfg.n_p));
  CHECK(out.boundaries == std::vector<std::size_t>{0, 32});
}

TEST_CASE("encode rejects out-of-vocab token ids") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 1);
  FiDInput input = verification_input(cfg, 2);
  input.passages[3][5] = cfg.vocab;  // one past the end
  Counters ctr;
  CHECK_THROWS_AS(model.encode(input, ctr), std::invalid_argument);
}

TEST_CASE("joint encode equals per-passage encode concatenated") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 5);
  const FiDInput input = verification_input(cfg, 6);

  Counters ctr;
  const EncoderOutput joint = model.encode(input, ctr);

  // Oracle: encode each passage on its own single-passage model view.
  ModelConfig single = cfg;
  single.n_passages = 1;
  const FidModel single_model(single, model.weights());
  for (std::size_t p = 0; p < input.passages.size(); ++p) {
    FiDInput one{input.question, {input.passages[p]}};
    Counters c2;
    const EncoderOutput sep = single_model.encode(one, c2);
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.n_p); ++i) {
      const auto a = joint.fused.row(p * static_cast<std::size_t>(cfg.n_p) + i);
      const auto b = sep.fused.row(i);
      CHECK(max_abs_diff(a, b) <= 1e-12);
    }
  }
}

TEST_CASE("permuting passages permutes the fused row blocks and nothing else") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 7);
  FiDInput input = verification_input(cfg, 8);

  Counters c1, c2;
  const EncoderOutput orig = model.encode(input, c1);
  std::swap(input.passages[1], input.passages[5]);
  const EncoderOutput perm = model.encode(input, c2);

  const std::size_t np = static_cast<std::size_t>(cfg.n_p);
  for (std::size_t p = 0; p < input.passages.size(); ++p) {
    const std::size_t src = (p == 1) ? 5 : (p == 5) ? 1 : p;
    for (std::size_t i = 0; i < np; ++i) {
      CHECK(max_abs_diff(perm.fused.row(p * np + i), orig.fused.row(src * np + i)) == 0.0);
    }
  }
}

TEST_CASE("zeroing one passage changes only its own block") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 9);
  FiDInput input = verification_input(cfg, 10);

  Counters c1, c2;
  const EncoderOutput before = model.encode(input, c1);
  std::fill(input.passages[2].begin(), input.passages[2].end(), 0);
  const EncoderOutput after = model.encode(input, c2);

  const std::size_t np = static_cast<std::size_t>(cfg.n_p);
  bool changed_own_block = false;
  for (std::size_t p = 0; p < input.passages.size(); ++p) {
    for (std::size_t i = 0; i < np; ++i) {
      const double diff = max_abs_diff(before.fused.row(p * np + i), after.fused.row(p * np + i));
      if (p == 2) {
        changed_own_block = changed_own_block || diff > 0.0;
      } else {
        CHECK(diff == 0.0);
      }
    }
  }
  CHECK(changed_own_block);
}

TEST_CASE("decoder_step returns vocab-sized logits and honors the cache budget") {
  ModelConfig cfg = toy();
  cfg.n_t_max = 3;
  const FidModel model = FidModel::randomly_initialized(cfg, 11);
  Counters ctr;
  const EncoderOutput enc = model.encode(verification_input(cfg, 12), ctr);
  KVCache cache = model.make_cache(enc, ctr);
  for (int t = 0; t < 3; ++t) {
    const auto logits = model.decoder_step(cache, 0, ctr);
    CHECK(logits.size() == static_cast<std::size_t>(cfg.vocab));
  }
  CHECK(cache.steps_filled() == 3);
  CHECK_THROWS_AS(model.decoder_step(cache, 0, ctr), std::runtime_error);
}

TEST_CASE("incremental decoding equals teacher-forced logits row by row") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (AttentionKind kind : {AttentionKind::MHA, AttentionKind::MQA}) {
      const ModelConfig cfg = toy(2, kind);
      const FidModel model = FidModel::randomly_initialized(cfg, seed);
      const FiDInput input = verification_input(cfg, seed + 100);

      Counters ctr;
      const EncoderOutput enc = model.encode(input, ctr);
      KVCache cache = model.make_cache(enc, ctr);

      std::vector<std::vector<double>> step_logits;
      std::vector<int> tokens;
      int prev = FidModel::kBosToken;
      for (int t = 0; t < 8; ++t) {
        step_logits.push_back(model.decoder_step(cache, prev, ctr));
        const auto& l = step_logits.back();
        int best = 0;
        for (int j = 1; j < static_cast<int>(l.size()); ++j) {
          if (l[static_cast<std::size_t>(j)] > l[static_cast<std::size_t>(best)]) best = j;
        }
        tokens.push_back(best);
        prev = best;
      }
      const Matrix full = model.teacher_forced_forward(enc, tokens, ctr);
      for (int t = 0; t < 8; ++t) {
        CHECK(max_abs_diff(full.row(static_cast<std::size_t>(t)),
                           step_logits[static_cast<std::size_t>(t)]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("teacher-forced on a length-1 target equals the first decoder step") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 13);
  Counters ctr;
  const EncoderOutput enc = model.encode(verification_input(cfg, 14), ctr);
  KVCache cache = model.make_cache(enc, ctr);
  const auto step = model.decoder_step(cache, FidModel::kBosToken, ctr);

  const std::vector<int> target{42};
  const Matrix full = model.teacher_forced_forward(enc, target, ctr);
  CHECK(full.rows() == 1);
  CHECK(max_abs_diff(full.row(0), step) <= 1e-12);
}

TEST_CASE("causal masking: appending a token leaves earlier rows unchanged") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 15);
  Counters ctr;
  const EncoderOutput enc = model.encode(verification_input(cfg, 16), ctr);

  const std::vector<int> shorter{3, 1, 4, 1, 5};
  std::vector<int> longer = shorter;
  longer.push_back(9);
  const Matrix a = model.teacher_forced_forward(enc, shorter, ctr);
  const Matrix b = model.teacher_forced_forward(enc, longer, ctr);
  for (std::size_t t = 0; t < shorter.size(); ++t) {
    CHECK(max_abs_diff(a.row(t), b.row(t)) <= 1e-12);
  }
}

TEST_CASE("MQA with replicated heads matches the expanded MHA model") {
  for (std::uint64_t seed = 20; seed < 23; ++seed) {
    const FidModel mqa = FidModel::randomly_initialized(toy(2, AttentionKind::MQA), seed);
    const FidModel mha = replicate_kv_heads(mqa);
    const FiDInput input = verification_input(mqa.config(), seed + 1);

    Counters ctr;
    const EncoderOutput enc = mqa.encode(input, ctr);
    KVCache ca = mqa.make_cache(enc, ctr);
    KVCache cb = mha.make_cache(enc, ctr);
    int prev = FidModel::kBosToken;
    for (int t = 0; t < 6; ++t) {
      const auto la = mqa.decoder_step(ca, prev, ctr);
      const auto lb = mha.decoder_step(cb, prev, ctr);
      CHECK(max_abs_diff(la, lb) <= 1e-9);
      int best = 0;
      for (int j = 1; j < static_cast<int>(la.size()); ++j) {
        if (la[static_cast<std::size_t>(j)] > la[static_cast<std::size_t>(best)]) best = j;
      }
      prev = best;
    }
  }
}

TEST_CASE("encoder counters equal the per-layer formula exactly") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 17);
  Counters ctr;
  model.encode(verification_input(cfg, 18), ctr);
  CHECK(ctr.multiplies == encoder_formula(cfg));
  CHECK(ctr.bytes_weights ==
        8ULL * static_cast<std::uint64_t>(cfg.L_enc) * 12 *
            static_cast<std::uint64_t>(cfg.d) * static_cast<std::uint64_t>(cfg.d));
  CHECK(ctr.bytes_kv == 0);
}

TEST_CASE("decoder counters equal the incremental formula exactly") {
  for (int K : {1, 2, 4}) {
    for (AttentionKind kind : {AttentionKind::MHA, AttentionKind::MQA}) {
      const ModelConfig cfg = toy(K, kind);
      const FidModel model = FidModel::randomly_initialized(cfg, 19);
      Counters enc_ctr, dec_ctr;
      const EncoderOutput enc = model.encode(verification_input(cfg, 20), enc_ctr);
      KVCache cache = model.make_cache(enc, dec_ctr);
      greedy_steps(model, cache, 5, kNoEos, dec_ctr);
      CHECK(dec_ctr.multiplies == decoder_formula(cfg, 5));
    }
  }
}

TEST_CASE("layers outside the LSA schedule do zero cross-attention work") {
  // With identical shapes, the K=1 vs K=L_dec multiply difference must
  // be exactly (L_dec - 1) per-LSA-layer cross costs: the off-schedule
  // layers contribute nothing.
  const int steps = 4;
  const ModelConfig dense = toy(1);
  const ModelConfig sparse = toy(4);
  auto decode_mults = [&](const ModelConfig& cfg) {
    const FidModel model = FidModel::randomly_initialized(cfg, 21);
    Counters ec, dc;
    const EncoderOutput enc = model.encode(verification_input(cfg, 22), ec);
    KVCache cache = model.make_cache(enc, dc);
    greedy_steps(model, cache, steps, kNoEos, dc);
    return dc.multiplies;
  };
  const std::uint64_t diff = decode_mults(dense) - decode_mults(sparse);
  const std::uint64_t d = 64, ns = 256, nt = steps;
  const std::uint64_t per_lsa = 2 * nt * d * d + 2 * ns * d * d + 2 * nt * ns * d;
  CHECK(diff == (4 - 1) * per_lsa);
}

TEST_CASE("kv_cache_bytes matches the stated arithmetic") {
  ModelConfig cfg;
  cfg.d = 768;
  cfg.h = 12;
  cfg.d_ff = 4 * 768;
  cfg.L_enc = 12;
  cfg.L_dec = 12;
  cfg.K = 1;
  cfg.vocab = 32128;
  cfg.n_p = 256;
  cfg.n_passages = 40;
  cfg.n_t_max = 512;

  // Cross component alone (n_t = 0): 2 * 10240 * 768 * 8 bytes * 12 layers.
  const std::uint64_t cross_vanilla = kv_cache_bytes(cfg, 1, 10240, 0);
  CHECK(cross_vanilla == 1509949440ULL);

  ModelConfig lsa6 = cfg;
  lsa6.K = 6;
  CHECK(kv_cache_bytes(lsa6, 1, 10240, 0) * 6 == cross_vanilla);

  ModelConfig mqa6 = lsa6;
  mqa6.attention_kind = AttentionKind::MQA;
  CHECK(kv_cache_bytes(mqa6, 1, 10240, 0) * 6 * 12 == cross_vanilla);
}

TEST_CASE("kv_cache_bytes edge behavior") {
  ModelConfig cfg = toy();
  // n_t = 0 leaves only the cross component.
  const std::uint64_t cross_only = kv_cache_bytes(cfg, 1, 256, 0);
  const std::uint64_t with_steps = kv_cache_bytes(cfg, 1, 256, 8);
  CHECK(with_steps > cross_only);
  CHECK(with_steps - cross_only ==
        8ULL * static_cast<std::uint64_t>(cfg.L_dec) * 2 * 8 *
            static_cast<std::uint64_t>(cfg.d));

  // K = L_dec plus MQA is strictly below vanilla for any valid config.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ModelConfig v = toy();
    v.h = 2 + static_cast<int>(rng.next_u64() % 3);
    v.d = v.h * static_cast<int>(8 + rng.next_u64() % 24);
    v.d_ff = 4 * v.d;
    v.L_dec = 2 + static_cast<int>(rng.next_u64() % 6);
    ModelConfig m = v;
    m.K = m.L_dec;
    m.attention_kind = AttentionKind::MQA;
    const std::uint64_t n_s = 64 + rng.next_u64() % 512;
    const std::uint64_t n_t = rng.next_u64() % 32;
    CHECK(kv_cache_bytes(m, 2, n_s, n_t) < kv_cache_bytes(v, 2, n_s, n_t));
  }
}

TEST_CASE("cache clones fork without touching the parent") {
  const ModelConfig cfg = toy();
  const FidModel model = FidModel::randomly_initialized(cfg, 23);
  Counters ctr;
  const EncoderOutput enc = model.encode(verification_input(cfg, 24), ctr);
  KVCache parent = model.make_cache(enc, ctr);
  model.decoder_step(parent, 0, ctr);

  KVCache child = parent.clone();
  model.decoder_step(child, 1, ctr);
  CHECK(parent.steps_filled() == 1);
  CHECK(child.steps_filled() == 2);
}

TEST_CASE("K beyond the stack still decodes with one fusing layer") {
  const ModelConfig cfg = toy(7);  // L_dec = 4, schedule = {4}
  const FidModel model = FidModel::randomly_initialized(cfg, 25);
  Counters ec, dc;
  const EncoderOutput enc = model.encode(verification_input(cfg, 26), ec);
  KVCache cache = model.make_cache(enc, dc);
  greedy_steps(model, cache, 4, kNoEos, dc);
  CHECK(dc.multiplies == decoder_formula(cfg, 4));
}

TEST_CASE("MQA with a single head coincides with MHA") {
  ModelConfig cfg = toy();
  cfg.h = 1;
  ModelConfig mqa_cfg = cfg;
  mqa_cfg.attention_kind = AttentionKind::MQA;
  // kv_width == d in both cases, so the seeded weights coincide too.
  const FidModel mha = FidModel::randomly_initialized(cfg, 27);
  const FidModel mqa = FidModel::randomly_initialized(mqa_cfg, 27);
  const FiDInput input = verification_input(cfg, 28);

  Counters ctr;
  const EncoderOutput enc = mha.encode(input, ctr);
  KVCache ca = mha.make_cache(enc, ctr);
  KVCache cb = mqa.make_cache(enc, ctr);
  const auto la = mha.decoder_step(ca, 0, ctr);
  const auto lb = mqa.decoder_step(cb, 0, ctr);
  CHECK(max_abs_diff(la, lb) == 0.0);
}

TEST_CASE("overlong questions are truncated into the fused block") {
  ModelConfig cfg = toy();
  cfg.n_passages = 1;
  const FidModel model = FidModel::randomly_initialized(cfg, 29);

  FiDInput long_q;
  for (int i = 0; i < 2 * cfg.n_p; ++i) long_q.question.push_back(i % cfg.vocab);
  long_q.passages = {{1, 2, 3}};
  FiDInput other = long_q;
  other.passages = {{7, 7, 7, 7}};  // hidden behind the truncation

  Counters c1, c2;
  const EncoderOutput a = model.encode(long_q, c1);
  const EncoderOutput b = model.encode(other, c2);
  CHECK(a.fused.rows() == static_cast<std::size_t>(cfg.n_p));
  CHECK(a.fused.data() == b.fused.data());
}

TEST_CASE("weight file order is deterministic and covers every parameter") {
  const ModelConfig cfg = toy(2, AttentionKind::MQA);
  Weights w;
  std::vector<std::string> names;
  visit_weights(cfg, w, [&](const std::string& name, Matrix&, bool) {
    names.push_back(name);
  });
  CHECK(names.front() == "tok_emb");
  CHECK(names.back() == "lm_head");
  // LSA layers for L_dec=4, K=2 are {2, 4}: cross weights appear only there.
  CHECK(std::count(names.begin(), names.end(), "dec.1.cross.wk") == 1);
  CHECK(std::count(names.begin(), names.end(), "dec.0.cross.wk") == 0);
  // The same visit on the same config yields the same order.
  Weights w2;
  std::vector<std::string> names2;
  visit_weights(cfg, w2, [&](const std::string& name, Matrix&, bool) {
    names2.push_back(name);
  });
  CHECK(names == names2);
}
