#include "fidolab/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fidolab {

namespace {

// Counted matmul: every transformer-stack product goes through here.
Matrix mm(const Matrix& a, const Matrix& b, Counters& ctr) {
  ctr.multiplies += static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols();
  return matmul(a, b);
}

Matrix col_slice(const Matrix& m, std::size_t c0, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) = m.at(i, c0 + j);
  }
  return out;
}

Matrix top_rows(const Matrix& m, std::size_t t) {
  Matrix out(t, m.cols());
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = m.at(i, j);
  }
  return out;
}

// Multi-head scaled dot-product attention. q is (nq x d) with `heads`
// head slices; k/v are either (nk x d) sliced per head or a single
// shared (nk x d/heads) head. The causal flag masks scores above the
// diagonal (requires nq == nk). Score scaling is folded into q and is
// not a counted multiply.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                 bool shared_kv, bool causal, Counters& ctr) {
  const std::size_t nq = q.rows();
  const std::size_t dh = q.cols() / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix ctx(nq, q.cols());

  Matrix shared_kt;
  if (shared_kv) shared_kt = transpose(k);

  for (int head = 0; head < heads; ++head) {
    Matrix qi = col_slice(q, head * dh, dh);
    for (double& x : qi.data()) x *= inv_sqrt;

    Matrix scores = shared_kv ? mm(qi, shared_kt, ctr)
                              : mm(qi, transpose(col_slice(k, head * dh, dh)), ctr);
    if (causal) {
      for (std::size_t i = 0; i < scores.rows(); ++i) {
        for (std::size_t j = i + 1; j < scores.cols(); ++j) {
          scores.at(i, j) = -std::numeric_limits<double>::infinity();
        }
      }
    }
    Matrix probs = softmax_rows(scores);
    Matrix ci = shared_kv ? mm(probs, v, ctr)
                          : mm(probs, col_slice(v, head * dh, dh), ctr);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < dh; ++j) ctx.at(i, head * dh + j) = ci.at(i, j);
    }
  }
  return ctx;
}

std::vector<int> fuse_block(const FiDInput& input, std::size_t p, int n_p) {
  std::vector<int> ids = input.question;
  ids.insert(ids.end(), input.passages[p].begin(), input.passages[p].end());
  ids.resize(static_cast<std::size_t>(n_p), 0);  // truncate or pad with id 0
  return ids;
}

void check_token(int id, int vocab, const char* where) {
  if (id < 0 || id >= vocab) {
    std::ostringstream os;
    os << where << ": token id " << id << " out of range [0, " << vocab << ")";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

void visit_weights(const ModelConfig& cfg, Weights& w,
                   const std::function<void(const std::string&, Matrix&, bool)>& fn) {
  const std::size_t d = static_cast<std::size_t>(cfg.d);
  const std::size_t kv = static_cast<std::size_t>(cfg.kv_width());
  const auto schedule = lsa_schedule(cfg.L_dec, cfg.K);

  auto ensure = [](Matrix& m, std::size_t r, std::size_t c, const std::string& name) {
    if (m.empty() && m.rows() == 0) {
      m = Matrix(r, c);
    } else if (m.rows() != r || m.cols() != c) {
      std::ostringstream os;
      os << "weights: " << name << " has shape " << m.rows() << "x" << m.cols()
         << ", expected " << r << "x" << c;
      throw std::invalid_argument(os.str());
    }
  };
  auto visit = [&](const std::string& name, Matrix& m, std::size_t r, std::size_t c,
                   bool gain) {
    ensure(m, r, c, name);
    fn(name, m, gain);
  };

  visit("tok_emb", w.tok_emb, static_cast<std::size_t>(cfg.vocab), d, false);
  visit("pos_enc", w.pos_enc, static_cast<std::size_t>(cfg.n_p), d, false);
  visit("pos_dec", w.pos_dec, static_cast<std::size_t>(cfg.n_t_max), d, false);

  w.enc.resize(static_cast<std::size_t>(cfg.L_enc));
  for (int l = 0; l < cfg.L_enc; ++l) {
    auto& layer = w.enc[static_cast<std::size_t>(l)];
    const std::string p = "enc." + std::to_string(l) + ".";
    visit(p + "ln_attn", layer.ln_attn, 1, d, true);
    visit(p + "attn.wq", layer.wq, d, d, false);
    visit(p + "attn.wk", layer.wk, d, d, false);
    visit(p + "attn.wv", layer.wv, d, d, false);
    visit(p + "attn.wo", layer.wo, d, d, false);
    visit(p + "ln_mlp", layer.ln_mlp, 1, d, true);
    visit(p + "mlp.w1", layer.w1, d, static_cast<std::size_t>(cfg.d_ff), false);
    visit(p + "mlp.w2", layer.w2, static_cast<std::size_t>(cfg.d_ff), d, false);
  }
  visit("enc.final_norm", w.enc_final_norm, 1, d, true);

  w.dec.resize(static_cast<std::size_t>(cfg.L_dec));
  std::size_t next_lsa = 0;
  for (int l = 0; l < cfg.L_dec; ++l) {
    auto& layer = w.dec[static_cast<std::size_t>(l)];
    const std::string p = "dec." + std::to_string(l) + ".";
    layer.has_cross = next_lsa < schedule.size() && schedule[next_lsa] == l + 1;
    if (layer.has_cross) ++next_lsa;

    visit(p + "ln_self", layer.ln_self, 1, d, true);
    visit(p + "self.wq", layer.self_wq, d, d, false);
    visit(p + "self.wk", layer.self_wk, d, kv, false);
    visit(p + "self.wv", layer.self_wv, d, kv, false);
    visit(p + "self.wo", layer.self_wo, d, d, false);
    if (layer.has_cross) {
      visit(p + "ln_cross", layer.ln_cross, 1, d, true);
      visit(p + "cross.wq", layer.cross_wq, d, d, false);
      visit(p + "cross.wk", layer.cross_wk, d, kv, false);
      visit(p + "cross.wv", layer.cross_wv, d, kv, false);
      visit(p + "cross.wo", layer.cross_wo, d, d, false);
    }
    visit(p + "ln_mlp", layer.ln_mlp, 1, d, true);
    visit(p + "mlp.w1", layer.w1, d, static_cast<std::size_t>(cfg.d_ff), false);
    visit(p + "mlp.w2", layer.w2, static_cast<std::size_t>(cfg.d_ff), d, false);
  }
  visit("dec.final_norm", w.dec_final_norm, 1, d, true);
  visit("lm_head", w.lm_head, d, static_cast<std::size_t>(cfg.vocab), false);
}

KVCache KVCache::clone() const {
  KVCache c;
  c.cross_ = cross_;  // fixed per sequence, shared
  c.self_k_ = self_k_;
  c.self_v_ = self_v_;
  c.steps_ = steps_;
  c.n_s_ = n_s_;
  return c;
}

FidModel::FidModel(ModelConfig cfg, Weights w) : cfg_(cfg), w_(std::move(w)) {
  cfg_.validate();
  lsa_layers_ = lsa_schedule(cfg_.L_dec, cfg_.K);
  check_shapes();
}

void FidModel::check_shapes() const {
  // visit_weights throws on any shape or schedule mismatch.
  visit_weights(cfg_, const_cast<Weights&>(w_), [](const std::string&, Matrix&, bool) {});
}

FidModel FidModel::randomly_initialized(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Weights w;
  Rng rng(seed);
  const double scale = std::sqrt(3.0 / static_cast<double>(cfg.d));
  visit_weights(cfg, w, [&](const std::string&, Matrix& m, bool is_gain) {
    if (is_gain) {
      for (double& v : m.data()) v = 1.0;
    } else {
      m = seeded_init(rng, m.rows(), m.cols(), scale);
    }
  });
  return FidModel(cfg, std::move(w));
}

Matrix FidModel::embed(std::span<const int> ids, const Matrix& pos, int pos_offset) const {
  Matrix x(ids.size(), static_cast<std::size_t>(cfg_.d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto emb = w_.tok_emb.row(static_cast<std::size_t>(ids[i]));
    auto p = pos.row(static_cast<std::size_t>(pos_offset) + i);
    auto dst = x.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = emb[j] + p[j];
  }
  return x;
}

Matrix FidModel::encode_block(std::span<const int> ids, Counters& ctr) const {
  Matrix x = embed(ids, w_.pos_enc, 0);
  for (const auto& layer : w_.enc) {
    Matrix hn = rms_norm(x, layer.ln_attn.row(0));
    Matrix q = mm(hn, layer.wq, ctr);
    Matrix k = mm(hn, layer.wk, ctr);
    Matrix v = mm(hn, layer.wv, ctr);
    Matrix ctx = attention(q, k, v, cfg_.h, /*shared_kv=*/false, /*causal=*/false, ctr);
    add_inplace(x, mm(ctx, layer.wo, ctr));

    hn = rms_norm(x, layer.ln_mlp.row(0));
    Matrix a = mm(hn, layer.w1, ctr);
    relu_inplace(a);
    add_inplace(x, mm(a, layer.w2, ctr));
  }
  return rms_norm(x, w_.enc_final_norm.row(0));
}

EncoderOutput FidModel::encode(const FiDInput& input, Counters& ctr) const {
  if (input.passages.empty()) {
    throw std::invalid_argument("encode: input has no passages");
  }
  for (int id : input.question) check_token(id, cfg_.vocab, "encode");
  for (const auto& p : input.passages) {
    for (int id : p) check_token(id, cfg_.vocab, "encode");
  }

  const std::size_t n_p = static_cast<std::size_t>(cfg_.n_p);
  EncoderOutput out;
  out.fused = Matrix(input.passages.size() * n_p, static_cast<std::size_t>(cfg_.d));
  out.boundaries.push_back(0);
  for (std::size_t p = 0; p < input.passages.size(); ++p) {
    const std::vector<int> ids = fuse_block(input, p, cfg_.n_p);
    Matrix block = encode_block(ids, ctr);
    for (std::size_t i = 0; i < n_p; ++i) {
      auto src = block.row(i);
      auto dst = out.fused.row(p * n_p + i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j];
    }
    out.boundaries.push_back((p + 1) * n_p);
  }
  ctr.bytes_weights += encoder_pass_weight_bytes();
  return out;
}

KVCache FidModel::make_cache(const EncoderOutput& enc, Counters& ctr) const {
  if (enc.fused.cols() != static_cast<std::size_t>(cfg_.d)) {
    throw std::invalid_argument("make_cache: encoder output width does not match d");
  }
  KVCache cache;
  cache.n_s_ = static_cast<std::int64_t>(enc.fused.rows());

  auto cross = std::make_shared<KVCache::CrossKV>();
  cross->k.resize(w_.dec.size());
  cross->v.resize(w_.dec.size());
  for (std::size_t l = 0; l < w_.dec.size(); ++l) {
    if (!w_.dec[l].has_cross) continue;
    cross->k[l] = mm(enc.fused, w_.dec[l].cross_wk, ctr);
    cross->v[l] = mm(enc.fused, w_.dec[l].cross_wv, ctr);
  }
  cache.cross_ = std::move(cross);

  const std::size_t kv = static_cast<std::size_t>(cfg_.kv_width());
  cache.self_k_.assign(w_.dec.size(), Matrix(static_cast<std::size_t>(cfg_.n_t_max), kv));
  cache.self_v_ = cache.self_k_;
  ctr.bytes_weights += decoder_init_weight_bytes();
  return cache;
}

std::vector<double> FidModel::decoder_step(KVCache& cache, int prev_token,
                                           Counters& ctr) const {
  if (cache.steps_ >= cfg_.n_t_max) {
    throw std::runtime_error("decoder_step: cache exhausted (n_t_max = " +
                             std::to_string(cfg_.n_t_max) + " steps filled)");
  }
  check_token(prev_token, cfg_.vocab, "decoder_step");

  const bool mqa = cfg_.attention_kind == AttentionKind::MQA;
  const int ids[1] = {prev_token};
  Matrix x = embed(ids, w_.pos_dec, cache.steps_);
  const std::size_t t = static_cast<std::size_t>(cache.steps_) + 1;

  for (std::size_t l = 0; l < w_.dec.size(); ++l) {
    const auto& layer = w_.dec[l];

    Matrix hn = rms_norm(x, layer.ln_self.row(0));
    Matrix q = mm(hn, layer.self_wq, ctr);
    Matrix kn = mm(hn, layer.self_wk, ctr);
    Matrix vn = mm(hn, layer.self_wv, ctr);
    auto krow = cache.self_k_[l].row(t - 1);
    auto vrow = cache.self_v_[l].row(t - 1);
    for (std::size_t j = 0; j < krow.size(); ++j) {
      krow[j] = kn.at(0, j);
      vrow[j] = vn.at(0, j);
    }
    Matrix ctx = attention(q, top_rows(cache.self_k_[l], t), top_rows(cache.self_v_[l], t),
                           cfg_.h, mqa, /*causal=*/false, ctr);
    add_inplace(x, mm(ctx, layer.self_wo, ctr));

    if (layer.has_cross) {
      hn = rms_norm(x, layer.ln_cross.row(0));
      Matrix cq = mm(hn, layer.cross_wq, ctr);
      Matrix cctx = attention(cq, cache.cross_->k[l], cache.cross_->v[l], cfg_.h, mqa,
                              /*causal=*/false, ctr);
      add_inplace(x, mm(cctx, layer.cross_wo, ctr));
    }

    hn = rms_norm(x, layer.ln_mlp.row(0));
    Matrix a = mm(hn, layer.w1, ctr);
    relu_inplace(a);
    add_inplace(x, mm(a, layer.w2, ctr));
  }
  cache.steps_ += 1;

  ctr.bytes_weights += decoder_step_weight_bytes();
  const std::uint64_t w = static_cast<std::uint64_t>(cfg_.kv_width());
  ctr.bytes_kv += 8ULL * (static_cast<std::uint64_t>(cfg_.L_dec) * 2 * t * w +
                          static_cast<std::uint64_t>(lsa_layers_.size()) * 2 *
                              static_cast<std::uint64_t>(cache.n_s_) * w);

  Matrix normed = rms_norm(x, w_.dec_final_norm.row(0));
  Matrix logits = matmul(normed, w_.lm_head);  // vocabulary projection, uncounted
  return logits.data();
}

Matrix FidModel::teacher_forced_forward(const EncoderOutput& enc,
                                        std::span<const int> target, Counters& ctr) const {
  if (static_cast<int>(target.size()) > cfg_.n_t_max) {
    throw std::invalid_argument("teacher_forced_forward: target longer than n_t_max");
  }
  if (target.empty()) return Matrix(0, static_cast<std::size_t>(cfg_.vocab));
  for (int id : target) check_token(id, cfg_.vocab, "teacher_forced_forward");

  const bool mqa = cfg_.attention_kind == AttentionKind::MQA;
  std::vector<int> dec_in(target.size());
  dec_in[0] = kBosToken;
  for (std::size_t i = 1; i < target.size(); ++i) dec_in[i] = target[i - 1];

  Matrix x = embed(dec_in, w_.pos_dec, 0);
  for (const auto& layer : w_.dec) {
    Matrix hn = rms_norm(x, layer.ln_self.row(0));
    Matrix q = mm(hn, layer.self_wq, ctr);
    Matrix k = mm(hn, layer.self_wk, ctr);
    Matrix v = mm(hn, layer.self_wv, ctr);
    Matrix ctx = attention(q, k, v, cfg_.h, mqa, /*causal=*/true, ctr);
    add_inplace(x, mm(ctx, layer.self_wo, ctr));

    if (layer.has_cross) {
      hn = rms_norm(x, layer.ln_cross.row(0));
      Matrix cq = mm(hn, layer.cross_wq, ctr);
      Matrix ck = mm(enc.fused, layer.cross_wk, ctr);
      Matrix cv = mm(enc.fused, layer.cross_wv, ctr);
      Matrix cctx = attention(cq, ck, cv, cfg_.h, mqa, /*causal=*/false, ctr);
      add_inplace(x, mm(cctx, layer.cross_wo, ctr));
    }

    hn = rms_norm(x, layer.ln_mlp.row(0));
    Matrix a = mm(hn, layer.w1, ctr);
    relu_inplace(a);
    add_inplace(x, mm(a, layer.w2, ctr));
  }
  ctr.bytes_weights += decoder_step_weight_bytes() + decoder_init_weight_bytes();

  Matrix normed = rms_norm(x, w_.dec_final_norm.row(0));
  return matmul(normed, w_.lm_head);
}

std::uint64_t FidModel::encoder_pass_weight_bytes() const {
  const std::uint64_t d = static_cast<std::uint64_t>(cfg_.d);
  return 8ULL * static_cast<std::uint64_t>(cfg_.L_enc) * 12 * d * d;
}

std::uint64_t FidModel::decoder_step_weight_bytes() const {
  const std::uint64_t d = static_cast<std::uint64_t>(cfg_.d);
  const std::uint64_t w = static_cast<std::uint64_t>(cfg_.kv_width());
  // Per layer: MLP 8d^2, self q/o 2d^2, self k/v 2dw; cross q/o 2d^2 at
  // LSA layers (cross k/v weights are only touched at cache init).
  return 8ULL * (static_cast<std::uint64_t>(cfg_.L_dec) * (10 * d * d + 2 * d * w) +
                 static_cast<std::uint64_t>(lsa_schedule(cfg_.L_dec, cfg_.K).size()) * 2 *
                     d * d);
}

std::uint64_t FidModel::decoder_init_weight_bytes() const {
  const std::uint64_t d = static_cast<std::uint64_t>(cfg_.d);
  const std::uint64_t w = static_cast<std::uint64_t>(cfg_.kv_width());
  return 8ULL * static_cast<std::uint64_t>(lsa_schedule(cfg_.L_dec, cfg_.K).size()) * 2 *
         d * w;
}

FidModel replicate_kv_heads(const FidModel& mqa_model) {
  const ModelConfig& src_cfg = mqa_model.config();
  if (src_cfg.attention_kind != AttentionKind::MQA) {
    throw std::invalid_argument("replicate_kv_heads: model is not MQA");
  }
  ModelConfig cfg = src_cfg;
  cfg.attention_kind = AttentionKind::MHA;

  const std::size_t dh = static_cast<std::size_t>(src_cfg.head_dim());
  auto tile = [&](const Matrix& narrow) {
    Matrix wide(narrow.rows(), dh * static_cast<std::size_t>(src_cfg.h));
    for (std::size_t i = 0; i < narrow.rows(); ++i) {
      for (int head = 0; head < src_cfg.h; ++head) {
        for (std::size_t j = 0; j < dh; ++j) {
          wide.at(i, static_cast<std::size_t>(head) * dh + j) = narrow.at(i, j);
        }
      }
    }
    return wide;
  };

  Weights w = mqa_model.weights();
  for (auto& layer : w.dec) {
    layer.self_wk = tile(layer.self_wk);
    layer.self_wv = tile(layer.self_wv);
    if (layer.has_cross) {
      layer.cross_wk = tile(layer.cross_wk);
      layer.cross_wv = tile(layer.cross_wv);
    }
  }
  return FidModel(cfg, std::move(w));
}

std::uint64_t kv_cache_bytes(const ModelConfig& cfg, std::uint64_t b, std::uint64_t n_s,
                             std::uint64_t n_t) {
  if (b == 0 || n_s == 0) {
    throw std::invalid_argument("kv_cache_bytes: b and n_s must be positive");
  }
  const std::uint64_t w = static_cast<std::uint64_t>(cfg.kv_width());
  const std::uint64_t lsa = lsa_schedule(cfg.L_dec, cfg.K).size();
  const std::uint64_t cross = lsa * 2 * n_s * w;
  const std::uint64_t self = static_cast<std::uint64_t>(cfg.L_dec) * 2 * n_t * w;
  return b * 8ULL * (cross + self);
}

}  // namespace fidolab
