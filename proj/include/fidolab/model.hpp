#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fidolab/config.hpp"
#include "fidolab/numerics.hpp"

namespace fidolab {

// Multiply and byte counters accumulated during forward/decode passes.
// multiplies counts the projection, MLP and attention matmuls of the
// transformer stack; embedding lookups, norms and the final vocabulary
// projection are outside the stack cost structure and are not counted.
// Bytes follow the worst-case loading rule: every stack weight matrix
// once per pass (encoder) or per step (decoder), every cached KV row
// once per step; activations are never counted.
struct Counters {
  std::uint64_t multiplies = 0;
  std::uint64_t bytes_weights = 0;
  std::uint64_t bytes_kv = 0;

  void reset() { multiplies = bytes_weights = bytes_kv = 0; }
  Counters& operator+=(const Counters& o) {
    multiplies += o.multiplies;
    bytes_weights += o.bytes_weights;
    bytes_kv += o.bytes_kv;
    return *this;
  }
};

struct FiDInput {
  std::vector<int> question;
  std::vector<std::vector<int>> passages;
};

struct EncoderOutput {
  Matrix fused;                           // (n_passages * n_p) x d
  std::vector<std::size_t> boundaries;    // row offset per passage, plus end
};

struct Weights {
  struct EncoderLayer {
    Matrix ln_attn, ln_mlp;               // 1 x d gains
    Matrix wq, wk, wv, wo;                // d x d
    Matrix w1, w2;                        // d x 4d, 4d x d
  };
  struct DecoderLayer {
    Matrix ln_self, ln_mlp;
    Matrix self_wq, self_wk, self_wv, self_wo;   // k/v are d x kv_width
    bool has_cross = false;               // true only at LSA layers
    Matrix ln_cross;
    Matrix cross_wq, cross_wk, cross_wv, cross_wo;
    Matrix w1, w2;
  };

  Matrix tok_emb;                         // vocab x d
  Matrix pos_enc;                         // n_p x d
  Matrix pos_dec;                         // n_t_max x d
  std::vector<EncoderLayer> enc;
  Matrix enc_final_norm;
  std::vector<DecoderLayer> dec;
  Matrix dec_final_norm;
  Matrix lm_head;                         // d x vocab
};

// Visits every parameter in the canonical order used by both seeded
// initialization and the FIDO1 weight file. is_gain marks 1 x d
// normalization gains (initialized to 1 rather than random).
void visit_weights(const ModelConfig& cfg, Weights& w,
                   const std::function<void(const std::string& name, Matrix& m,
                                            bool is_gain)>& fn);

class FidModel;

// Decoder state for one decode stream. Self-attention K/V grow one row
// per step; cross-attention K/V are fixed per sequence and shared
// between clones (beam hypotheses fork cheaply).
class KVCache {
 public:
  int steps_filled() const { return steps_; }
  std::int64_t source_tokens() const { return n_s_; }

  // Deep-copies the growing self K/V, shares the fixed cross K/V.
  KVCache clone() const;

 private:
  friend class FidModel;
  struct CrossKV {
    std::vector<Matrix> k, v;             // indexed by decoder layer; empty off-schedule
  };
  std::shared_ptr<const CrossKV> cross_;
  std::vector<Matrix> self_k_, self_v_;   // preallocated n_t_max x kv_width
  int steps_ = 0;
  std::int64_t n_s_ = 0;
};

// Fusion-in-Decoder transformer with pre-RMSNorm blocks, ReLU MLP of
// hidden 4d, learned absolute position embeddings and an untied
// vocabulary projection. Per-passage encoding, decoder cross-attention
// at the LSA schedule only, MHA or MQA decoder attention. Immutable
// after construction; safe to share across threads.
class FidModel {
 public:
  static constexpr int kBosToken = 0;

  FidModel(ModelConfig cfg, Weights w);

  // Deterministic uniform init from a splitmix64 stream; gains are 1.
  static FidModel randomly_initialized(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Weights& weights() const { return w_; }

  // Encodes each question+passage block independently (truncated or
  // padded to n_p tokens) and concatenates the results in passage order.
  EncoderOutput encode(const FiDInput& input, Counters& ctr) const;

  // Projects the fixed cross-attention K/V for every LSA layer and
  // allocates the growing self-attention cache.
  KVCache make_cache(const EncoderOutput& enc, Counters& ctr) const;

  // One incremental step: extends every layer's self K/V by one row and
  // returns next-token logits (length vocab). Throws when the cache has
  // reached n_t_max steps.
  std::vector<double> decoder_step(KVCache& cache, int prev_token, Counters& ctr) const;

  // Full causally-masked decoder pass without caching; row t holds the
  // logits for target position t. Oracle for incremental decoding.
  Matrix teacher_forced_forward(const EncoderOutput& enc, std::span<const int> target,
                                Counters& ctr) const;

  // Byte-accounting helpers (engine floats are 8 bytes wide).
  std::uint64_t encoder_pass_weight_bytes() const;
  std::uint64_t decoder_step_weight_bytes() const;
  std::uint64_t decoder_init_weight_bytes() const;

 private:
  Matrix embed(std::span<const int> ids, const Matrix& pos, int pos_offset) const;
  Matrix encode_block(std::span<const int> ids, Counters& ctr) const;
  void check_shapes() const;

  ModelConfig cfg_;
  Weights w_;
  std::vector<int> lsa_layers_;           // 1-indexed
};

// Exact cache footprint in bytes for a batch of b streams after n_t
// decode steps: fixed cross K/V at LSA layers plus grown self K/V, at
// the engine's 8-byte float width.
std::uint64_t kv_cache_bytes(const ModelConfig& cfg, std::uint64_t b, std::uint64_t n_s,
                             std::uint64_t n_t);

// Expands an MQA model into an equivalent MHA model by replicating the
// shared K/V head h times in every decoder self- and cross-attention
// projection. The tied-head oracle: both models produce identical
// logits up to float round-off.
FidModel replicate_kv_heads(const FidModel& mqa_model);

}  // namespace fidolab
