#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fidolab {

// Attention variant of the decoder stack. MQA keeps multi-head queries
// but a single shared key/value head (width d/h) for both the decoder
// self-attention cache and the cross-attention cache. The encoder is
// always multi-head.
enum class AttentionKind { MHA, MQA };

std::string to_string(AttentionKind k);
AttentionKind attention_kind_from_string(const std::string& s);

struct ModelConfig {
  int d = 64;              // model dimension
  int h = 4;               // attention heads
  int d_ff = 256;          // MLP hidden, must equal 4*d
  int L_enc = 4;           // encoder layers
  int L_dec = 4;           // decoder layers
  int K = 1;               // cross-attention kept every K-th decoder layer
  AttentionKind attention_kind = AttentionKind::MHA;
  int vocab = 512;
  int n_p = 32;            // tokens per fused (question + passage) block
  int n_passages = 8;
  int n_t_max = 32;        // decode step budget (position table size)

  int head_dim() const { return d / h; }
  // Width of decoder K/V projections and cache rows.
  int kv_width() const { return attention_kind == AttentionKind::MQA ? d / h : d; }
  std::int64_t n_s() const { return std::int64_t{1} * n_p * n_passages; }

  // Throws std::invalid_argument naming the violated field.
  void validate() const;
};

// 1-indexed decoder layers that keep cross-attention: multiples of K up
// to L_dec, or {L_dec} when K > L_dec so at least one layer fuses.
std::vector<int> lsa_schedule(int L_dec, int K);

// Parse a config JSON object (field names match ModelConfig one-to-one).
// Missing required fields or bad values throw std::invalid_argument
// naming the field. d_ff may be omitted and defaults to 4*d.
ModelConfig model_config_from_json(const std::string& json_text);
ModelConfig model_config_from_file(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);

}  // namespace fidolab
