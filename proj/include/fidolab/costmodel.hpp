#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fidolab/config.hpp"

namespace fidolab {

// Symbolic workload for the analytical cost model. FLOPs here are
// multiply counts; the engine's Counters and these formulas share one
// definition of a multiply, so counter-vs-formula checks are exact.
// (Multiply-accumulate conventions would double every figure.)
struct CostInput {
  std::int64_t b = 24;          // batch size
  int d = 768;
  int h = 12;
  int L_enc = 12;
  int L_dec = 12;
  int K = 1;
  AttentionKind attention_kind = AttentionKind::MHA;
  int n_p = 256;
  std::int64_t n_passages = 40;
  std::int64_t n_t = 32;
  int float_bytes = 4;

  std::int64_t n_s() const { return n_passages * n_p; }   // derived, never stored
  int kv_width() const { return attention_kind == AttentionKind::MQA ? d / h : d; }

  void validate() const;        // throws std::invalid_argument naming the field
};

CostInput cost_input_from_json(const std::string& json_text);
CostInput cost_input_from_file(const std::string& path);

struct DeviceProfile {
  double peak_flops = 2.75e14;  // FLOP/s
  double bandwidth = 1.2e12;    // bytes/s

  void validate() const;
};

DeviceProfile device_profile_from_file(const std::string& path);

enum class AttentionLayerKind { SelfMHA, CrossMHA, CrossMQA };

struct CostReport {
  CostInput input;
  std::uint64_t flops_enc_exact = 0;
  std::uint64_t flops_enc_approx = 0;
  std::uint64_t flops_dec_exact = 0;
  std::uint64_t flops_dec_approx = 0;
  double inv_intensity_mlp = 0.0;
  double inv_intensity_self = 0.0;     // S-MHA form
  double inv_intensity_cross = 0.0;    // C-MHA or C-MQA per attention_kind
  double bytes_enc = 0.0;              // per sample, weights amortized over b
  double bytes_dec = 0.0;
  std::uint64_t kv_bytes = 0;          // cache footprint for the batch at float_bytes
  double predicted_time_enc = 0.0;     // seconds per sample
  double predicted_time_dec = 0.0;
};

// Per-sample exact multiply counts, per layer summed over the stack.
// Encoder layer: 8*ns*d^2 (MLP) + 4*ns*d^2 (QKVO) + 2*ns*np*d (attention).
std::uint64_t encoder_flops_exact(const CostInput& c);

// 12 * n_s * d^2 * L_enc.
std::uint64_t encoder_flops_approx(const CostInput& c);

// Per layer: MLP 8*nt*d^2, self projections nt*(2d^2 + 2dw), incremental
// self-attention scores nt*(nt+1)*d; at LSA layers additionally cross
// q/o 2*nt*d^2, cross K/V projections 2*ns*d*w, cross attention
// 2*nt*ns*d. w is d for MHA, d/h for MQA. Zero when n_t is zero.
std::uint64_t decoder_flops_exact(const CostInput& c);

// 2 * n_s * d^2 * L_dec (the cross K/V projection term alone).
std::uint64_t decoder_flops_approx(const CostInput& c);

// 1/b + 1/d.
double inv_intensity_mlp(const CostInput& c);

// SelfMHA: 1/b + n_t/d.  CrossMHA: 1/b + n_s/d.
// CrossMQA: 1/b + 1/d + n_s/(d*h).
double inv_intensity_attention(const CostInput& c, AttentionLayerKind kind);

// max(flops / peak, bytes / bandwidth): execution cannot beat either the
// compute roof or the data-movement roof.
double roofline_time(double flops, double bytes, const DeviceProfile& dev);

// Byte totals behind the roofline prediction (per sample):
//   encoder: stack weights once per pass, amortized over the batch;
//   decoder: cross-K/V projection weights once plus per-step stack
//   weights (both amortized over b) plus the full KV cache re-read every
//   step (not amortized: every sample owns its cache).
double encoder_bytes(const CostInput& c);
double decoder_bytes(const CostInput& c);
std::uint64_t decode_kv_read_bytes(const CostInput& c);
std::uint64_t encoder_weight_bytes(const CostInput& c);
std::uint64_t decoder_step_weight_bytes(const CostInput& c);
std::uint64_t decoder_init_weight_bytes(const CostInput& c);

// KV cache footprint for the batch at float_bytes width (cross at LSA
// layers plus self after n_t steps), mirroring model kv_cache_bytes.
std::uint64_t kv_footprint_bytes(const CostInput& c);

CostReport predict_split(const CostInput& c, const DeviceProfile& dev);

struct SplitTimes {
  double enc = 0.0;
  double dec = 0.0;
};

// Asymmetric model: encoder sized by enc_side, decoder by dec_side.
SplitTimes predict_asymmetric(const CostInput& enc_side, const CostInput& dec_side,
                              const DeviceProfile& dev);

enum class SweepAxis { NPassages, NTokens };

SweepAxis sweep_axis_from_string(const std::string& s);

// One report per value, all other fields fixed.
std::vector<CostReport> sweep(const CostInput& base, const DeviceProfile& dev,
                              SweepAxis axis, const std::vector<std::int64_t>& values);

std::string cost_report_to_json(const CostReport& r);
std::string cost_reports_to_json(const std::vector<CostReport>& rs);
std::string cost_report_csv_header();
std::string cost_report_csv_row(const CostReport& r);

}  // namespace fidolab
