#include "fidolab/costmodel.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fidolab {

namespace {

using u64 = std::uint64_t;

u64 lsa_count(const CostInput& c) { return lsa_schedule(c.L_dec, c.K).size(); }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void CostInput::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("cost: " + msg); };
  if (b <= 0) fail("b must be positive");
  if (d <= 0) fail("d must be positive");
  if (h <= 0) fail("h must be positive");
  if (d % h != 0) fail("d must be divisible by h");
  if (L_enc <= 0) fail("L_enc must be positive");
  if (L_dec <= 0) fail("L_dec must be positive");
  if (K < 1) fail("K must be >= 1");
  if (n_p <= 0) fail("n_p must be positive");
  if (n_passages <= 0) fail("n_passages must be positive");
  if (n_t < 0) fail("n_t must be non-negative");
  if (float_bytes <= 0) fail("float_bytes must be positive");
}

void DeviceProfile::validate() const {
  if (!(peak_flops > 0.0) || !(bandwidth > 0.0)) {
    throw std::invalid_argument("device: peak_flops and bandwidth must be positive");
  }
}

namespace {

using nlohmann::json;

json parse_or_throw(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("cost: invalid JSON: ") + e.what());
  }
}

std::int64_t require_i64(const json& j, const char* field) {
  if (!j.contains(field)) {
    throw std::invalid_argument(std::string("config: missing field \"") + field + "\"");
  }
  if (!j.at(field).is_number_integer()) {
    throw std::invalid_argument(std::string("config: field \"") + field +
                                "\" must be an integer");
  }
  return j.at(field).get<std::int64_t>();
}

std::int64_t optional_i64(const json& j, const char* field, std::int64_t dflt) {
  return j.contains(field) ? require_i64(j, field) : dflt;
}

}  // namespace

CostInput cost_input_from_json(const std::string& json_text) {
  const json j = parse_or_throw(json_text);
  CostInput c;
  c.d = static_cast<int>(require_i64(j, "d"));
  c.h = static_cast<int>(require_i64(j, "h"));
  c.L_enc = static_cast<int>(require_i64(j, "L_enc"));
  c.L_dec = static_cast<int>(require_i64(j, "L_dec"));
  c.K = static_cast<int>(require_i64(j, "K"));
  c.n_p = static_cast<int>(require_i64(j, "n_p"));
  c.n_passages = require_i64(j, "n_passages");
  c.b = optional_i64(j, "b", 24);
  c.n_t = optional_i64(j, "n_t", 32);
  c.float_bytes = static_cast<int>(optional_i64(j, "float_bytes", 4));
  if (j.contains("attention_kind")) {
    c.attention_kind = attention_kind_from_string(j.at("attention_kind").get<std::string>());
  }
  c.validate();
  return c;
}

CostInput cost_input_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cost: cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return cost_input_from_json(buf.str());
}

DeviceProfile device_profile_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("device: cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  const json j = parse_or_throw(buf.str());
  DeviceProfile dev;
  if (j.contains("peak_flops")) dev.peak_flops = j.at("peak_flops").get<double>();
  if (j.contains("bandwidth")) dev.bandwidth = j.at("bandwidth").get<double>();
  dev.validate();
  return dev;
}

std::uint64_t encoder_flops_exact(const CostInput& c) {
  const u64 d = static_cast<u64>(c.d);
  const u64 ns = static_cast<u64>(c.n_s());
  const u64 per_layer = 12 * ns * d * d + 2 * ns * static_cast<u64>(c.n_p) * d;
  return static_cast<u64>(c.L_enc) * per_layer;
}

std::uint64_t encoder_flops_approx(const CostInput& c) {
  const u64 d = static_cast<u64>(c.d);
  return 12 * static_cast<u64>(c.n_s()) * d * d * static_cast<u64>(c.L_enc);
}

std::uint64_t decoder_flops_exact(const CostInput& c) {
  if (c.n_t == 0) return 0;
  const u64 d = static_cast<u64>(c.d);
  const u64 w = static_cast<u64>(c.kv_width());
  const u64 nt = static_cast<u64>(c.n_t);
  const u64 ns = static_cast<u64>(c.n_s());
  // Incremental self-attention reads t keys and t values at step t, so
  // the score/value multiplies sum to nt*(nt+1)*d rather than the full
  // 2*nt^2*d of a masked teacher-forced pass.
  const u64 per_layer = 8 * nt * d * d + nt * (2 * d * d + 2 * d * w) + nt * (nt + 1) * d;
  const u64 per_lsa = 2 * nt * d * d + 2 * ns * d * w + 2 * nt * ns * d;
  return static_cast<u64>(c.L_dec) * per_layer + lsa_count(c) * per_lsa;
}

std::uint64_t decoder_flops_approx(const CostInput& c) {
  const u64 d = static_cast<u64>(c.d);
  return 2 * static_cast<u64>(c.n_s()) * d * d * static_cast<u64>(c.L_dec);
}

double inv_intensity_mlp(const CostInput& c) {
  return 1.0 / static_cast<double>(c.b) + 1.0 / static_cast<double>(c.d);
}

double inv_intensity_attention(const CostInput& c, AttentionLayerKind kind) {
  const double b = static_cast<double>(c.b);
  const double d = static_cast<double>(c.d);
  switch (kind) {
    case AttentionLayerKind::SelfMHA:
      return 1.0 / b + static_cast<double>(c.n_t) / d;
    case AttentionLayerKind::CrossMHA:
      return 1.0 / b + static_cast<double>(c.n_s()) / d;
    case AttentionLayerKind::CrossMQA:
      return 1.0 / b + 1.0 / d +
             static_cast<double>(c.n_s()) / (d * static_cast<double>(c.h));
  }
  throw std::invalid_argument("inv_intensity_attention: unknown kind");
}

double roofline_time(double flops, double bytes, const DeviceProfile& dev) {
  dev.validate();
  return std::max(flops / dev.peak_flops, bytes / dev.bandwidth);
}

std::uint64_t encoder_weight_bytes(const CostInput& c) {
  const u64 d = static_cast<u64>(c.d);
  return static_cast<u64>(c.L_enc) * 12 * d * d * static_cast<u64>(c.float_bytes);
}

std::uint64_t decoder_step_weight_bytes(const CostInput& c) {
  const u64 d = static_cast<u64>(c.d);
  const u64 w = static_cast<u64>(c.kv_width());
  return (static_cast<u64>(c.L_dec) * (10 * d * d + 2 * d * w) + lsa_count(c) * 2 * d * d) *
         static_cast<u64>(c.float_bytes);
}

std::uint64_t decoder_init_weight_bytes(const CostInput& c) {
  const u64 d = static_cast<u64>(c.d);
  const u64 w = static_cast<u64>(c.kv_width());
  return lsa_count(c) * 2 * d * w * static_cast<u64>(c.float_bytes);
}

std::uint64_t decode_kv_read_bytes(const CostInput& c) {
  const u64 w = static_cast<u64>(c.kv_width());
  const u64 nt = static_cast<u64>(c.n_t);
  const u64 self_reads = static_cast<u64>(c.L_dec) * nt * (nt + 1) * w;
  const u64 cross_reads = nt * lsa_count(c) * 2 * static_cast<u64>(c.n_s()) * w;
  return (self_reads + cross_reads) * static_cast<u64>(c.float_bytes);
}

std::uint64_t kv_footprint_bytes(const CostInput& c) {
  const u64 w = static_cast<u64>(c.kv_width());
  const u64 cross = lsa_count(c) * 2 * static_cast<u64>(c.n_s()) * w;
  const u64 self = static_cast<u64>(c.L_dec) * 2 * static_cast<u64>(c.n_t) * w;
  return static_cast<u64>(c.b) * (cross + self) * static_cast<u64>(c.float_bytes);
}

double encoder_bytes(const CostInput& c) {
  return static_cast<double>(encoder_weight_bytes(c)) / static_cast<double>(c.b);
}

double decoder_bytes(const CostInput& c) {
  const double weight_traffic =
      static_cast<double>(decoder_init_weight_bytes(c)) +
      static_cast<double>(c.n_t) * static_cast<double>(decoder_step_weight_bytes(c));
  return weight_traffic / static_cast<double>(c.b) +
         static_cast<double>(decode_kv_read_bytes(c));
}

CostReport predict_split(const CostInput& c, const DeviceProfile& dev) {
  c.validate();
  dev.validate();
  CostReport r;
  r.input = c;
  r.flops_enc_exact = encoder_flops_exact(c);
  r.flops_enc_approx = encoder_flops_approx(c);
  r.flops_dec_exact = decoder_flops_exact(c);
  r.flops_dec_approx = decoder_flops_approx(c);
  r.inv_intensity_mlp = inv_intensity_mlp(c);
  r.inv_intensity_self = inv_intensity_attention(c, AttentionLayerKind::SelfMHA);
  r.inv_intensity_cross = inv_intensity_attention(
      c, c.attention_kind == AttentionKind::MQA ? AttentionLayerKind::CrossMQA
                                                : AttentionLayerKind::CrossMHA);
  r.bytes_enc = encoder_bytes(c);
  r.bytes_dec = decoder_bytes(c);
  r.kv_bytes = kv_footprint_bytes(c);
  r.predicted_time_enc =
      roofline_time(static_cast<double>(r.flops_enc_exact), r.bytes_enc, dev);
  r.predicted_time_dec =
      roofline_time(static_cast<double>(r.flops_dec_exact), r.bytes_dec, dev);
  return r;
}

SplitTimes predict_asymmetric(const CostInput& enc_side, const CostInput& dec_side,
                              const DeviceProfile& dev) {
  return {predict_split(enc_side, dev).predicted_time_enc,
          predict_split(dec_side, dev).predicted_time_dec};
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "n_passages") return SweepAxis::NPassages;
  if (s == "n_t") return SweepAxis::NTokens;
  throw std::invalid_argument("sweep: axis must be \"n_passages\" or \"n_t\", got \"" + s +
                              "\"");
}

std::vector<CostReport> sweep(const CostInput& base, const DeviceProfile& dev,
                              SweepAxis axis, const std::vector<std::int64_t>& values) {
  std::vector<CostReport> out;
  out.reserve(values.size());
  for (std::int64_t v : values) {
    CostInput c = base;
    if (axis == SweepAxis::NPassages) {
      c.n_passages = v;
    } else {
      c.n_t = v;
    }
    out.push_back(predict_split(c, dev));
  }
  return out;
}

namespace {

json report_json(const CostReport& r) {
  json j;
  j["b"] = r.input.b;
  j["d"] = r.input.d;
  j["h"] = r.input.h;
  j["L_enc"] = r.input.L_enc;
  j["L_dec"] = r.input.L_dec;
  j["K"] = r.input.K;
  j["attention_kind"] = to_string(r.input.attention_kind);
  j["n_p"] = r.input.n_p;
  j["n_passages"] = r.input.n_passages;
  j["n_t"] = r.input.n_t;
  j["float_bytes"] = r.input.float_bytes;
  j["flops_enc_exact"] = r.flops_enc_exact;
  j["flops_enc_approx"] = r.flops_enc_approx;
  j["flops_dec_exact"] = r.flops_dec_exact;
  j["flops_dec_approx"] = r.flops_dec_approx;
  j["inv_intensity_mlp"] = r.inv_intensity_mlp;
  j["inv_intensity_self"] = r.inv_intensity_self;
  j["inv_intensity_cross"] = r.inv_intensity_cross;
  j["bytes_enc"] = r.bytes_enc;
  j["bytes_dec"] = r.bytes_dec;
  j["kv_bytes"] = r.kv_bytes;
  j["predicted_time_enc"] = r.predicted_time_enc;
  j["predicted_time_dec"] = r.predicted_time_dec;
  return j;
}

}  // namespace

std::string cost_report_to_json(const CostReport& r) { return report_json(r).dump(2); }

std::string cost_reports_to_json(const std::vector<CostReport>& rs) {
  json arr = json::array();
  for (const auto& r : rs) arr.push_back(report_json(r));
  return arr.dump(2);
}

std::string cost_report_csv_header() {
  return "b,d,h,L_enc,L_dec,K,attention_kind,n_p,n_passages,n_t,float_bytes,"
         "flops_enc_exact,flops_enc_approx,flops_dec_exact,flops_dec_approx,"
         "inv_intensity_mlp,inv_intensity_self,inv_intensity_cross,"
         "bytes_enc,bytes_dec,kv_bytes,predicted_time_enc,predicted_time_dec";
}

std::string cost_report_csv_row(const CostReport& r) {
  std::ostringstream os;
  os << r.input.b << ',' << r.input.d << ',' << r.input.h << ',' << r.input.L_enc << ','
     << r.input.L_dec << ',' << r.input.K << ',' << to_string(r.input.attention_kind)
     << ',' << r.input.n_p << ',' << r.input.n_passages << ',' << r.input.n_t << ','
     << r.input.float_bytes << ',' << r.flops_enc_exact << ',' << r.flops_enc_approx
     << ',' << r.flops_dec_exact << ',' << r.flops_dec_approx << ','
     << fmt_double(r.inv_intensity_mlp) << ',' << fmt_double(r.inv_intensity_self) << ','
     << fmt_double(r.inv_intensity_cross) << ',' << fmt_double(r.bytes_enc) << ','
     << fmt_double(r.bytes_dec) << ',' << r.kv_bytes << ','
     << fmt_double(r.predicted_time_enc) << ',' << fmt_double(r.predicted_time_dec);
  return os.str();
}

}  // namespace fidolab
