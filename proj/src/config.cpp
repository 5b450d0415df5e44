#include "fidolab/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fidolab {

std::string to_string(AttentionKind k) {
  return k == AttentionKind::MHA ? "MHA" : "MQA";
}

AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "MHA") return AttentionKind::MHA;
  if (s == "MQA") return AttentionKind::MQA;
  throw std::invalid_argument("attention_kind: expected \"MHA\" or \"MQA\", got \"" +
                              s + "\"");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (d <= 0) fail("d must be positive");
  if (h <= 0) fail("h must be positive");
  if (d % h != 0) fail("d must be divisible by h");
  if (d_ff != 4 * d) fail("d_ff must equal 4*d");
  if (L_enc <= 0) fail("L_enc must be positive");
  if (L_dec < 1) fail("L_dec must be >= 1");
  if (K < 1) fail("K must be >= 1");
  if (vocab <= 0) fail("vocab must be positive");
  if (n_p <= 0) fail("n_p must be positive");
  if (n_passages <= 0) fail("n_passages must be positive");
  if (n_t_max < 0) fail("n_t_max must be non-negative");
}

std::vector<int> lsa_schedule(int L_dec, int K) {
  std::vector<int> layers;
  for (int l = K; l <= L_dec; l += K) layers.push_back(l);
  if (layers.empty()) layers.push_back(L_dec);
  return layers;
}

namespace {

using nlohmann::json;

int require_int(const json& j, const char* field) {
  if (!j.contains(field)) {
    throw std::invalid_argument(std::string("config: missing field \"") + field + "\"");
  }
  if (!j.at(field).is_number_integer()) {
    throw std::invalid_argument(std::string("config: field \"") + field +
                                "\" must be an integer");
  }
  return j.at(field).get<int>();
}

}  // namespace

ModelConfig model_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  ModelConfig cfg;
  cfg.d = require_int(j, "d");
  cfg.h = require_int(j, "h");
  cfg.L_enc = require_int(j, "L_enc");
  cfg.L_dec = require_int(j, "L_dec");
  cfg.K = require_int(j, "K");
  cfg.vocab = require_int(j, "vocab");
  cfg.n_p = require_int(j, "n_p");
  cfg.n_passages = require_int(j, "n_passages");
  cfg.n_t_max = require_int(j, "n_t_max");
  cfg.d_ff = j.contains("d_ff") ? require_int(j, "d_ff") : 4 * cfg.d;
  if (j.contains("attention_kind")) {
    if (!j.at("attention_kind").is_string()) {
      throw std::invalid_argument("config: field \"attention_kind\" must be a string");
    }
    cfg.attention_kind = attention_kind_from_string(j.at("attention_kind").get<std::string>());
  }
  cfg.validate();
  return cfg;
}

ModelConfig model_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_config_from_json(buf.str());
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["d"] = cfg.d;
  j["h"] = cfg.h;
  j["d_ff"] = cfg.d_ff;
  j["L_enc"] = cfg.L_enc;
  j["L_dec"] = cfg.L_dec;
  j["K"] = cfg.K;
  j["attention_kind"] = to_string(cfg.attention_kind);
  j["vocab"] = cfg.vocab;
  j["n_p"] = cfg.n_p;
  j["n_passages"] = cfg.n_passages;
  j["n_t_max"] = cfg.n_t_max;
  return j.dump();
}

}  // namespace fidolab
