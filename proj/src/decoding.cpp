#include "fidolab/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace fidolab {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(v.size()); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
  return out;
}

void check_max_len(const FidModel& model, int max_len) {
  if (max_len < 0 || max_len > model.config().n_t_max) {
    throw std::invalid_argument("decode: max_len " + std::to_string(max_len) +
                                " outside [0, n_t_max = " +
                                std::to_string(model.config().n_t_max) + "]");
  }
}

struct Hypothesis {
  KVCache cache;
  std::vector<int> tokens;
  double cum_log_prob = 0.0;
};

}  // namespace

std::vector<int> greedy_steps(const FidModel& model, KVCache& cache, int max_len,
                              int eos_token, Counters& ctr) {
  std::vector<int> tokens;
  int prev = FidModel::kBosToken;
  for (int t = 0; t < max_len; ++t) {
    const std::vector<double> logits = model.decoder_step(cache, prev, ctr);
    const int next = argmax_lowest(logits);
    tokens.push_back(next);
    if (next == eos_token) break;
    prev = next;
  }
  return tokens;
}

DecodeResult greedy_decode(const FidModel& model, const FiDInput& input, int max_len,
                           int eos_token) {
  check_max_len(model, max_len);
  DecodeResult res;

  auto t0 = Clock::now();
  const EncoderOutput enc = model.encode(input, res.encoder_counters);
  res.wall_encoder = seconds_since(t0);

  auto t1 = Clock::now();
  KVCache cache = model.make_cache(enc, res.decoder_counters);
  res.tokens = greedy_steps(model, cache, max_len, eos_token, res.decoder_counters);
  res.wall_decoder = seconds_since(t1);
  return res;
}

DecodeResult beam_decode(const FidModel& model, const FiDInput& input, int beam_width,
                         int max_len, int eos_token) {
  if (beam_width < 1) {
    throw std::invalid_argument("beam_decode: beam_width must be >= 1");
  }
  check_max_len(model, max_len);
  DecodeResult res;

  auto t0 = Clock::now();
  const EncoderOutput enc = model.encode(input, res.encoder_counters);
  res.wall_encoder = seconds_since(t0);

  auto t1 = Clock::now();
  KVCache root = model.make_cache(enc, res.decoder_counters);
  if (max_len == 0) {
    res.wall_decoder = seconds_since(t1);
    return res;
  }

  std::vector<Hypothesis> active;
  active.push_back({std::move(root), {}, 0.0});
  bool have_finished = false;
  double best_finished_score = 0.0;
  std::vector<int> best_finished_tokens;

  auto consider_finished = [&](const std::vector<int>& tokens, double cum) {
    const double score = cum / static_cast<double>(tokens.size());
    if (!have_finished || score > best_finished_score) {
      have_finished = true;
      best_finished_score = score;
      best_finished_tokens = tokens;
    }
  };

  struct Candidate {
    std::size_t parent;
    int token;
    double cum;
  };

  for (int step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<Candidate> pool;
    for (std::size_t i = 0; i < active.size(); ++i) {
      auto& hyp = active[i];
      const int prev = hyp.tokens.empty() ? FidModel::kBosToken : hyp.tokens.back();
      const std::vector<double> logits =
          model.decoder_step(hyp.cache, prev, res.decoder_counters);
      const std::vector<double> logp = log_softmax(logits);
      // Only the per-hypothesis top beam_width extensions can survive
      // the global cut.
      std::vector<int> ids(logp.size());
      for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = static_cast<int>(j);
      const std::size_t keep = std::min<std::size_t>(beam_width, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep),
                        ids.end(), [&](int a, int b) {
                          if (logp[a] != logp[b]) return logp[a] > logp[b];
                          return a < b;
                        });
      for (std::size_t j = 0; j < keep; ++j) {
        pool.push_back({i, ids[j], hyp.cum_log_prob + logp[static_cast<std::size_t>(ids[j])]});
      }
    }

    std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
      if (a.cum != b.cum) return a.cum > b.cum;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });

    std::vector<Hypothesis> next;
    for (const Candidate& c : pool) {
      if (static_cast<int>(next.size()) >= beam_width) break;
      std::vector<int> tokens = active[c.parent].tokens;
      tokens.push_back(c.token);
      if (c.token == eos_token) {
        consider_finished(tokens, c.cum);
        continue;
      }
      next.push_back({active[c.parent].cache.clone(), std::move(tokens), c.cum});
    }
    active = std::move(next);

    if (have_finished && !active.empty()) {
      // Optimistic bound: future tokens contribute at most log-prob 0,
      // and lengthening only helps a non-positive cumulative score.
      double best_possible = -std::numeric_limits<double>::infinity();
      for (const auto& hyp : active) {
        const double len_bound = hyp.cum_log_prob <= 0.0
                                     ? static_cast<double>(max_len)
                                     : static_cast<double>(hyp.tokens.size() + 1);
        best_possible = std::max(best_possible, hyp.cum_log_prob / len_bound);
      }
      if (best_possible <= best_finished_score) break;
    }
  }

  for (const auto& hyp : active) {
    if (!hyp.tokens.empty()) consider_finished(hyp.tokens, hyp.cum_log_prob);
  }
  res.tokens = best_finished_tokens;
  res.wall_decoder = seconds_since(t1);
  return res;
}

double sequence_log_prob(const FidModel& model, const EncoderOutput& enc,
                         const std::vector<int>& tokens) {
  if (tokens.empty()) return 0.0;
  Counters scratch;
  const Matrix logits = model.teacher_forced_forward(enc, tokens, scratch);
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = logits.row(t);
    const std::vector<double> lp = log_softmax({row.begin(), row.end()});
    total += lp[static_cast<std::size_t>(tokens[t])];
  }
  return total;
}

}  // namespace fidolab
