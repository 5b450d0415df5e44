#pragma once

#include <vector>

#include "fidolab/model.hpp"

namespace fidolab {

// Pass as eos_token to decode until max_len regardless of output.
constexpr int kNoEos = -1;

struct DecodeResult {
  std::vector<int> tokens;
  Counters encoder_counters;
  Counters decoder_counters;    // cache init plus all steps
  double wall_encoder = 0.0;    // seconds
  double wall_decoder = 0.0;
};

// Argmax decoding, lowest token id wins ties. Stops after emitting
// eos_token or after max_len tokens.
DecodeResult greedy_decode(const FidModel& model, const FiDInput& input, int max_len,
                           int eos_token);

// Length-normalized beam search (cumulative log-probability divided by
// token count). Finished hypotheses leave the beam; the search stops
// once no active hypothesis can still beat the best finished score.
// beam_width 1 reproduces greedy_decode token-for-token.
DecodeResult beam_decode(const FidModel& model, const FiDInput& input, int beam_width,
                         int max_len, int eos_token);

// Greedy continuation over an existing cache; used by the bench driver
// to time encode and decode phases separately.
std::vector<int> greedy_steps(const FidModel& model, KVCache& cache, int max_len,
                              int eos_token, Counters& ctr);

// Sum over t of log P(tokens[t] | tokens[<t], enc), computed with the
// teacher-forced oracle path.
double sequence_log_prob(const FidModel& model, const EncoderOutput& enc,
                         const std::vector<int>& tokens);

}  // namespace fidolab
