#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fidolab/model.hpp"

namespace fidolab {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;   // failure cause or achieved tolerance
};

// Oracle suites on freshly seeded toy models:
//   incremental-vs-teacher-forced, mqa-tied-head,
//   lsa-cross-attention-sparsity, counter-formula-equality,
//   beam1-greedy-equivalence.
std::vector<SuiteResult> run_verification(std::uint64_t seed);

// Suites exercising externally supplied weights (after loading):
//   weights-finite, incremental-vs-teacher-forced,
//   counter-formula-equality, greedy-determinism.
std::vector<SuiteResult> run_verification_on(const FidModel& model, std::uint64_t seed);

// Deterministic toy input for a config (question plus full passages).
FiDInput verification_input(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace fidolab
