#pragma once

#include <string>

#include "fidolab/model.hpp"

namespace fidolab {

// FIDO1 weight file:
//   magic "FIDO1"
//   u64 LE length, then that many bytes of config JSON (UTF-8)
//   one record per parameter, in the visit_weights order:
//     u64 LE name length, name bytes, u64 LE rows, u64 LE cols,
//     rows*cols little-endian IEEE-754 doubles, row-major
// Assumes a little-endian host.

void save_weights(const std::string& path, const FidModel& model);

// Throws std::runtime_error describing the first structural problem
// (bad magic, truncation, record name/shape mismatch).
FidModel load_model(const std::string& path);

// As load_model, but additionally requires the embedded config to equal
// `expected` field-for-field.
FidModel load_model_checked(const std::string& path, const ModelConfig& expected);

}  // namespace fidolab
