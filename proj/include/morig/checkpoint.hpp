#pragma once

#include <string>

#include "morig/optim.hpp"

namespace morig {

// Little-endian binary parameter file:
//   magic "MRIGPRM1", u32 version, u64 count,
//   then per parameter: u32 name length, name bytes, u32 rank,
//   i64 extents..., float64 payload.
// Parameters are written in sorted-name order; payloads round-trip bit-exactly.
void save_checkpoint(const std::string& path, const ParamSet& params);
void load_checkpoint(const std::string& path, ParamSet& params);

// Save/load including optimizer moments and step counter (stored as extra
// parameters under the "__opt__/" prefix) so training can resume bit-exactly.
void save_training_state(const std::string& path, const ParamSet& params, const Adam& opt);
void load_training_state(const std::string& path, ParamSet& params, Adam& opt);

} // namespace morig
