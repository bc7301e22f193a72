#pragma once

// Checkpoint container for named tensors.
//
//   line 1   "GELAE-CHECKPOINT 1"
//   line 2   compact JSON header:
//              {"tensors": [{"name", "shape", "offset"}...],
//               "payload_bytes": N, "config": {...}}
//            offsets are byte offsets into the payload
//   payload  raw little-endian float64 values, tensors back to back
//
// Round-tripping is bit-exact.

#include <iosfwd>
#include <string>
#include <vector>

#include "gelae/autodiff.h"
#include "json.hpp"

namespace gelae {

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

struct CheckpointData {
  nlohmann::json config;
  std::vector<NamedTensor> tensors;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors,
                      const nlohmann::json& config);
CheckpointData read_checkpoint(std::istream& in);

}  // namespace gelae
