#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prism/adam.hpp"

namespace prism {

// Checkpoint container: an 8-byte magic, a little-endian u64 header length,
// a JSON metadata header (version, module names, tensor names/shapes/dtype,
// embedded run config) and the flat little-endian float64 arrays in header
// order. save -> load -> save is byte-identical.
struct CheckpointData {
  std::uint32_t version = 1;
  std::vector<std::string> modules;
  std::string config_text;
  double gate_tau = 1.8;
  std::int64_t train_steps = 0;
  std::vector<std::string> tensor_names;               // header order
  std::map<std::string, std::vector<std::size_t>> shapes;
  std::map<std::string, std::vector<double>> tensors;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Convenience bridges for a named parameter list.
CheckpointData checkpoint_from_params(const ParamList& params, const std::vector<std::string>& modules,
                                      const std::string& config_text, double gate_tau, std::int64_t train_steps);
void apply_checkpoint(const CheckpointData& data, ParamList& params);  // errors on shape mismatch

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace prism
