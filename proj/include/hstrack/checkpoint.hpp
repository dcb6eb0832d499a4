#pragma once

#include <map>
#include <string>
#include <vector>

#include "hstrack/tensor.hpp"

namespace hstrack {

/// Length-prefixed named-tensor container ("HSTCKPT1"): u32 version and
/// entry count, then per entry u32 name length, name bytes, u32 rank, u32
/// dims, f64 LE data; trailing u64 sum-of-bytes checksum. Text metadata
/// (e.g. the training configuration) rides along as byte-valued tensors
/// under "__meta.<key>".
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(
    const std::string& path, const std::vector<Var*>& vars,
    const std::vector<std::pair<std::string, std::vector<double>*>>& buffers,
    const std::map<std::string, std::string>& meta);

Checkpoint load_checkpoint(const std::string& path);

/// Strict name+shape application; throws naming any mismatch.
void apply_checkpoint(
    const Checkpoint& ckpt, const std::vector<Var*>& vars,
    const std::vector<std::pair<std::string, std::vector<double>*>>& buffers);

}  // namespace hstrack
