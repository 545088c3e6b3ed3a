#pragma once

#include <string>
#include <utility>
#include <vector>

#include "igam/nn.hpp"

namespace igam {

// Checkpoint file: magic "IGAM", u16 format version, then EOF-terminated
// per-tensor records:
//   u32 name length, UTF-8 name, u32 rank, u32 dims..., little-endian f64
//   payload in row-major order.

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(
    const std::string& path);

void save_checkpoint(const std::string& path, const Model& m);
// Fills `m`'s parameters by name; shapes must match the built architecture.
void load_checkpoint(const std::string& path, Model& m);

}  // namespace igam
