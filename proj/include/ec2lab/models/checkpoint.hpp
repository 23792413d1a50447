#pragma once

#include <string>

#include "ec2lab/numerics/param.hpp"

namespace ec2lab::models {

// Single-file checkpoint: one JSON manifest line
//   {"format_version":1,"tensors":[{"name":...,"shape":[...],"dtype":"f32"},...]}
// followed by the tensors' data concatenated in manifest order, little-endian
// 32-bit floats, row-major. Tensors appear sorted by name (the store's order),
// so save -> load -> save is byte-identical.
void save_checkpoint(const num::ParamStore& params, const std::string& path);

// Loads into an existing store. Every manifest tensor must match a store
// parameter by name and shape, and cover the store exactly; anything else is
// reported as corruption. Values arrive as the 64-bit images of the stored
// 32-bit floats.
void load_checkpoint(num::ParamStore& params, const std::string& path);

}  // namespace ec2lab::models
