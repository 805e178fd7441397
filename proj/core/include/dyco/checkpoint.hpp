#pragma once

#include <map>
#include <string>

#include "dyco/tensor.hpp"

namespace dyco {

// Named tensor map, the unit of model state shared by the backbone, the
// fusion head, and the optimizer.
using ParamMap = std::map<std::string, Tensor>;

// "DYTN" checkpoint container: little-endian, magic "DYTN", u32 version=1,
// u32 tensor count; per tensor u32 name length, UTF-8 name, u32 rank,
// u64 dims[rank], f64 data. Round-trips bit-exactly.
void save_checkpoint(const ParamMap& params, const std::string& path);
ParamMap load_checkpoint(const std::string& path);

}  // namespace dyco
