#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "srspace/nn.hpp"

namespace srspace {

// Self-describing checkpoint container, shared by the flow, fusion and
// baseline models: 8-byte magic "SRCKPT01", little-endian u64 header size, a
// JSON header (caller metadata plus a tensor table with names/sizes/offsets),
// then the raw parameter doubles. Values round-trip bit-exactly.
void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<ParamTensor*>& params);

// Reads the header only (to choose how to construct the model).
nlohmann::json read_checkpoint_meta(const std::string& path);

// Fills `params` (matched by name and size) and returns the metadata. Throws
// if a tensor is missing or sized differently.
nlohmann::json load_checkpoint(const std::string& path, const std::vector<ParamTensor*>& params);

}  // namespace srspace
