#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sivit/tensor.hpp"

namespace sivit {

// Parameter files: one UTF-8 JSON header line
//   {"format":"sivit-ckpt-1","meta":{...},"tensors":[{"name","shape","offset"},...]}
// followed by every tensor's values back to back as raw 64-bit little-endian
// floats. Offsets are element indices into that payload, in listed order, so
// the round trip is bit-exact.

struct LoadedParams {
    std::string meta_json;  // the header's "meta" object, re-serialized
    std::vector<std::pair<std::string, Tensor>> tensors;  // plain leaves
};

// meta_json must be a serialized JSON object; params are written in order.
void save_params(const std::string& path, const std::string& meta_json,
                 const std::vector<std::pair<std::string, Tensor>>& params);

// Throws IoError naming the file on missing/corrupt/truncated input.
LoadedParams load_params(const std::string& path);

}  // namespace sivit
