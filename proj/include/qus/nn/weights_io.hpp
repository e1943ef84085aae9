#pragma once

#include <map>
#include <string>

#include "qus/nn/optim.hpp"

namespace qus::nn {

// Named-tensor container, little-endian: magic "QWT1", u32 tensor count,
// then per tensor {u32 name length, name bytes, u32 rank (=4),
// u32 dims[rank], f32 data row-major}.  Tensors are written in name order,
// so exports are byte-reproducible.
void export_weights(const std::string& path, const ParamMap& params);
ParamMap read_weights(const std::string& path);

// Copies tensors from the file into params; mapping is file-tensor-name ->
// parameter-name, and ONLY mapped tensors are touched.  Unknown names or
// shape mismatches raise ImportError naming every offending tensor.
void import_weights(ParamMap& params, const std::string& path,
                    const std::map<std::string, std::string>& mapping);

}  // namespace qus::nn
