#pragma once

#include <iosfwd>
#include <string>

#include "agfa/tensor.hpp"

namespace agfa {

// Flat binary tensor record, used standalone and inside checkpoints:
//   magic "AGT1", u8 rank, u32 little-endian extent per axis,
//   then size() little-endian 64-bit values. Gradients are not stored.
void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace agfa
