#pragma once

#include <string>

#include "agfa/model.hpp"

namespace agfa {

// Flat key = value text form of a ModelConfig. One field per line, '#'
// comments, booleans as true/false, dilation list comma-separated:
//
//   base_channels = 16
//   depth = 5
//   in_channels = 1
//   out_channels = 1
//   use_frm = true
//   frm_reduction = 8
//   use_safa = true
//   safa_dilations = 1,2,3,4
//   use_safa_self_attention = true
//   use_hfim = true
std::string config_to_text(const ModelConfig& config);
ModelConfig config_from_text(const std::string& text);

void save_config(const std::string& path, const ModelConfig& config);
ModelConfig load_config(const std::string& path);

// Resolves a --config argument: a known ablation row name ("baseline",
// "net1".."net9", "agfa"/"agfa-net", case-insensitive, spaces ignored) or a
// path to a config file.
ModelConfig resolve_config(const std::string& name_or_path);

}  // namespace agfa
