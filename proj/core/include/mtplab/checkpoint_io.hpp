#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "mtplab/model.hpp"
#include "mtplab/tensor.hpp"

namespace mtplab {

// Container file: magic "MTPL", u32 version, length-prefixed canonical JSON
// header, then a name-sorted table of (name, shape, little-endian float32
// payload). Round-trips bit-exactly.
inline constexpr uint32_t kContainerVersion = 1;

struct Container {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
};

void write_container(const std::string& path, const nlohmann::json& header,
                     const std::map<std::string, Tensor>& tensors);
Container read_container(const std::string& path);

// Base-model checkpoint on top of the container. The header records config,
// frozen set and meta; every config-implied parameter must be present.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Names every parameter a base checkpoint with this config must contain.
std::vector<std::string> expected_param_names(const ModelConfig& config);

}  // namespace mtplab
