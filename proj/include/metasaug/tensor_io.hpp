// Checkpoint convention shared by model parameters and covariance banks:
// <prefix>.bin holds concatenated row-major 64-bit reals (native IEEE-754
// little-endian), <prefix>.json lists tensor names, shapes and offsets plus
// any caller metadata.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "metasaug/numerics.hpp"

namespace metasaug {

struct NamedTensor {
  std::string name;
  Matrix data;  // vectors stored as 1 x n
};

void save_tensors(const std::vector<NamedTensor>& tensors, const std::string& prefix,
                  const nlohmann::json& metadata = nlohmann::json::object());

std::pair<std::vector<NamedTensor>, nlohmann::json> load_tensors(const std::string& prefix);

}  // namespace metasaug
