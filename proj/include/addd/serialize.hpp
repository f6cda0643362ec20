#pragma once

#include <json.hpp>

#include "addd/tensor.hpp"
#include "addd/vae.hpp"

namespace addd {

inline constexpr const char* kVaeFormat = "addd-vae/1";

nlohmann::json tensor_to_json(const Tensor2& t);
Tensor2 tensor_from_json(const nlohmann::json& j);

nlohmann::json vae_to_json(const VaeModel& model);
VaeModel vae_from_json(const nlohmann::json& j);

}  // namespace addd
