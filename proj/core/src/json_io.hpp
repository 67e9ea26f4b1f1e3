#pragma once

#include <string>

#include <json.hpp>

#include "odenet/basis.hpp"
#include "odenet/model.hpp"

namespace odenet::detail {

using Json = nlohmann::ordered_json;

Json basis_to_json(const BasisSpec& spec);
BasisSpec basis_from_json(const Json& j, const std::string& field);

Json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j, const std::string& field);

// Typed field access; errors name the dotted field path.
const Json& require(const Json& j, const std::string& key, const std::string& field);
std::size_t get_size(const Json& j, const std::string& field);
double get_double(const Json& j, const std::string& field);
std::string get_string(const Json& j, const std::string& field);

}  // namespace odenet::detail
