#include "json_io.hpp"

#include "odenet/errors.hpp"

namespace odenet::detail {

const Json& require(const Json& j, const std::string& key, const std::string& field) {
  if (!j.is_object()) throw FormatError(field + " must be an object");
  const auto it = j.find(key);
  if (it == j.end()) throw FormatError("missing field " + field + "." + key);
  return *it;
}

std::size_t get_size(const Json& j, const std::string& field) {
  if (!j.is_number_integer() || (j.is_number_integer() && j.get<long long>() < 0)) {
    throw SpecError(field, field + " must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

double get_double(const Json& j, const std::string& field) {
  if (!j.is_number()) throw SpecError(field, field + " must be a number");
  return j.get<double>();
}

std::string get_string(const Json& j, const std::string& field) {
  if (!j.is_string()) throw SpecError(field, field + " must be a string");
  return j.get<std::string>();
}

Json basis_to_json(const BasisSpec& spec) {
  Json j;
  j["family"] = std::string(to_string(spec.family));
  j["k"] = spec.k;
  j["t_final"] = spec.t_final;
  return j;
}

BasisSpec basis_from_json(const Json& j, const std::string& field) {
  BasisSpec spec;
  const std::string family = get_string(require(j, "family", field), field + ".family");
  const auto parsed = parse_basis_family(family);
  if (!parsed) throw SpecError(field + ".family", "unknown basis family '" + family + "' in " + field + ".family");
  spec.family = *parsed;
  spec.k = get_size(require(j, "k", field), field + ".k");
  spec.t_final = get_double(require(j, "t_final", field), field + ".t_final");
  try {
    spec.validate();
  } catch (const Error& e) {
    throw SpecError(field, field + ": " + e.what());
  }
  return spec;
}

Json model_config_to_json(const ModelConfig& config) {
  Json j;
  j["input_dim"] = config.input_dim;
  j["num_classes"] = config.num_classes;
  Json blocks = Json::array();
  for (const BlockConfig& b : config.blocks) {
    Json jb;
    jb["width"] = b.width;
    jb["scheme"] = std::string(to_string(b.scheme));
    jb["n_steps"] = b.n_steps;
    jb["t_final"] = b.t_final;
    jb["basis_g"] = basis_to_json(b.basis_g);
    jb["basis_s"] = basis_to_json(b.basis_s);
    jb["bn_momentum"] = b.bn_momentum;
    jb["bn_eps"] = b.bn_eps;
    blocks.push_back(std::move(jb));
  }
  j["blocks"] = std::move(blocks);
  return j;
}

ModelConfig model_config_from_json(const Json& j, const std::string& field) {
  ModelConfig config;
  config.input_dim = get_size(require(j, "input_dim", field), field + ".input_dim");
  config.num_classes = get_size(require(j, "num_classes", field), field + ".num_classes");
  const Json& blocks = require(j, "blocks", field);
  if (!blocks.is_array()) throw SpecError(field + ".blocks", field + ".blocks must be an array");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string f = field + ".blocks[" + std::to_string(i) + "]";
    const Json& jb = blocks[i];
    BlockConfig b;
    b.width = get_size(require(jb, "width", f), f + ".width");
    const std::string scheme = get_string(require(jb, "scheme", f), f + ".scheme");
    const auto parsed = parse_scheme(scheme);
    if (!parsed) throw SpecError(f + ".scheme", "unknown scheme '" + scheme + "' in " + f + ".scheme");
    b.scheme = *parsed;
    b.n_steps = get_size(require(jb, "n_steps", f), f + ".n_steps");
    b.t_final = get_double(require(jb, "t_final", f), f + ".t_final");
    b.basis_g = basis_from_json(require(jb, "basis_g", f), f + ".basis_g");
    b.basis_s = basis_from_json(require(jb, "basis_s", f), f + ".basis_s");
    b.bn_momentum = get_double(require(jb, "bn_momentum", f), f + ".bn_momentum");
    b.bn_eps = get_double(require(jb, "bn_eps", f), f + ".bn_eps");
    config.blocks.push_back(b);
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw SpecError(field, field + ": " + e.what());
  }
  return config;
}

}  // namespace odenet::detail
