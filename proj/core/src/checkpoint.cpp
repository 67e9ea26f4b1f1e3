#include "odenet/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_io.hpp"
#include "odenet/errors.hpp"

namespace odenet {

using detail::Json;

namespace {

constexpr const char* kNoBasis = "none";

const BasisSpec* slot_basis(const ModelConfig& config, const ParamSlot& slot) {
  if (!slot.block) return nullptr;
  const BlockConfig& b = config.blocks[*slot.block];
  return slot.state ? &b.basis_s : &b.basis_g;
}

Json tensor_entry(const Tensor& t, const BasisSpec* basis, const std::string& name) {
  if (!t.all_finite()) throw FormatError("cannot serialize non-finite values in " + name);
  Json j;
  if (basis) {
    j["family"] = std::string(to_string(basis->family));
    j["k"] = basis->k;
    j["t_final"] = basis->t_final;
  } else {
    j["family"] = kNoBasis;
    j["k"] = 0;
    j["t_final"] = 0.0;
  }
  j["shape"] = t.shape();
  j["data"] = t.values();
  return j;
}

Tensor tensor_from_entry(const Json& j, const BasisSpec* basis, const std::string& field) {
  const std::string family = detail::get_string(detail::require(j, "family", field), field + ".family");
  const std::size_t k = detail::get_size(detail::require(j, "k", field), field + ".k");
  const double t_final = detail::get_double(detail::require(j, "t_final", field), field + ".t_final");
  if (basis) {
    const auto parsed = parse_basis_family(family);
    if (!parsed) {
      throw SpecError(field + ".family", "unknown basis family '" + family + "' in " + field + ".family");
    }
    if (*parsed != basis->family) {
      throw SpecError(field + ".family", field + ".family disagrees with the block config");
    }
    if (k != basis->k) throw SpecError(field + ".k", field + ".k disagrees with the block config");
    if (t_final != basis->t_final) {
      throw SpecError(field + ".t_final", field + ".t_final disagrees with the block config");
    }
  } else if (family != kNoBasis) {
    throw SpecError(field + ".family", field + ".family must be '" + std::string(kNoBasis) +
                                           "' for a tensor without a basis axis");
  }

  const Json& jshape = detail::require(j, "shape", field);
  if (!jshape.is_array()) throw FormatError(field + ".shape must be an array");
  Shape shape;
  for (std::size_t i = 0; i < jshape.size(); ++i) {
    shape.push_back(detail::get_size(jshape[i], field + ".shape[" + std::to_string(i) + "]"));
  }
  const Json& jdata = detail::require(j, "data", field);
  if (!jdata.is_array()) throw FormatError(field + ".data must be an array");
  if (jdata.size() != shape_size(shape)) {
    throw ShapeError(field + ".data has " + std::to_string(jdata.size()) + " values, shape " +
                     shape_string(shape) + " needs " + std::to_string(shape_size(shape)));
  }
  std::vector<double> data;
  data.reserve(jdata.size());
  for (const Json& v : jdata) {
    if (!v.is_number()) throw FormatError(field + ".data contains a non-number");
    data.push_back(v.get<double>());
  }
  return Tensor(std::move(shape), std::move(data));
}

Json meta_to_json(const CheckpointMeta& meta) {
  Json j;
  j["epochs"] = meta.epochs;
  j["seed"] = meta.seed;
  Json refinements = Json::array();
  for (const auto& r : meta.refinements) {
    refinements.push_back(Json{{"epoch", r.epoch}, {"k", r.k}, {"n_t", r.n_t}});
  }
  j["refinements"] = std::move(refinements);
  Json provenance = Json::array();
  for (const auto& p : meta.provenance) {
    provenance.push_back(
        Json{{"source_hash", p.source_hash}, {"method", p.method}, {"detail", p.detail}});
  }
  j["provenance"] = std::move(provenance);
  return j;
}

std::vector<std::size_t> size_list(const Json& j, const std::string& field) {
  if (!j.is_array()) throw FormatError(field + " must be an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(detail::get_size(j[i], field + "[" + std::to_string(i) + "]"));
  }
  return out;
}

CheckpointMeta meta_from_json(const Json& j) {
  CheckpointMeta meta;
  meta.epochs = detail::get_size(detail::require(j, "epochs", "meta"), "meta.epochs");
  const Json& seed = detail::require(j, "seed", "meta");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
    throw FormatError("meta.seed must be a non-negative integer");
  }
  meta.seed = seed.get<std::uint64_t>();
  const Json& refinements = detail::require(j, "refinements", "meta");
  if (!refinements.is_array()) throw FormatError("meta.refinements must be an array");
  for (std::size_t i = 0; i < refinements.size(); ++i) {
    const std::string f = "meta.refinements[" + std::to_string(i) + "]";
    RefinementRecord r;
    r.epoch = detail::get_size(detail::require(refinements[i], "epoch", f), f + ".epoch");
    r.k = size_list(detail::require(refinements[i], "k", f), f + ".k");
    r.n_t = size_list(detail::require(refinements[i], "n_t", f), f + ".n_t");
    meta.refinements.push_back(std::move(r));
  }
  const Json& provenance = detail::require(j, "provenance", "meta");
  if (!provenance.is_array()) throw FormatError("meta.provenance must be an array");
  for (std::size_t i = 0; i < provenance.size(); ++i) {
    const std::string f = "meta.provenance[" + std::to_string(i) + "]";
    ProvenanceRecord p;
    p.source_hash = detail::get_string(detail::require(provenance[i], "source_hash", f), f + ".source_hash");
    p.method = detail::get_string(detail::require(provenance[i], "method", f), f + ".method");
    p.detail = detail::get_string(detail::require(provenance[i], "detail", f), f + ".detail");
    meta.provenance.push_back(std::move(p));
  }
  return meta;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  const Model& model = ckpt.model;
  Json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["config"] = detail::model_config_to_json(model.config());
  Json params_g = Json::object();
  Json params_s = Json::object();
  for (const ParamSlot& slot : model_layout(model.config())) {
    const Tensor& t = slot.state ? model.params_s()[slot.name] : model.params_g()[slot.name];
    (slot.state ? params_s : params_g)[slot.name] =
        tensor_entry(t, slot_basis(model.config(), slot), slot.name);
  }
  doc["params_g"] = std::move(params_g);
  doc["params_s"] = std::move(params_s);
  doc["meta"] = meta_to_json(ckpt.meta);
  return doc.dump(1);
}

Checkpoint checkpoint_from_json(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("checkpoint must be a JSON object");
  const Json& version = detail::require(doc, "format_version", "checkpoint");
  if (!version.is_number_integer() || version.get<long long>() != kCheckpointFormatVersion) {
    throw VersionError("unsupported checkpoint format_version " + version.dump() + " (expected " +
                       std::to_string(kCheckpointFormatVersion) + ")");
  }
  ModelConfig config = detail::model_config_from_json(detail::require(doc, "config", "checkpoint"), "config");

  const Json& jg = detail::require(doc, "params_g", "checkpoint");
  const Json& js = detail::require(doc, "params_s", "checkpoint");
  if (!jg.is_object() || !js.is_object()) throw FormatError("params_g and params_s must be objects");
  ad::ParamStore g;
  ad::ParamStore s;
  for (const ParamSlot& slot : model_layout(config)) {
    const Json& group = slot.state ? js : jg;
    const std::string group_name = slot.state ? "params_s" : "params_g";
    const auto it = group.find(slot.name);
    if (it == group.end()) throw FormatError("missing parameter " + group_name + "." + slot.name);
    Tensor t = tensor_from_entry(*it, slot_basis(config, slot), group_name + "." + slot.name);
    if (t.shape() != slot.shape) {
      throw ShapeError(group_name + "." + slot.name + " has shape " + shape_string(t.shape()) +
                       ", architecture needs " + shape_string(slot.shape));
    }
    (slot.state ? s : g).add(slot.name, std::move(t));
  }
  if (jg.size() != g.size() || js.size() != s.size()) {
    throw FormatError("checkpoint holds parameters the architecture does not use");
  }
  CheckpointMeta meta = meta_from_json(detail::require(doc, "meta", "checkpoint"));
  return Checkpoint{Model(std::move(config), std::move(g), std::move(s)), std::move(meta)};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string text = checkpoint_to_json(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

std::string checkpoint_hash(const Checkpoint& ckpt) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a64(checkpoint_to_json(ckpt))));
  return hex;
}

}  // namespace odenet
