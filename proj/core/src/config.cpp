#include "odenet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json_io.hpp"
#include "odenet/errors.hpp"

namespace odenet {

using detail::Json;

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& field) {
  if (!j.is_object()) throw ConfigError(field + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown field " + field + "." + key);
  }
}

template <class T, class Get>
void optional_field(const Json& j, const std::string& key, const std::string& field, T& out, Get get) {
  const auto it = j.find(key);
  if (it != j.end()) out = get(*it, field + "." + key);
}

std::vector<std::size_t> epoch_list(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field + " must be an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(detail::get_size(j[i], field + "[" + std::to_string(i) + "]"));
  }
  return out;
}

bool get_bool(const Json& j, const std::string& field) {
  if (!j.is_boolean()) throw ConfigError(field + " must be true or false");
  return j.get<bool>();
}

BlockConfig parse_block(const Json& j, const std::string& field) {
  reject_unknown(j,
                 {"width", "scheme", "n_steps", "t_final", "family", "k", "state_family", "state_k",
                  "bn_momentum", "bn_eps"},
                 field);
  BlockConfig b;
  optional_field(j, "width", field, b.width, detail::get_size);
  std::string scheme = "rk4";
  optional_field(j, "scheme", field, scheme, detail::get_string);
  const auto parsed_scheme = parse_scheme(scheme);
  if (!parsed_scheme) throw ConfigError("unknown scheme '" + scheme + "' in " + field + ".scheme");
  b.scheme = *parsed_scheme;
  optional_field(j, "n_steps", field, b.n_steps, detail::get_size);
  optional_field(j, "t_final", field, b.t_final, detail::get_double);

  std::string family = "piecewise_constant";
  std::size_t k = 1;
  optional_field(j, "family", field, family, detail::get_string);
  optional_field(j, "k", field, k, detail::get_size);
  std::string state_family = family;
  std::size_t state_k = k;
  optional_field(j, "state_family", field, state_family, detail::get_string);
  optional_field(j, "state_k", field, state_k, detail::get_size);
  const auto fam_g = parse_basis_family(family);
  if (!fam_g) throw ConfigError("unknown basis family '" + family + "' in " + field + ".family");
  const auto fam_s = parse_basis_family(state_family);
  if (!fam_s) {
    throw ConfigError("unknown basis family '" + state_family + "' in " + field + ".state_family");
  }
  b.basis_g = BasisSpec{*fam_g, k, b.t_final};
  b.basis_s = BasisSpec{*fam_s, state_k, b.t_final};
  optional_field(j, "bn_momentum", field, b.bn_momentum, detail::get_double);
  optional_field(j, "bn_eps", field, b.bn_eps, detail::get_double);
  return b;
}

}  // namespace

void set_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.train.seed = seed;
}

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig rc;
  try {
    reject_unknown(doc, {"seed", "model", "train", "dataset", "output"}, "config");
    std::size_t seed = 0;
    optional_field(doc, "seed", "config", seed, detail::get_size);
    rc.seed = seed;

    // Dataset first: it determines the model's input and output sizes.
    if (doc.contains("dataset")) {
      const Json& d = doc["dataset"];
      reject_unknown(d,
                     {"kind", "n_train", "n_test", "noise", "train_images", "train_labels",
                      "test_images", "test_labels", "train_limit", "test_limit", "pool2x2"},
                     "dataset");
      DatasetSpec& ds = rc.dataset;
      optional_field(d, "kind", "dataset", ds.kind, detail::get_string);
      optional_field(d, "n_train", "dataset", ds.n_train, detail::get_size);
      optional_field(d, "n_test", "dataset", ds.n_test, detail::get_size);
      optional_field(d, "noise", "dataset", ds.noise, detail::get_double);
      auto path = [&](const Json& v, const std::string& f) {
        const std::filesystem::path p = detail::get_string(v, f);
        return (p.is_absolute() || base_dir.empty() ? p : base_dir / p).string();
      };
      optional_field(d, "train_images", "dataset", ds.train_images, path);
      optional_field(d, "train_labels", "dataset", ds.train_labels, path);
      optional_field(d, "test_images", "dataset", ds.test_images, path);
      optional_field(d, "test_labels", "dataset", ds.test_labels, path);
      optional_field(d, "train_limit", "dataset", ds.train_limit, detail::get_size);
      optional_field(d, "test_limit", "dataset", ds.test_limit, detail::get_size);
      optional_field(d, "pool2x2", "dataset", ds.pool2x2, get_bool);
    }
    const DatasetSpec& ds = rc.dataset;
    if (ds.kind == "idx") {
      if (ds.train_images.empty() || ds.train_labels.empty() || ds.test_images.empty() ||
          ds.test_labels.empty()) {
        throw ConfigError("dataset kind 'idx' needs train/test image and label paths");
      }
      rc.model.input_dim = ds.pool2x2 ? 196 : 784;
      rc.model.num_classes = 10;
    } else {
      const auto kind = parse_synthetic_kind(ds.kind);
      if (!kind) throw ConfigError("unknown dataset kind '" + ds.kind + "' in dataset.kind");
      if (ds.n_train < 2 || ds.n_test < 1) throw ConfigError("dataset sizes too small");
      rc.model.input_dim = 2;
      rc.model.num_classes = *kind == SyntheticKind::Blobs ? 3 : 2;
    }

    if (!doc.contains("model")) throw ConfigError("missing field config.model");
    const Json& m = doc["model"];
    reject_unknown(m, {"blocks"}, "model");
    if (!m.contains("blocks") || !m["blocks"].is_array() || m["blocks"].empty()) {
      throw ConfigError("model.blocks must be a non-empty array");
    }
    for (std::size_t i = 0; i < m["blocks"].size(); ++i) {
      rc.model.blocks.push_back(parse_block(m["blocks"][i], "model.blocks[" + std::to_string(i) + "]"));
    }
    rc.model.validate();

    std::size_t epochs = 200;
    const Json empty = Json::object();
    const Json& t = doc.contains("train") ? doc["train"] : empty;
    reject_unknown(t,
                   {"epochs", "batch_size", "learning_rate", "lr_decay", "lr_decay_epochs", "momentum",
                    "weight_decay", "refinement_epochs", "refinements"},
                   "train");
    optional_field(t, "epochs", "train", epochs, detail::get_size);
    std::size_t refinements = 3;
    optional_field(t, "refinements", "train", refinements, detail::get_size);
    rc.train = default_schedule(epochs, refinements);
    optional_field(t, "batch_size", "train", rc.train.batch_size, detail::get_size);
    optional_field(t, "learning_rate", "train", rc.train.learning_rate, detail::get_double);
    optional_field(t, "lr_decay", "train", rc.train.lr_decay, detail::get_double);
    optional_field(t, "lr_decay_epochs", "train", rc.train.lr_decay_epochs, epoch_list);
    optional_field(t, "momentum", "train", rc.train.momentum, detail::get_double);
    optional_field(t, "weight_decay", "train", rc.train.weight_decay, detail::get_double);
    optional_field(t, "refinement_epochs", "train", rc.train.refinement_epochs, epoch_list);
    rc.train.seed = rc.seed;
    rc.train.validate();

    if (doc.contains("output")) {
      const Json& o = doc["output"];
      reject_unknown(o, {"checkpoint", "metrics"}, "output");
      optional_field(o, "checkpoint", "output", rc.checkpoint_path, detail::get_string);
      optional_field(o, "metrics", "output", rc.metrics_path, detail::get_string);
    }
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str(), path.parent_path());
}

DataSplit load_datasets(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == "idx") {
    DataSplit split;
    split.train = load_idx(spec.train_images, spec.train_labels, {spec.train_limit, spec.pool2x2});
    split.test = load_idx(spec.test_images, spec.test_labels, {spec.test_limit, spec.pool2x2});
    return split;
  }
  const auto kind = parse_synthetic_kind(spec.kind);
  if (!kind) throw ConfigError("unknown dataset kind '" + spec.kind + "'");
  // Distinct streams for the two splits; the test split depends only on seed.
  DataSplit split;
  split.train = make_synthetic(*kind, spec.n_train, spec.noise, 2 * seed + 1);
  split.test = make_synthetic(*kind, spec.n_test, spec.noise, 2 * seed + 2);
  return split;
}

Dataset load_eval_dataset(const DatasetSpec& spec, std::uint64_t seed, std::size_t limit) {
  Dataset test;
  if (spec.kind == "idx") {
    const std::size_t n = limit > 0 ? limit : spec.test_limit;
    test = load_idx(spec.test_images, spec.test_labels, {n, spec.pool2x2});
  } else {
    const auto kind = parse_synthetic_kind(spec.kind);
    if (!kind) throw ConfigError("unknown dataset kind '" + spec.kind + "'");
    test = make_synthetic(*kind, spec.n_test, spec.noise, 2 * seed + 2);
    if (limit > 0) test = test.slice(0, limit);
  }
  return test;
}

}  // namespace odenet
