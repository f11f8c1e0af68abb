#include <fstream>
#include <sstream>

#include "nmcdr/cli/experiment.hpp"
#include "nmcdr/util/io.hpp"
#include "toml.hpp"

namespace nmcdr::cli {

using nlohmann::json;

nlohmann::json ExperimentConfig::to_json() const {
  json j;
  j["data"] = {{"source", data.source},
               {"z", data.z},
               {"zbar", data.zbar},
               {"format", data::format_name(data.format)},
               {"min_interactions", data.min_interactions},
               {"overlap_ratio", data.overlap_ratio},
               {"density", data.density},
               {"split", data.split == data::SplitMode::Timestamp ? "timestamp" : "random"},
               {"validation", data.validation}};
  j["synthetic"] = {{"users", synthetic.users},
                    {"items", synthetic.items},
                    {"rank", synthetic.rank},
                    {"overlap_fraction", synthetic.overlap_fraction},
                    {"long_tail_exponent", synthetic.long_tail_exponent},
                    {"min_degree", synthetic.min_degree},
                    {"max_degree", synthetic.max_degree},
                    {"noise", synthetic.noise}};
  j["model"] = model.to_json();
  j["model"]["k_head"] = k_head;
  j["model"]["matching_size"] = matching.sample_size;
  j["model"]["exact_matching"] = matching.exact;
  j["loss"] = loss.to_json();
  j["train"] = train.to_json();
  j["ablation"] = {{"variant", variant}};
  j["eval"] = {{"negatives", eval.negatives}, {"k", eval.k}};
  j["stability"] = {{"source", stability.source},
                    {"checkpoint", stability.checkpoint},
                    {"configurations", stability.configurations},
                    {"nodes", stability.nodes},
                    {"feature_dim", stability.feature_dim},
                    {"hidden_dim", stability.hidden_dim},
                    {"output_dim", stability.output_dim},
                    {"edge_probability", stability.edge_probability},
                    {"weight_scale", stability.weight_scale},
                    {"trials", stability.trials},
                    {"perturbation_scale", stability.perturbation_scale},
                    {"c_sf", stability.c_sf},
                    {"c_sp", stability.c_sp}};
  j["sweep"] = {{"key", sweep.key}, {"values", sweep.values}, {"seeds", sweep.seeds}};
  j["output"] = output;
  j["seed"] = seed;
  return j;
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("output");
  return io::content_hash(j.dump());
}

json default_config_json() { return ExperimentConfig{}.to_json(); }

namespace {

// Overlays `in` onto `base`, rejecting keys the defaults do not have.
void merge_strict(json& base, const json& in, const std::string& path) {
  if (!in.is_object()) throw ConfigError((path.empty() ? "config" : path) + " must be a table");
  for (const auto& [key, value] : in.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    if (base[key].is_object()) {
      merge_strict(base[key], value, full);
    } else {
      base[key] = value;
    }
  }
}

struct Reader {
  const json& root;

  const json& at(const std::string& dotted) const {
    const json* node = &root;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) node = &node->at(part);
    return *node;
  }
  std::size_t size(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw ConfigError(key + " must be a non-negative integer");
    return v.get<std::size_t>();
  }
  double real(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_number()) throw ConfigError(key + " must be a number");
    return v.get<double>();
  }
  bool flag(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_boolean()) throw ConfigError(key + " must be true or false");
    return v.get<bool>();
  }
  std::string text(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_string()) throw ConfigError(key + " must be a string");
    return v.get<std::string>();
  }
  std::vector<std::size_t> sizes(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_array()) throw ConfigError(key + " must be an array");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<std::int64_t>() < 0)
        throw ConfigError(key + " entries must be non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }
};

void check_unit(double v, const std::string& key, bool allow_zero) {
  if (!(v <= 1.0 && (allow_zero ? v >= 0.0 : v > 0.0)))
    throw ConfigError(key + (allow_zero ? " must lie in [0, 1]" : " must lie in (0, 1]"));
}

}  // namespace

ExperimentConfig config_from_json(const json& input) {
  json merged = default_config_json();
  merge_strict(merged, input, "");
  const Reader r{merged};
  ExperimentConfig c;
  try {
    c.data.source = r.text("data.source");
    if (c.data.source != "files" && c.data.source != "synthetic")
      throw ConfigError("data.source must be 'files' or 'synthetic'");
    c.data.z = r.text("data.z");
    c.data.zbar = r.text("data.zbar");
    c.data.format = data::parse_format(r.text("data.format"));
    c.data.min_interactions = r.size("data.min_interactions");
    c.data.overlap_ratio = r.real("data.overlap_ratio");
    check_unit(c.data.overlap_ratio, "data.overlap_ratio", true);
    c.data.density = r.real("data.density");
    check_unit(c.data.density, "data.density", false);
    c.data.split = data::parse_split_mode(r.text("data.split"));
    c.data.validation = r.flag("data.validation");

    c.synthetic.users = r.size("synthetic.users");
    c.synthetic.items = r.size("synthetic.items");
    c.synthetic.rank = r.size("synthetic.rank");
    c.synthetic.overlap_fraction = r.real("synthetic.overlap_fraction");
    c.synthetic.long_tail_exponent = r.real("synthetic.long_tail_exponent");
    c.synthetic.min_degree = r.size("synthetic.min_degree");
    c.synthetic.max_degree = r.size("synthetic.max_degree");
    c.synthetic.noise = r.real("synthetic.noise");

    c.model.kind = model::parse_model_kind(r.text("model.kind"));
    c.model.dim = r.size("model.dim");
    c.model.d_hge = r.size("model.d_hge");
    c.model.d_igm = r.size("model.d_igm");
    c.model.d_cgm = r.size("model.d_cgm");
    c.model.d_ref = r.size("model.d_ref");
    c.model.mlp_hidden = r.sizes("model.mlp_hidden");
    c.model.mf_factors = r.size("model.mf_factors");
    c.model.embedding_std = r.real("model.embedding_std");
    c.k_head = r.size("model.k_head");
    c.matching.sample_size = r.size("model.matching_size");
    c.matching.exact = r.flag("model.exact_matching");

    for (std::size_t k = 0; k < 4; ++k) c.loss.companion[k] = r.real("loss.w" + std::to_string(k + 1));
    for (std::size_t d = 0; d < 2; ++d) {
      c.loss.companion_domain[d] = r.real("loss.w" + std::to_string(d + 5));
      c.loss.final_domain[d] = r.real("loss.w" + std::to_string(d + 7));
    }

    c.train.batch_size = r.size("train.batch_size");
    c.train.learning_rate = r.real("train.learning_rate");
    c.train.epochs = r.size("train.epochs");
    c.train.negatives = r.size("train.negatives");
    c.train.eval_every = r.size("train.eval_every");
    c.train.patience = r.size("train.patience");
    c.train.resample_matching = r.flag("train.resample_matching");
    c.train.record_wall_time = r.flag("train.record_wall_time");

    c.variant = r.text("ablation.variant");
    c.eval.negatives = r.size("eval.negatives");
    c.eval.k = r.size("eval.k");

    auto& s = c.stability;
    s.source = r.text("stability.source");
    if (s.source != "random" && s.source != "checkpoint")
      throw ConfigError("stability.source must be 'random' or 'checkpoint'");
    s.checkpoint = r.text("stability.checkpoint");
    s.configurations = r.size("stability.configurations");
    s.nodes = r.size("stability.nodes");
    s.feature_dim = r.size("stability.feature_dim");
    s.hidden_dim = r.size("stability.hidden_dim");
    s.output_dim = r.size("stability.output_dim");
    s.edge_probability = r.real("stability.edge_probability");
    check_unit(s.edge_probability, "stability.edge_probability", true);
    s.weight_scale = r.real("stability.weight_scale");
    s.trials = r.size("stability.trials");
    s.perturbation_scale = r.real("stability.perturbation_scale");
    s.c_sf = r.real("stability.c_sf");
    s.c_sp = r.real("stability.c_sp");

    c.sweep.key = r.text("sweep.key");
    const auto& values = r.at("sweep.values");
    if (!values.is_array()) throw ConfigError("sweep.values must be an array");
    c.sweep.values.assign(values.begin(), values.end());
    c.sweep.seeds.clear();
    for (auto v : r.sizes("sweep.seeds")) c.sweep.seeds.push_back(v);

    c.output = r.text("output");
    const auto& seed = r.at("seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
      throw ConfigError("seed must be a non-negative integer");
    c.seed = seed.get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  // Cross-field validation, reported as configuration errors.
  try {
    c.model.validate();
    c.loss.validate();
    c.train.validate();
    model::ablation_variant(c.variant);
    if (c.data.source == "synthetic") c.synthetic.validate();
  } catch (const model::ConfigError& e) {
    throw ConfigError(e.what());
  } catch (const training::TrainingError& e) {
    throw ConfigError(e.what());
  } catch (const data::DataError& e) {
    throw ConfigError(e.what());
  }
  if (c.data.min_interactions < 3) throw ConfigError("data.min_interactions must be at least 3 (leave-one-out)");
  if (c.matching.sample_size == 0) throw ConfigError("model.matching_size must be positive");
  if (c.eval.k == 0) throw ConfigError("eval.k must be positive");
  const auto& st = c.stability;
  if (st.configurations == 0 || st.nodes < 2 || st.feature_dim == 0 || st.hidden_dim == 0 || st.output_dim == 0 ||
      st.trials == 0 || !(st.perturbation_scale > 0) || !(st.weight_scale >= 0) || !(st.c_sf >= 0) || !(st.c_sp >= 0))
    throw ConfigError("stability: need configurations, trials and dims ≥ 1, nodes ≥ 2 and non-negative scales");
  return c;
}

namespace {

json toml_node(const toml::node& node) {
  if (auto t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_node(v);
    return out;
  }
  if (auto a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_node(v));
    return out;
  }
  if (auto v = node.as_integer()) return v->get();
  if (auto v = node.as_floating_point()) return v->get();
  if (auto v = node.as_boolean()) return v->get();
  if (auto v = node.as_string()) return v->get();
  throw ConfigError("dates and times are not valid config values");
}

}  // namespace

json toml_to_json(const std::string& text, const std::string& source) {
  try {
    return toml_node(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = toml_to_json("v = " + raw, "--set").at("v");
  } catch (const ConfigError&) {
    value = raw;  // bare words such as w/o-Cgm
  }
  json* node = &config;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  // Missing sections are created here; unknown keys are rejected by validation.
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    if (!node->is_object()) throw ConfigError("--set key '" + key + "' does not name a config field");
    node = &(*node)[parts[k]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("--set key '" + key + "' does not name a config field");
  (*node)[parts.back()] = value;
}

ExperimentConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (path) {
    std::string text;
    try {
      text = io::read_file(*path);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read config " + path->string() + ": " + e.what());
    }
    if (path->extension() == ".json") {
      try {
        j = json::parse(text);
      } catch (const json::parse_error& e) {
        throw ConfigError(path->string() + ": " + e.what());
      }
    } else {
      j = toml_to_json(text, path->string());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

}  // namespace nmcdr::cli
