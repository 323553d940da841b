/*
 * Copyright (c) 2026 The mmkg-align Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mmkg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmkg/errors.hpp"

namespace mmkg {

namespace {

using json = nlohmann::json;

class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    node_ = &root.at(name_);
    if (!node_->is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    const auto& v = node_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          if (s == "on" || s == "true") field = true;
          else if (s == "off" || s == "false") field = false;
          else throw ConfigError(where(key) + " expects on/off, got '" + s + "'");
          return;
        }
        if (!v.is_boolean()) throw ConfigError(where(key) + " must be a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
          throw ConfigError(where(key) + " must be non-negative");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
      } else {
        if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
      }
      v.get_to(field);
    } catch (const json::exception&) {
      throw ConfigError("bad value for " + where(key));
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  std::string where(const char* key) const { return "'" + name_ + "." + key + "'"; }

  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> sections = {"seed",   "data",  "model", "modalities",
                                                 "losses", "optim", "train", "iter",
                                                 "unsupervised", "eval"};
  for (const auto& [key, value] : root.items()) {
    if (!sections.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  RunConfig c;
  if (root.contains("seed")) {
    if (!root["seed"].is_number_unsigned()) throw ConfigError("'seed' must be a non-negative integer");
    c.seed = root["seed"].get<std::uint64_t>();
  }
  auto& t = c.train;

  Section data(root, "data");
  data.get("train_ratio", c.train_ratio);
  data.get("dev_fraction", c.dev_fraction);
  data.get("image_dim", c.image_dim);
  data.get("bigram_dim", c.bigram_dim);
  data.finish();

  Section model(root, "model");
  model.get("struct_dim", t.dims.struct_dim);
  model.get("modal_dim", t.dims.modal_dim);
  model.get("heads", t.dims.heads);
  model.get("gat_layers", t.dims.gat_layers);
  model.get("leaky_slope", t.dims.leaky_slope);
  model.get("dropout", t.dims.dropout);
  model.finish();

  Section mods(root, "modalities");
  for (auto m : kAllModalities) {
    bool on = t.modalities.enabled(m);
    mods.get(std::string(modality_name(m)).c_str(), on);
    t.modalities.set(m, on);
  }
  mods.finish();

  Section losses(root, "losses");
  losses.get("icl", t.loss.icl);
  losses.get("ial", t.loss.ial);
  losses.get("uncertainty", t.loss.uncertainty);
  losses.get("tau1", t.loss.tau1);
  losses.get("tau2", t.loss.tau2);
  losses.finish();

  Section optim(root, "optim");
  optim.get("lr", t.optim.lr);
  optim.get("weight_decay", t.optim.weight_decay);
  optim.get("beta1", t.optim.beta1);
  optim.get("beta2", t.optim.beta2);
  optim.get("eps", t.optim.eps);
  optim.finish();

  Section train(root, "train");
  train.get("epochs", t.epochs);
  train.get("batch_size", t.batch_size);
  train.get("eval_every", t.eval_every);
  train.get("patience", t.patience);
  train.finish();

  Section iter(root, "iter");
  iter.get("enabled", t.iter_enabled);
  iter.get("start_epoch", t.iter_start_epoch);
  iter.get("every", t.iter_every);
  iter.get("confirm_rounds", t.iter_confirm_rounds);
  iter.finish();

  Section unsup(root, "unsupervised");
  std::string mode(unsupervised_name(t.unsupervised));
  unsup.get("mode", mode);
  unsup.get("max_seeds", t.max_seeds);
  unsup.finish();
  auto parsed_mode = parse_unsupervised(mode);
  if (!parsed_mode) throw ConfigError("'unsupervised.mode' must be off, name or visual");
  t.unsupervised = *parsed_mode;

  Section eval(root, "eval");
  std::string direction(direction_name(c.direction)), pool(pool_name(c.candidates));
  eval.get("direction", direction);
  eval.get("candidates", pool);
  eval.finish();
  auto d = parse_direction(direction);
  if (!d) throw ConfigError("'eval.direction' must be g1->g2, g2->g1 or both");
  auto p = parse_pool(pool);
  if (!p) throw ConfigError("'eval.candidates' must be test or all");
  c.direction = *d;
  c.candidates = *p;

  if (!(c.train_ratio > 0.0 && c.train_ratio < 1.0)) throw ConfigError("'data.train_ratio' must lie in (0, 1)");
  if (!(c.dev_fraction >= 0.0 && c.dev_fraction < 1.0)) throw ConfigError("'data.dev_fraction' must lie in [0, 1)");
  if (c.bigram_dim == 0) throw ConfigError("'data.bigram_dim' must be positive");
  if (c.image_dim == 0) throw ConfigError("'data.image_dim' must be positive");
  t.seed = c.seed;
  validate(t);
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  const auto& t = c.train;
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"train_ratio", c.train_ratio},
               {"dev_fraction", c.dev_fraction},
               {"image_dim", c.image_dim},
               {"bigram_dim", c.bigram_dim}};
  j["model"] = {{"struct_dim", t.dims.struct_dim}, {"modal_dim", t.dims.modal_dim},
                {"heads", t.dims.heads},           {"gat_layers", t.dims.gat_layers},
                {"leaky_slope", t.dims.leaky_slope}, {"dropout", t.dims.dropout}};
  json mods = json::object();
  for (auto m : kAllModalities) mods[std::string(modality_name(m))] = t.modalities.enabled(m);
  j["modalities"] = mods;
  j["losses"] = {{"icl", t.loss.icl},
                 {"ial", t.loss.ial},
                 {"uncertainty", t.loss.uncertainty},
                 {"tau1", t.loss.tau1},
                 {"tau2", t.loss.tau2}};
  j["optim"] = {{"lr", t.optim.lr},
                {"weight_decay", t.optim.weight_decay},
                {"beta1", t.optim.beta1},
                {"beta2", t.optim.beta2},
                {"eps", t.optim.eps}};
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"eval_every", t.eval_every},
                {"patience", t.patience}};
  j["iter"] = {{"enabled", t.iter_enabled},
               {"start_epoch", t.iter_start_epoch},
               {"every", t.iter_every},
               {"confirm_rounds", t.iter_confirm_rounds}};
  j["unsupervised"] = {{"mode", unsupervised_name(t.unsupervised)}, {"max_seeds", t.max_seeds}};
  j["eval"] = {{"direction", direction_name(c.direction)}, {"candidates", pool_name(c.candidates)}};
  return j.dump(2);
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' lacks '='");
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json root = json::parse(to_json(config));
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    if (!root.contains(path) || root[path].is_object())
      throw ConfigError("unknown config key '" + path + "'");
    root[path] = value;
  } else {
    const auto section = path.substr(0, dot), key = path.substr(dot + 1);
    if (!root.contains(section) || !root[section].is_object() || !root[section].contains(key))
      throw ConfigError("unknown config key '" + path + "'");
    root[section][key] = value;
  }
  config = parse_run_config(root.dump());
}

LoadOptions load_options(const RunConfig& c) {
  LoadOptions o;
  o.train_ratio = c.train_ratio;
  o.dev_fraction = c.dev_fraction;
  o.seed = c.seed;
  o.default_image_dim = c.image_dim;
  return o;
}

EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.direction = c.direction;
  o.pool = c.candidates;
  return o;
}

}  // namespace mmkg
