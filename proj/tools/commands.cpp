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

#include "commands.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmkg/checkpoint.hpp"
#include "mmkg/config.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/eval.hpp"
#include "mmkg/gradcheck_suite.hpp"
#include "mmkg/kgdata.hpp"
#include "mmkg/ops.hpp"
#include "mmkg/synth.hpp"
#include "mmkg/train.hpp"

namespace mmkg::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestError("cannot write " + path.string());
  os << text;
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : read_run_config(config_path);
  for (const auto& s : sets) apply_override(cfg, s);
  return cfg;
}

// Dataset dims the checkpoint was trained against must match the data now.
void check_dims(const ModelParams& p, const FeatureBundle& f) {
  auto mismatch = [](const std::string& what, std::size_t want, std::size_t got) {
    throw ValidationError("checkpoint does not match dataset: " + what + " is " +
                          std::to_string(want) + " in the checkpoint but " + std::to_string(got) +
                          " in the data");
  };
  if (p.entity_embed.rows() != f.n_total()) mismatch("entity count", p.entity_embed.rows(), f.n_total());
  const std::pair<Modality, const Tensor*> inputs[] = {{Modality::Relation, &f.u_rel},
                                                       {Modality::Attribute, &f.u_attr},
                                                       {Modality::Name, &f.u_name},
                                                       {Modality::Visual, &f.u_img}};
  for (const auto& [m, u] : inputs) {
    const auto want = p.affine[index(m)].weight.rows();
    if (want != u->cols()) mismatch(std::string(modality_name(m)) + " feature width", want, u->cols());
  }
}

struct Dataset {
  KgPair pair;
  FeatureBundle features;
};

Dataset load_dataset(const std::string& dir, const RunConfig& cfg) {
  Dataset d;
  d.pair = load_kg_pair(dir, load_options(cfg));
  d.features = build_features(d.pair, cfg.bigram_dim);
  return d;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& data_dir, const std::string& out_dir, bool quiet,
              std::ostream& out) {
  const RunConfig cfg = resolve_config(config_path, sets);
  auto data = load_dataset(data_dir, cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_text(dir / "config.json", to_json(cfg) + "\n");

  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  try {
    result = train(cfg.train, data.pair, data.features);
  } catch (const TrainingError& e) {
    if (e.last_record) write_text(dir / "train_log.jsonl", e.last_record->to_json_line() + "\n");
    throw;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  write_checkpoint(dir / "checkpoint.bin", {to_json(cfg), result.params.named()});
  write_text(dir / "train_log.jsonl", result.log.to_jsonl());

  ModalEmbeddings emb;
  {
    NoGradGuard no_grad;
    emb = forward_all(result.params, data.features, make_edges(data.features.adjacency),
                      cfg.train.dims, cfg.train.modalities);
  }
  const auto report = evaluate(emb, data.features.n1, data.features.n2, data.pair.test_pairs,
                               eval_options(cfg));
  write_text(dir / "report.json", report.to_json() + "\n");

  std::ostringstream seeds;
  for (const auto& [a, b] : result.pseudo_seeds) seeds << a << '\t' << b << '\n';
  write_text(dir / "pseudo_seeds.tsv", seeds.str());

  if (!quiet) {
    out << report.table();
    out << "\nepochs " << result.log.epochs_run << ", best epoch "
        << result.log.best_epoch.value_or(0) << ", pseudo seeds " << result.pseudo_seeds.size()
        << ", " << std::fixed << std::setprecision(1) << seconds << " s\n";
  }
  return kOk;
}

int cmd_eval(const std::string& model, const std::string& data_dir,
             const std::optional<std::string>& direction, const std::optional<std::string>& pool,
             std::ostream& out) {
  const auto ckpt = read_checkpoint(model);
  RunConfig cfg = parse_run_config(ckpt.config_json);
  if (direction) {
    auto d = parse_direction(*direction);
    if (!d) throw ConfigError("--direction must be g1->g2, g2->g1 or both");
    cfg.direction = *d;
  }
  if (pool) {
    auto p = parse_pool(*pool);
    if (!p) throw ConfigError("--candidates must be test or all");
    cfg.candidates = *p;
  }
  auto data = load_dataset(data_dir, cfg);
  const auto params = ModelParams::from_named(ckpt.tensors, cfg.train.dims);
  check_dims(params, data.features);
  NoGradGuard no_grad;
  const auto emb = forward_all(params, data.features, make_edges(data.features.adjacency),
                               cfg.train.dims, cfg.train.modalities);
  const auto report = evaluate(emb, data.features.n1, data.features.n2, data.pair.test_pairs,
                               eval_options(cfg));
  out << report.to_json() << "\n";
  return kOk;
}

int cmd_synth(const std::string& spec_arg, const std::string& out_dir, std::uint64_t seed) {
  SynthSpec spec;
  if (!spec_arg.empty()) {
    const bool inline_json = !spec_arg.empty() && spec_arg.front() == '{';
    spec = parse_synth_spec(inline_json ? spec_arg : read_text(spec_arg));
  }
  try {
    validate(spec);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  synth_write(spec, seed, out_dir);
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& corrupt, std::ostream& out) {
  if (!corrupt.empty()) testing::corrupt_backward(corrupt);
  const auto results = run_gradcheck_suite(seed);
  testing::corrupt_backward("");
  bool ok = true;
  for (const auto& r : results) {
    out << std::left << std::setw(40) << r.component << std::scientific << std::setprecision(3)
        << r.max_rel_error << "  (< " << r.tolerance << ")  " << (r.passed() ? "ok" : "FAIL")
        << "\n";
    ok = ok && r.passed();
  }
  if (!ok) {
    for (const auto& r : results)
      if (!r.passed()) out << "failed: " << r.component << "\n";
  }
  return ok ? kOk : kCheckFailed;
}

void apply_thread_env() {
  if (const char* env = std::getenv("MMKG_ALIGN_THREADS")) {
    char* end = nullptr;
    const auto n = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || n == 0) {
      throw ConfigError("MMKG_ALIGN_THREADS must be a positive integer");
    }
    set_num_threads(n);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal entity alignment between two knowledge graphs", "mmkg-align"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, model, spec, corrupt;
  std::vector<std::string> sets;
  std::optional<std::string> direction, pool;
  std::uint64_t seed = 42, gc_seed = 7;
  bool quiet = false;

  auto* train_cmd = app.add_subcommand("train", "Train a model and evaluate it on the test split");
  train_cmd->add_option("--config", config_path, "Run configuration (JSON)");
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--set", sets, "Override one key, e.g. modalities.name=off");
  train_cmd->add_flag("--quiet", quiet, "Do not print the report table");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
  eval_cmd->add_option("--model", model, "Checkpoint written by train")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--direction", direction, "g1->g2, g2->g1 or both");
  eval_cmd->add_option("--candidates", pool, "test or all");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic pair of knowledge graphs");
  synth_cmd->add_option("--spec", spec, "Generator spec: JSON file or inline JSON object");
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--seed", seed, "Generator seed");

  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  gc_cmd->add_option("--seed", gc_seed, "Seed of the micro instances");
  gc_cmd->add_option("--corrupt", corrupt)->group("");

  auto* print_cmd = app.add_subcommand("print-config", "Print the effective configuration");
  print_cmd->add_option("--config", config_path, "Run configuration (JSON)");
  print_cmd->add_option("--set", sets, "Override one key");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    apply_thread_env();
    if (*train_cmd) return cmd_train(config_path, sets, data_dir, out_dir, quiet, out);
    if (*eval_cmd) return cmd_eval(model, data_dir, direction, pool, out);
    if (*synth_cmd) return cmd_synth(spec, out_dir, seed);
    if (*gc_cmd) return cmd_gradcheck(gc_seed, corrupt, out);
    if (*print_cmd) {
      out << to_json(resolve_config(config_path, sets)) << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const BootstrapError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kOk;
}

}  // namespace mmkg::cli
