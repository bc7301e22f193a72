#include "gelae/cli.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "gelae/dataset_io.h"
#include "gelae/featurizer.h"
#include "gelae/kernels.h"
#include "gelae/model.h"
#include "gelae/molecule_io.h"
#include "gelae/run_config.h"
#include "gelae/training.h"

namespace gelae {

namespace fs = std::filesystem;

namespace {

/// Expected failure with a user-facing message and an exit code.
struct CliError : std::runtime_error {
  CliError(int code, const std::string& message) : std::runtime_error(message), code(code) {}
  int code;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw CliError(kExitError, what + " path not set");
  if (!fs::is_regular_file(path)) throw CliError(kExitError, what + " not found: " + path);
}

std::ifstream open_in(const std::string& path, const std::string& what) {
  require_file(path, what);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError(kExitError, "cannot open " + what + " " + path);
  return in;
}

fs::path out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir) / name;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError(kExitError, "cannot write " + path.string());
  return out;
}

void echo_config(const RunConfig& cfg) {
  auto out = open_out(out_path(cfg, "config.json"));
  out << to_json(cfg).dump(2) << '\n';
}

std::vector<Molecule> load_molecules(const RunConfig& cfg) {
  auto in = open_in(cfg.structures, "structures file");
  auto molecules = parse_structures(in);
  if (!cfg.charges.empty()) {
    auto charges = open_in(cfg.charges, "charges file");
    parse_charges(charges, molecules);
  }
  return molecules;
}

FeaturizeSummary featurize_inputs(const RunConfig& cfg, const FeatureOptions& options) {
  const auto molecules = load_molecules(cfg);
  auto in = open_in(cfg.couplings, "couplings file");
  const auto couplings = parse_couplings(in);
  if (couplings.skipped_other_types > 0) {
    spdlog::info("ignored {} couplings of other types", couplings.skipped_other_types);
  }
  return featurize_all(molecules, couplings.records, options, BondTable::standard());
}

Dataset load_dataset(const RunConfig& cfg) {
  require_file(cfg.dataset, "dataset");
  return read_dataset_file(cfg.dataset);
}

ModelParams load_checkpoint(const RunConfig& cfg) {
  require_file(cfg.checkpoint, "checkpoint");
  return ModelParams::load_file(cfg.checkpoint);
}

void check_dataset_matches(const Dataset& ds, const ModelConfig& model) {
  if (ds.representation != model.representation || ds.dihedral_mode != model.dihedral_mode) {
    throw CliError(kExitError,
                   "dataset was featurized as " + to_string(ds.representation) + "/" +
                       to_string(ds.dihedral_mode) + " but the model expects " +
                       to_string(model.representation) + "/" + to_string(model.dihedral_mode));
  }
}

std::vector<CouplingSystem> select(const std::vector<CouplingSystem>& all,
                                   const std::vector<std::size_t>& indices) {
  std::vector<CouplingSystem> out;
  out.reserve(indices.size());
  for (const auto i : indices) {
    if (i >= all.size()) {
      throw CliError(kExitError, "split index " + std::to_string(i) + " exceeds dataset size " +
                                     std::to_string(all.size()));
    }
    out.push_back(all[i]);
  }
  return out;
}

std::vector<double> labels_of(const std::vector<CouplingSystem>& systems) {
  std::vector<double> labels;
  for (const auto& s : systems) {
    if (!s.label) {
      throw CliError(kExitError, "record " + std::to_string(s.record_id) + " has no label");
    }
    labels.push_back(*s.label);
  }
  return labels;
}

Split load_or_make_split(const RunConfig& cfg, const Dataset& ds) {
  if (!cfg.split.empty()) {
    auto in = open_in(cfg.split, "split file");
    return split_from_json(nlohmann::json::parse(in));
  }
  const auto labels = labels_of(ds.systems);
  return stratified_split(labels, cfg.train);
}

// ---- subcommands ------------------------------------------------------------

int cmd_featurize(const RunConfig& cfg) {
  const FeaturizeSummary s = featurize_inputs(cfg, cfg.feature_options());
  std::cout << "molecules parsed: " << s.molecules << '\n'
            << "couplings featurized: " << s.systems.size() << '\n'
            << "couplings skipped: " << s.skipped_total() << '\n';
  for (const auto reason : {SkipReason::kNoPath, SkipReason::kValence, SkipReason::kDegenerate,
                            SkipReason::kInvalidRecord}) {
    std::cout << "  " << to_string(reason) << ": "
              << s.skipped[static_cast<std::size_t>(reason)] << '\n';
  }
  if (s.diagnostics.degenerate_dihedrals > 0) {
    std::cout << "degenerate dihedrals set to 0: " << s.diagnostics.degenerate_dihedrals << '\n';
  }
  if (s.systems.empty()) throw CliError(kExitEmptyOutput, "no coupling could be featurized");
  const std::string path =
      cfg.dataset.empty() ? out_path(cfg, "dataset.bin").string() : cfg.dataset;
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  write_dataset_file(path, {cfg.model.representation, cfg.model.dihedral_mode, s.systems});
  echo_config(cfg);
  std::cout << "dataset written: " << path << '\n';
  return kExitOk;
}

int cmd_split(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg);
  const Split split = stratified_split(labels_of(ds.systems), cfg.train);
  const auto path = out_path(cfg, "split.json");
  open_out(path) << to_json(split).dump() << '\n';
  echo_config(cfg);
  std::cout << "train " << split.train.size() << ", val " << split.val.size() << ", test "
            << split.test.size() << " -> " << path.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg);
  check_dataset_matches(ds, cfg.model);
  const Split split = load_or_make_split(cfg, ds);
  if (cfg.split.empty()) open_out(out_path(cfg, "split.json")) << to_json(split).dump() << '\n';
  const auto train_set = select(ds.systems, split.train);
  const auto val_set = select(ds.systems, split.val);
  if (train_set.empty() || val_set.empty()) {
    throw CliError(kExitError,
                   "split leaves the training or validation set empty (sparse label bins go "
                   "to train; raise split_bin_width or pass --split)");
  }
  echo_config(cfg);
  spdlog::info("training {} on {} samples ({} validation), {} parameters, kernels {}",
               to_string(cfg.model.head), train_set.size(), val_set.size(),
               ModelParams::initialize(cfg.model, cfg.train.seed).parameter_count(),
               kernels::isa_name(kernels::active_isa()));
  const TrainResult result = train(ModelParams::initialize(cfg.model, cfg.train.seed), train_set,
                                   val_set, cfg.train, [](const EpochLog& e) {
                                     spdlog::info("epoch {} train_loss {:.5f} val_loss {:.5f} "
                                                  "val_mae {:.5f} val_smape {:.3f} lr {:.6g}",
                                                  e.epoch, e.train_loss, e.val_loss, e.val_mae,
                                                  e.val_smape, e.lr);
                                   });
  result.best_params.save_file(out_path(cfg, "best.ckpt").string());
  result.final_params.save_file(out_path(cfg, "final.ckpt").string());
  auto log = open_out(out_path(cfg, "epochs.csv"));
  write_epoch_log_csv(log, result.log);
  std::cout << "best epoch " << result.best_epoch << " val_mae "
            << result.log[result.best_epoch - 1].val_mae << '\n'
            << "checkpoints written to " << cfg.out_dir << '\n';
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& subset) {
  ModelParams params = load_checkpoint(cfg);
  const Dataset ds = load_dataset(cfg);
  check_dataset_matches(ds, params.config);
  std::vector<CouplingSystem> systems;
  if (subset == "all") {
    systems = ds.systems;
  } else {
    if (cfg.split.empty()) throw CliError(kExitError, "subset " + subset + " needs a split file");
    auto in = open_in(cfg.split, "split file");
    const Split split = split_from_json(nlohmann::json::parse(in));
    systems = select(ds.systems, subset == "train" ? split.train
                                 : subset == "val" ? split.val
                                                   : split.test);
  }
  if (systems.empty()) throw CliError(kExitError, "nothing to evaluate");
  const MetricsReport m = evaluate(params, systems);
  std::cout << format_metrics(m) << '\n';
  open_out(out_path(cfg, "metrics.json")) << to_json(m).dump(2) << '\n';
  echo_config(cfg);
  return kExitOk;
}

std::vector<CouplingSystem> inference_inputs(const RunConfig& cfg, const ModelConfig& model) {
  if (!cfg.couplings.empty()) {
    return featurize_inputs(cfg, {model.representation, model.dihedral_mode}).systems;
  }
  const Dataset ds = load_dataset(cfg);
  check_dataset_matches(ds, model);
  return ds.systems;
}

int cmd_predict(const RunConfig& cfg) {
  ModelParams params = load_checkpoint(cfg);
  const auto systems = inference_inputs(cfg, params.config);
  const auto preds = predict(params, systems);
  const auto path = out_path(cfg, "predictions.csv");
  auto out = open_out(path);
  out << "id,scc_hz\n";
  for (std::size_t i = 0; i < systems.size(); ++i) {
    out << systems[i].record_id << ',' << format_double(preds[i].scc) << '\n';
  }
  echo_config(cfg);
  std::cout << preds.size() << " predictions -> " << path.string() << '\n';
  return kExitOk;
}

std::string slot_role_name(SlotRole r) {
  switch (r) {
    case SlotRole::kCouplingH: return "coupling_h";
    case SlotRole::kOther: return "other";
    case SlotRole::kCentral: return "central";
  }
  return "?";
}

int cmd_export_attention(const RunConfig& cfg, std::int64_t record_id) {
  ModelParams params = load_checkpoint(cfg);
  const auto systems = inference_inputs(cfg, params.config);
  const auto it = std::find_if(systems.begin(), systems.end(),
                               [&](const CouplingSystem& s) { return s.record_id == record_id; });
  if (it == systems.end()) {
    throw CliError(kExitError, "record " + std::to_string(record_id) + " not found");
  }
  const auto maps = attention_maps(params, *it);
  for (std::size_t l = 0; l < maps.size(); ++l) {
    for (std::size_t h = 0; h < maps[l].size(); ++h) {
      auto out = open_out(out_path(cfg, "attn_L" + std::to_string(l) + "_H" +
                                            std::to_string(h) + ".csv"));
      for (std::size_t i = 0; i < kSlots; ++i) {
        for (std::size_t j = 0; j < kSlots; ++j) {
          out << (j ? "," : "") << format_double(maps[l][h][i * kSlots + j]);
        }
        out << '\n';
      }
    }
  }
  std::cout << "record " << record_id << ": " << maps.size() * params.config.n_heads
            << " attention matrices written to " << cfg.out_dir << '\n'
            << "slot,role,occupied,from_atom,to_atom\n";
  for (std::size_t k = 0; k < kSlots; ++k) {
    const BondSlot& s = it->slots[k];
    std::cout << k << ',' << slot_role_name(s.role) << ',' << (it->occupied(k) ? 1 : 0) << ','
              << s.from_atom << ',' << s.to_atom << '\n';
  }
  echo_config(cfg);
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg, std::size_t n, double noise) {
  SyntheticOptions options;
  options.noise_sd = noise;
  options.features = cfg.feature_options();
  const SyntheticSet set = gen_karplus_synthetic(n, cfg.train.seed, options);
  const auto structures = out_path(cfg, "structures.csv");
  const auto couplings = out_path(cfg, "couplings.csv");
  auto s = open_out(structures);
  write_structures(s, set.molecules);
  auto c = open_out(couplings);
  write_couplings(c, set.records);
  std::cout << n << " synthetic couplings -> " << structures.string() << ", "
            << couplings.string() << '\n';
  return kExitOk;
}

void configure_logging(int verbosity) {
  auto logger = std::make_shared<spdlog::logger>(
      "gelae", std::make_shared<spdlog::sinks::stderr_sink_st>());
  logger->set_pattern("[%l] %v");
  logger->set_level(verbosity > 0   ? spdlog::level::debug
                    : verbosity < 0 ? spdlog::level::warn
                                    : spdlog::level::info);
  spdlog::set_default_logger(logger);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Graph-embedded local attention encoder for 3JHH coupling constants", "gelae"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, structures, couplings, charges, dataset, split, checkpoint;
  std::vector<std::string> overrides;
  bool verbose = false;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Seed for every random stream");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--structures", structures, "structures.csv");
  app.add_option("--couplings", couplings, "Coupling records CSV");
  app.add_option("--charges", charges, "Mulliken charges CSV");
  app.add_option("--dataset", dataset, "Featurized dataset file");
  app.add_option("--split", split, "Split JSON");
  app.add_option("--checkpoint", checkpoint, "Model checkpoint");
  app.add_option("--set", overrides, "Override a config key: key=value");
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings only");

  auto* featurize = app.add_subcommand("featurize", "Build the bond-graph dataset");
  auto* split_cmd = app.add_subcommand("split", "Stratified train/val/test split");
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "MAE, logMAE and SMAPE of a checkpoint");
  std::string subset = "test";
  evaluate_cmd->add_option("--subset", subset, "all, train, val or test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  auto* predict_cmd = app.add_subcommand("predict", "Write id,scc_hz predictions");
  auto* export_cmd = app.add_subcommand("export-attention", "Dump attention matrices");
  std::int64_t record_id = 0;
  export_cmd->add_option("--record", record_id, "Coupling record id")->required();
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic Karplus dataset");
  std::size_t synth_n = 1000;
  double synth_noise = 0.1;
  synth_cmd->add_option("-n,--count", synth_n, "Number of couplings")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise", synth_noise, "Label noise standard deviation (Hz)")
      ->check(CLI::NonNegativeNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }
  configure_logging(verbose ? 1 : quiet ? -1 : 0);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    apply_overrides(cfg, overrides);
    if (seed) cfg.train.seed = *seed;
    if (out_dir) cfg.out_dir = *out_dir;
    if (structures) cfg.structures = *structures;
    if (couplings) cfg.couplings = *couplings;
    if (charges) cfg.charges = *charges;
    if (dataset) cfg.dataset = *dataset;
    if (split) cfg.split = *split;
    if (checkpoint) cfg.checkpoint = *checkpoint;
    cfg.model.validate();
    cfg.train.validate();

    if (featurize->parsed()) return cmd_featurize(cfg);
    if (split_cmd->parsed()) return cmd_split(cfg);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (evaluate_cmd->parsed()) return cmd_evaluate(cfg, subset);
    if (predict_cmd->parsed()) return cmd_predict(cfg);
    if (export_cmd->parsed()) return cmd_export_attention(cfg, record_id);
    if (synth_cmd->parsed()) return cmd_synth(cfg, synth_n, synth_noise);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: training aborted: " << e.what() << '\n';
    return kExitNonFinite;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace gelae
