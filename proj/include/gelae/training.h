#pragma once

// Splitting, optimisation, scheduling, metrics and the epoch loop.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gelae/model.h"
#include "json.hpp"

namespace gelae {

struct TrainConfig {
  std::size_t batch_size = 128;
  // Desk-scale default. With the batch-summed cross-entropy, 1e-3 collapses
  // the classifier to an input-independent output within a few epochs on
  // thousands of samples; full_scale() keeps 1e-3.
  double lr = 1e-4;
  double weight_decay = 5e-5;
  double momentum = 0.9;
  std::size_t num_epoch = 100;
  std::size_t plateau_patience = 3;
  double plateau_factor = 0.8;
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> split_ratio = {8, 1, 1};
  double split_bin_width = 0.01;

  /// Throws std::invalid_argument.
  void validate() const;

  /// Settings for the wide model on the full data set: lr = 1e-3,
  /// everything else as above.
  static TrainConfig full_scale();
};

nlohmann::json to_json(const TrainConfig& c);
/// Unknown keys throw.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// ---- splitting ------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Groups labels into split_bin_width bins (ascending), shuffles each bin
/// with the "split" stream of `config.seed`, and cuts it by split_ratio.
/// Each part receives floor(ratio_k * n / sum) samples; the remainder is
/// dealt one at a time to train, val, test, train, ...
Split stratified_split(std::span<const double> labels, const TrainConfig& config);

/// Per-part sizes of a bin of n samples under the rule above.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<std::size_t, 3>& ratio);

/// Index of the split bin holding `label`: floor(label / width), with labels
/// on a bin edge (up to 1e-6 of a bin) assigned to the bin they open.
std::int64_t split_bin(double label, double width);

nlohmann::json to_json(const Split& s);
Split split_from_json(const nlohmann::json& j);

// ---- optimiser ------------------------------------------------------------

struct ParamRef {
  std::string name;
  ad::Tensor* tensor = nullptr;
  bool decay = true;
};

/// Every model tensor; LayerNorm gains and biases have decay = false.
std::vector<ParamRef> param_refs(ModelParams& params);

struct OptimizerState {
  std::vector<std::vector<double>> velocity;
};

OptimizerState make_optimizer_state(std::span<const ParamRef> params);

/// g' = g + weight_decay * theta (decay-enabled tensors only);
/// v = momentum * v + g'; theta -= lr * v.
/// Throws std::runtime_error naming the tensor on a non-finite gradient,
/// before any tensor is modified.
void sgd_momentum_step(std::span<const ParamRef> params, OptimizerState& state, double lr,
                       double momentum, double weight_decay);

/// Multiplies the rate by `factor` once `patience` consecutive epochs fail
/// to improve on the best value seen so far, then starts counting again.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, std::size_t patience, double factor)
      : lr_(lr), patience_(patience), factor_(factor) {}
  /// Feeds one epoch's value and returns the rate for the next epoch.
  double step(double value);
  double lr() const { return lr_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

/// Replays a whole history through a PlateauScheduler.
double plateau_schedule(std::span<const double> history, double lr, std::size_t patience = 3,
                        double factor = 0.8);

// ---- metrics --------------------------------------------------------------

struct MetricsReport {
  double mae = 0.0;
  double log_mae = 0.0;  // ln(mae); -inf for a perfect fit
  double smape = 0.0;    // percent
  std::size_t n = 0;
};

/// MAE, ln(MAE) and SMAPE = 100/n sum |y - p| / ((|y| + |p|) / 2), where a
/// zero denominator contributes 0. Throws on empty or mismatched input.
MetricsReport compute_metrics(std::span<const double> predicted, std::span<const double> truth);

nlohmann::json to_json(const MetricsReport& m);
/// "mae=... log_mae=... smape=...% n=..."
std::string format_metrics(const MetricsReport& m);

/// Throws std::invalid_argument if a system has no label.
MetricsReport evaluate(ModelParams& params, std::span<const CouplingSystem> systems);

// ---- training loop --------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // per-sample mean
  double val_loss = 0.0;    // per-sample mean; drives the plateau rule
  double val_mae = 0.0;
  double val_smape = 0.0;
  double lr = 0.0;  // rate used during this epoch
};

void write_epoch_log_csv(std::ostream& out, std::span<const EpochLog> log);

/// Raised when a batch loss or gradient is not finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t epoch, std::size_t batch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

struct TrainResult {
  ModelParams final_params;
  ModelParams best_params;  // lowest validation MAE
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs num_epoch epochs of shuffled mini-batches (the last short batch is
/// kept) starting from `init`. The plateau rule watches the per-sample
/// validation loss; best_params track validation MAE.
TrainResult train(ModelParams init, std::span<const CouplingSystem> train_set,
                  std::span<const CouplingSystem> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Loss of one batch; builds and differentiates a fresh tape when
/// `accumulate_grad` is set. Returns the per-batch loss as optimised
/// (summed cross-entropy or mean absolute error).
double batch_loss(ModelParams& params, std::span<const CouplingSystem* const> batch,
                  bool accumulate_grad);

// ---- synthetic data -------------------------------------------------------

struct KarplusParams {
  double a = 7.0;
  double b = -1.0;
  double c = 5.0;
};

inline double karplus(double phi, const KarplusParams& k) {
  const double c = std::cos(phi);
  return k.a * c * c + k.b * c + k.c;
}

struct SyntheticOptions {
  double noise_sd = 0.1;
  KarplusParams karplus;
  FeatureOptions features;
  /// Spread of the geometry jitter.
  double length_jitter = 0.02;       // Angstrom
  double angle_jitter_deg = 2.0;     // degrees
};

struct SyntheticSet {
  std::vector<Molecule> molecules;
  std::vector<CouplingRecord> records;
  std::vector<double> phi;  // true H-C-C-H torsion per sample
  std::vector<CouplingSystem> systems;
};

/// Ethane-like molecules with a uniform torsion in [0, pi], jittered bonds,
/// random rigid motion, and Karplus labels plus Gaussian noise. Each sample
/// passes through bond detection and the featurizer.
SyntheticSet gen_karplus_synthetic(std::size_t n, std::uint64_t seed,
                                   const SyntheticOptions& options = {});

/// Ethane geometry with exact torsion `phi` between H2 (on C0) and H5 (on C1)
/// and no jitter. Atom order: C, C, H, H, H, H, H, H.
Molecule ethane(double phi, const std::string& name = "ethane");

}  // namespace gelae
