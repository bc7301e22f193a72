#include "gelae/training.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gelae/random.h"

namespace gelae {

using ad::Tape;
using ad::Tensor;

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.lr = 1e-3;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size == 0 || num_epoch == 0 || plateau_patience == 0) {
    fail("batch_size, num_epoch and plateau_patience must be positive");
  }
  if (!(lr > 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0)) {
    fail("need lr > 0, momentum >= 0, weight_decay >= 0");
  }
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) fail("plateau_factor must be in (0, 1]");
  for (const auto r : split_ratio) {
    if (r == 0) fail("split_ratio components must be positive integers");
  }
  if (!(split_bin_width > 0.0)) fail("split_bin_width must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},
          {"num_epoch", c.num_epoch},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"seed", c.seed},
          {"split_ratio", c.split_ratio},
          {"split_bin_width", c.split_bin_width}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "lr") c.lr = value.get<double>();
    else if (key == "weight_decay") c.weight_decay = value.get<double>();
    else if (key == "momentum") c.momentum = value.get<double>();
    else if (key == "num_epoch") c.num_epoch = value.get<std::size_t>();
    else if (key == "plateau_patience") c.plateau_patience = value.get<std::size_t>();
    else if (key == "plateau_factor") c.plateau_factor = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "split_ratio") c.split_ratio = value.get<std::array<std::size_t, 3>>();
    else if (key == "split_bin_width") c.split_bin_width = value.get<double>();
    else throw std::invalid_argument("unknown train config key '" + key + "'");
  }
  return c;
}

// ---- splitting ------------------------------------------------------------

std::int64_t split_bin(double label, double width) {
  const double x = label / width;
  const double nearest = std::round(x);
  return static_cast<std::int64_t>(std::abs(x - nearest) < 1e-6 ? nearest : std::floor(x));
}

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<std::size_t, 3>& ratio) {
  const std::size_t total = ratio[0] + ratio[1] + ratio[2];
  std::array<std::size_t, 3> counts{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    counts[k] = ratio[k] * n / total;
    assigned += counts[k];
  }
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[k % 3];
  return counts;
}

Split stratified_split(std::span<const double> labels, const TrainConfig& config) {
  if (labels.empty()) throw std::invalid_argument("stratified_split: empty dataset");
  config.validate();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::isfinite(labels[i])) {
      throw std::invalid_argument("stratified_split: sample " + std::to_string(i) +
                                  " has no finite label");
    }
  }
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });

  auto rng = make_rng(config.seed, "split");
  Split split;
  std::array<std::vector<std::size_t>*, 3> parts{&split.train, &split.val, &split.test};
  for (std::size_t begin = 0; begin < order.size();) {
    const auto bin = split_bin(labels[order[begin]], config.split_bin_width);
    std::size_t end = begin + 1;
    while (end < order.size() && split_bin(labels[order[end]], config.split_bin_width) == bin) {
      ++end;
    }
    std::vector<std::size_t> group(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
    std::shuffle(group.begin(), group.end(), rng);
    const auto counts = split_counts(group.size(), config.split_ratio);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      parts[k]->insert(parts[k]->end(), group.begin() + static_cast<std::ptrdiff_t>(pos),
                       group.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
      pos += counts[k];
    }
    begin = end;
  }
  return split;
}

nlohmann::json to_json(const Split& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

Split split_from_json(const nlohmann::json& j) {
  Split s;
  s.train = j.at("train").get<std::vector<std::size_t>>();
  s.val = j.at("val").get<std::vector<std::size_t>>();
  s.test = j.at("test").get<std::vector<std::size_t>>();
  return s;
}

// ---- optimiser ------------------------------------------------------------

std::vector<ParamRef> param_refs(ModelParams& params) {
  std::vector<ParamRef> refs;
  params.for_each([&](const std::string& name, Tensor& t, ParamKind kind) {
    refs.push_back({name, &t, kind != ParamKind::kNorm});
  });
  return refs;
}

OptimizerState make_optimizer_state(std::span<const ParamRef> params) {
  OptimizerState s;
  for (const auto& p : params) s.velocity.emplace_back(p.tensor->size(), 0.0);
  return s;
}

void sgd_momentum_step(std::span<const ParamRef> params, OptimizerState& state, double lr,
                       double momentum, double weight_decay) {
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter list");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& t = *params[p].tensor;
    if (state.velocity[p].size() != t.size()) {
      throw std::invalid_argument("velocity shape mismatch for " + params[p].name);
    }
    if (!t.has_grad()) continue;
    for (const double g : t.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in " + params[p].name);
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].tensor;
    auto theta = t.values();
    auto& v = state.velocity[p];
    const double decay = params[p].decay ? weight_decay : 0.0;
    const bool has_grad = t.has_grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (has_grad ? t.grad()[i] : 0.0) + decay * theta[i];
      v[i] = momentum * v[i] + g;
      theta[i] -= lr * v[i];
    }
  }
}

double PlateauScheduler::step(double value) {
  if (value < best_) {
    best_ = value;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= patience_) {
    lr_ *= factor_;
    bad_epochs_ = 0;
  }
  return lr_;
}

double plateau_schedule(std::span<const double> history, double lr, std::size_t patience,
                        double factor) {
  if (history.empty()) throw std::invalid_argument("plateau_schedule: empty history");
  PlateauScheduler s(lr, patience, factor);
  for (const double v : history) s.step(v);
  return s.lr();
}

// ---- metrics --------------------------------------------------------------

MetricsReport compute_metrics(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("metrics: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("metrics: no samples");
  double abs_sum = 0.0;
  double smape_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double err = std::abs(truth[i] - predicted[i]);
    abs_sum += err;
    const double denom = (std::abs(truth[i]) + std::abs(predicted[i])) / 2.0;
    if (denom > 0.0) smape_sum += err / denom;
  }
  MetricsReport m;
  m.n = truth.size();
  m.mae = abs_sum / static_cast<double>(m.n);
  m.log_mae = m.mae > 0.0 ? std::log(m.mae) : -std::numeric_limits<double>::infinity();
  m.smape = 100.0 * smape_sum / static_cast<double>(m.n);
  return m;
}

nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json j = {{"mae", m.mae}, {"smape", m.smape}, {"n", m.n}};
  j["log_mae"] = std::isfinite(m.log_mae) ? nlohmann::json(m.log_mae) : nlohmann::json(nullptr);
  return j;
}

std::string format_metrics(const MetricsReport& m) {
  std::ostringstream s;
  s.precision(6);
  s << "mae=" << m.mae << " log_mae=" << m.log_mae << " smape=" << m.smape << "% n=" << m.n;
  return s.str();
}

MetricsReport evaluate(ModelParams& params, std::span<const CouplingSystem> systems) {
  std::vector<double> truth;
  truth.reserve(systems.size());
  for (const auto& s : systems) {
    if (!s.label) {
      throw std::invalid_argument("evaluate: record " + std::to_string(s.record_id) +
                                  " has no label");
    }
    truth.push_back(*s.label);
  }
  const auto preds = predict(params, systems);
  std::vector<double> predicted;
  predicted.reserve(preds.size());
  for (const auto& p : preds) predicted.push_back(p.scc);
  return compute_metrics(predicted, truth);
}

// ---- training loop --------------------------------------------------------

namespace {

// Every batch allocates and frees the same multi-megabyte activations. Keeping
// freed memory in the heap avoids re-faulting those pages on each step.
void retain_freed_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

void write_epoch_log_csv(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,train_loss,val_mae,val_smape,lr\n";
  out.precision(10);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_mae << ',' << e.val_smape << ','
        << e.lr << '\n';
  }
}

double batch_loss(ModelParams& params, std::span<const CouplingSystem* const> batch,
                  bool accumulate_grad) {
  const ModelConfig& config = params.config;
  Tape t;
  const BoundParams bound = bind(t, params);
  const ForwardResult r = forward(t, make_batch(batch), bound, config);
  ad::Var loss;
  if (config.head == HeadKind::kClassification) {
    std::vector<std::size_t> classes;
    for (const auto* s : batch) {
      if (!s->label) throw std::invalid_argument("training sample without label");
      classes.push_back(scc_to_class(*s->label, config));
    }
    loss = loss_classification(t, r.output, one_hot(classes, config.n_classes));
  } else {
    Tensor targets(ad::Shape{batch.size()});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!batch[i]->label) throw std::invalid_argument("training sample without label");
      targets[i] = *batch[i]->label;
    }
    loss = loss_regression(t, r.output, targets);
  }
  const double value = t.value(loss)[0];
  if (accumulate_grad && std::isfinite(value)) t.backward(loss);
  return value;
}

namespace {

// Per-sample validation loss, the quantity the plateau rule watches.
double mean_loss(ModelParams& params, std::span<const CouplingSystem> systems,
                 std::size_t batch_size) {
  const bool classification = params.config.head == HeadKind::kClassification;
  std::vector<const CouplingSystem*> batch;
  double total = 0.0;
  for (std::size_t start = 0; start < systems.size(); start += batch_size) {
    const std::size_t end = std::min(systems.size(), start + batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(&systems[i]);
    const double loss = batch_loss(params, batch, /*accumulate_grad=*/false);
    total += classification ? loss : loss * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(systems.size());
}

}  // namespace

TrainResult train(ModelParams init, std::span<const CouplingSystem> train_set,
                  std::span<const CouplingSystem> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  retain_freed_memory();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation set");

  TrainResult result{std::move(init), {}, 0, {}};
  ModelParams& params = result.final_params;
  const auto refs = param_refs(params);
  OptimizerState state = make_optimizer_state(refs);
  PlateauScheduler scheduler(config.lr, config.plateau_patience, config.plateau_factor);
  auto rng = make_rng(config.seed, "shuffle");
  const bool classification = params.config.head == HeadKind::kClassification;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const CouplingSystem*> batch;
  double best_mae = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.num_epoch; ++epoch) {
    const double lr = scheduler.lr();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_total = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_id) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set[order[i]]);
      for (const auto& p : refs) p.tensor->zero_grad();
      const double loss = batch_loss(params, batch, /*accumulate_grad=*/true);
      if (!std::isfinite(loss)) {
        throw NonFiniteLoss(epoch, batch_id,
                            "non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_id));
      }
      try {
        sgd_momentum_step(refs, state, lr, config.momentum, config.weight_decay);
      } catch (const std::runtime_error& e) {
        throw NonFiniteLoss(epoch, batch_id,
                            std::string(e.what()) + " in epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch_id));
      }
      // Cross-entropy is a batch sum, L1 a batch mean; log both per sample.
      loss_total += classification ? loss : loss * static_cast<double>(batch.size());
    }
    const MetricsReport val = evaluate(params, val_set);
    const double val_loss = mean_loss(params, val_set, config.batch_size);
    EpochLog entry{epoch, loss_total / static_cast<double>(train_set.size()), val_loss, val.mae,
                   val.smape, lr};
    result.log.push_back(entry);
    if (val.mae < best_mae) {
      best_mae = val.mae;
      result.best_params = params;
      result.best_epoch = epoch;
    }
    scheduler.step(val_loss);
    spdlog::debug("epoch {} train_loss={:.6f} val_loss={:.6f} val_mae={:.6f} val_smape={:.4f} lr={:.6g}", epoch,
                  entry.train_loss, entry.val_loss, entry.val_mae, entry.val_smape, entry.lr);
    if (on_epoch) on_epoch(entry);
  }
  if (result.best_epoch == 0) result.best_params = params;
  return result;
}

}  // namespace gelae
