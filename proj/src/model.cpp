#include "gelae/model.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "gelae/random.h"

namespace gelae {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

std::string to_string(ScoreFn s) { return s == ScoreFn::kDot ? "dpa" : "mpa"; }
std::string to_string(AttentionScope s) {
  return s == AttentionScope::kLocal ? "local" : "global";
}
std::string to_string(HeadKind h) {
  return h == HeadKind::kClassification ? "classification" : "regression";
}

ScoreFn score_fn_from_string(const std::string& s) {
  if (s == "dpa") return ScoreFn::kDot;
  if (s == "mpa") return ScoreFn::kMlp;
  throw std::invalid_argument("score_fn must be dpa or mpa, got '" + s + "'");
}

AttentionScope attention_scope_from_string(const std::string& s) {
  if (s == "local") return AttentionScope::kLocal;
  if (s == "global") return AttentionScope::kGlobal;
  throw std::invalid_argument("attention_scope must be local or global, got '" + s + "'");
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "classification") return HeadKind::kClassification;
  if (s == "regression") return HeadKind::kRegression;
  throw std::invalid_argument("head must be classification or regression, got '" + s + "'");
}

// ---- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (r == 0 || n_heads == 0 || r % n_heads != 0) fail("r must be a positive multiple of n_heads");
  if (n_encoders == 0) fail("n_encoders must be positive");
  if (ff_dim == 0 || h == 0) fail("ff_dim and h must be positive");
  for (const auto w : fc_hidden) {
    if (w == 0) fail("fc_hidden widths must be positive");
  }
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (!(bin_width > 0.0) || !(y_max > y_min)) fail("need bin_width > 0 and y_max > y_min");
  if (std::abs(class_to_scc(n_classes - 1, *this) - y_max) > 1e-9) {
    fail("class_to_scc(n_classes - 1) must equal y_max");
  }
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.r = 512;
  c.ff_dim = 2048;
  c.fc_hidden = {1024, 1024};
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.r = 8;
  c.h = 4;
  c.ff_dim = 16;
  c.fc_hidden = {8};
  c.n_classes = 10;
  c.bin_width = 1.0;
  c.y_min = 0.0;
  c.y_max = 9.0;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"r", c.r},
      {"n_heads", c.n_heads},
      {"h", c.h},
      {"n_encoders", c.n_encoders},
      {"ff_dim", c.ff_dim},
      {"fc_hidden", c.fc_hidden},
      {"score_fn", to_string(c.score_fn)},
      {"attention_scope", to_string(c.attention_scope)},
      {"head", to_string(c.head)},
      {"n_classes", c.n_classes},
      {"bin_width", c.bin_width},
      {"y_min", c.y_min},
      {"y_max", c.y_max},
      {"representation", to_string(c.representation)},
      {"dihedral_mode", to_string(c.dihedral_mode)},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "r") c.r = value.get<std::size_t>();
    else if (key == "n_heads") c.n_heads = value.get<std::size_t>();
    else if (key == "h") c.h = value.get<std::size_t>();
    else if (key == "n_encoders") c.n_encoders = value.get<std::size_t>();
    else if (key == "ff_dim") c.ff_dim = value.get<std::size_t>();
    else if (key == "fc_hidden") c.fc_hidden = value.get<std::vector<std::size_t>>();
    else if (key == "score_fn") c.score_fn = score_fn_from_string(value.get<std::string>());
    else if (key == "attention_scope")
      c.attention_scope = attention_scope_from_string(value.get<std::string>());
    else if (key == "head") c.head = head_kind_from_string(value.get<std::string>());
    else if (key == "n_classes") c.n_classes = value.get<std::size_t>();
    else if (key == "bin_width") c.bin_width = value.get<double>();
    else if (key == "y_min") c.y_min = value.get<double>();
    else if (key == "y_max") c.y_max = value.get<double>();
    else if (key == "representation")
      c.representation = representation_from_string(value.get<std::string>());
    else if (key == "dihedral_mode")
      c.dihedral_mode = dihedral_mode_from_string(value.get<std::string>());
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  return c;
}

// ---- binning --------------------------------------------------------------

namespace {

// Bins per unit when 1/bin_width is integral (0 otherwise). On that grid the
// edges are integers divided by k, which keeps 0.00 and 17.00 exact.
double grid_scale(const ModelConfig& c) {
  const double k = std::round(1.0 / c.bin_width);
  return std::abs(k * c.bin_width - 1.0) < 1e-12 ? k : 0.0;
}

}  // namespace

std::size_t scc_to_class(double scc, const ModelConfig& c) {
  if (!std::isfinite(scc)) throw std::invalid_argument("scc_to_class: non-finite value");
  const double k = grid_scale(c);
  const double x = k > 0.0 ? scc * k - std::round(c.y_min * k) : (scc - c.y_min) / c.bin_width;
  const double nearest = std::round(x);
  // Values that land on an edge up to representation error belong to the
  // bin whose upper edge they are.
  const double cls = std::abs(x - nearest) < 1e-6 ? nearest : std::ceil(x);
  const double top = static_cast<double>(c.n_classes - 1);
  return static_cast<std::size_t>(std::clamp(cls, 0.0, top));
}

double class_to_scc(std::size_t cls, const ModelConfig& c) {
  if (cls >= c.n_classes) {
    throw std::out_of_range("class " + std::to_string(cls) + " outside [0, " +
                            std::to_string(c.n_classes - 1) + "]");
  }
  const double k = grid_scale(c);
  if (k > 0.0) return (static_cast<double>(cls) + std::round(c.y_min * k)) / k;
  return static_cast<double>(cls) * c.bin_width + c.y_min;
}

// ---- parameters -----------------------------------------------------------

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(Shape{fan_in, fan_out});
  for (double& v : t.values()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

Tensor filled(std::size_t n, double value) {
  Tensor t(Shape{n}, value);
  t.set_requires_grad(true);
  return t;
}

template <typename Self, typename Visit>
void visit_params(Self& self, Visit&& visit) {
  visit("embed.weight", self.embed_w, ParamKind::kWeight);
  visit("embed.bias", self.embed_b, ParamKind::kBias);
  const bool mlp = self.config.score_fn == ScoreFn::kMlp;
  for (std::size_t l = 0; l < self.encoders.size(); ++l) {
    auto& enc = self.encoders[l];
    const std::string p = "encoder." + std::to_string(l) + ".";
    for (std::size_t h = 0; h < enc.heads.size(); ++h) {
      auto& head = enc.heads[h];
      const std::string hp = p + "head." + std::to_string(h) + ".";
      visit(hp + "w_q", head.w_q, ParamKind::kWeight);
      visit(hp + "w_k", head.w_k, ParamKind::kWeight);
      visit(hp + "w_v", head.w_v, ParamKind::kWeight);
      if (mlp) {
        visit(hp + "w_a1", head.w_a1, ParamKind::kWeight);
        visit(hp + "w_a2", head.w_a2, ParamKind::kWeight);
      }
    }
    visit(p + "ff1.weight", enc.ff1_w, ParamKind::kWeight);
    visit(p + "ff1.bias", enc.ff1_b, ParamKind::kBias);
    visit(p + "ff2.weight", enc.ff2_w, ParamKind::kWeight);
    visit(p + "ff2.bias", enc.ff2_b, ParamKind::kBias);
    visit(p + "ln1.gain", enc.ln1_gain, ParamKind::kNorm);
    visit(p + "ln1.bias", enc.ln1_bias, ParamKind::kNorm);
    visit(p + "ln2.gain", enc.ln2_gain, ParamKind::kNorm);
    visit(p + "ln2.bias", enc.ln2_bias, ParamKind::kNorm);
  }
  for (std::size_t i = 0; i < self.fc.size(); ++i) {
    const std::string p = "fc." + std::to_string(i) + ".";
    visit(p + "weight", self.fc[i].weight, ParamKind::kWeight);
    visit(p + "bias", self.fc[i].bias, ParamKind::kBias);
  }
}

}  // namespace

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto rng = make_rng(seed, "init");
  const std::size_t r = config.r;
  const std::size_t d = config.d();
  ModelParams p;
  p.config = config;
  p.embed_w = xavier(kFeatures, r, rng);
  p.embed_b = filled(r, 0.0);
  p.encoders.resize(config.n_encoders);
  for (auto& enc : p.encoders) {
    enc.heads.resize(config.n_heads);
    for (auto& head : enc.heads) {
      head.w_q = xavier(r, d, rng);
      head.w_k = xavier(r, d, rng);
      head.w_v = xavier(r, d, rng);
      if (config.score_fn == ScoreFn::kMlp) {
        head.w_a1 = xavier(2 * d, config.h, rng);
        head.w_a2 = xavier(config.h, 1, rng);
      }
    }
    enc.ff1_w = xavier(r, config.ff_dim, rng);
    enc.ff1_b = filled(config.ff_dim, 0.0);
    enc.ff2_w = xavier(config.ff_dim, r, rng);
    enc.ff2_b = filled(r, 0.0);
    enc.ln1_gain = filled(r, 1.0);
    enc.ln1_bias = filled(r, 0.0);
    enc.ln2_gain = filled(r, 1.0);
    enc.ln2_bias = filled(r, 0.0);
  }
  std::size_t width = r;
  for (const std::size_t hidden : config.fc_hidden) {
    p.fc.push_back({xavier(width, hidden, rng), filled(hidden, 0.0)});
    width = hidden;
  }
  const std::size_t out = config.head == HeadKind::kClassification ? config.n_classes : 1;
  p.fc.push_back({xavier(width, out, rng), filled(out, 0.0)});
  return p;
}

void ModelParams::for_each(const Visitor& visit) { visit_params(*this, visit); }

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&, ParamKind)>& visit) const {
  visit_params(*this, visit);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t, ParamKind) { n += t.size(); });
  return n;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for_each([&](const std::string&, Tensor& t, ParamKind) { out.push_back(&t); });
  return out;
}

void ModelParams::save(std::ostream& out) const {
  std::vector<NamedTensor> named;
  for_each([&](const std::string& name, const Tensor& t, ParamKind) {
    named.push_back({name, t});
  });
  write_checkpoint(out, named, to_json(config));
}

void ModelParams::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save(out);
}

ModelParams ModelParams::load(std::istream& in) {
  CheckpointData data = read_checkpoint(in);
  const ModelConfig config = model_config_from_json(data.config);
  ModelParams p = initialize(config, 0);
  std::size_t expected = 0;
  p.for_each([&](const std::string& name, Tensor& t, ParamKind) {
    ++expected;
    auto it = std::find_if(data.tensors.begin(), data.tensors.end(),
                           [&](const NamedTensor& n) { return n.name == name; });
    if (it == data.tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + name);
    if (it->tensor.shape() != t.shape()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               ad::shape_string(it->tensor.shape()) + ", config implies " +
                               ad::shape_string(t.shape()));
    }
    std::copy(it->tensor.values().begin(), it->tensor.values().end(), t.values().begin());
  });
  if (data.tensors.size() != expected) {
    throw std::runtime_error("checkpoint holds tensors the config does not describe");
  }
  return p;
}

ModelParams ModelParams::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return load(in);
}

// ---- batching -------------------------------------------------------------

Batch make_batch(std::span<const CouplingSystem* const> systems) {
  const std::size_t n = systems.size();
  if (n == 0) throw std::invalid_argument("empty batch");
  Batch b{Tensor(Shape{n, kSlots, kFeatures}), Tensor(Shape{n, kSlots, kSlots}),
          Tensor(Shape{n, 1, kSlots}), Tensor(Shape{n, kSlots})};
  for (std::size_t i = 0; i < n; ++i) {
    const CouplingSystem& s = *systems[i];
    std::copy(s.features.begin(), s.features.end(),
              b.features.values().begin() + static_cast<std::ptrdiff_t>(i * s.features.size()));
    std::copy(s.adjacency.begin(), s.adjacency.end(),
              b.adjacency.values().begin() + static_cast<std::ptrdiff_t>(i * s.adjacency.size()));
    std::copy(s.mask.begin(), s.mask.end(),
              b.mask.values().begin() + static_cast<std::ptrdiff_t>(i * kSlots));
    for (std::size_t k = 0; k < kSlots; ++k) b.occupancy.at(i, k) = s.occupied(k) ? 1.0 : 0.0;
  }
  return b;
}

Batch make_batch(std::span<const CouplingSystem> systems) {
  std::vector<const CouplingSystem*> ptrs;
  ptrs.reserve(systems.size());
  for (const auto& s : systems) ptrs.push_back(&s);
  return make_batch(std::span<const CouplingSystem* const>(ptrs));
}

AttentionMasks make_masks(Tape& t, const Batch& batch, AttentionScope scope) {
  const std::size_t n = batch.size();
  Tensor allowed(Shape{n, kSlots, kSlots});
  Tensor blocked(Shape{n, kSlots, kSlots});
  Tensor keep(Shape{n, kSlots, kSlots});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < kSlots; ++i) {
      const double occ_i = batch.occupancy.at(b, i);
      for (std::size_t j = 0; j < kSlots; ++j) {
        const std::size_t idx = (b * kSlots + i) * kSlots + j;
        const double a = scope == AttentionScope::kLocal
                             ? batch.adjacency[idx]
                             : occ_i * batch.occupancy.at(b, j);
        allowed[idx] = a;
        blocked[idx] = (1.0 - a) * kMaskedScore;
        keep[idx] = occ_i;
      }
    }
  }
  return {t.constant(std::move(allowed)), t.constant(std::move(blocked)),
          t.constant(std::move(keep))};
}

BoundParams bind(Tape& t, ModelParams& params) {
  BoundParams b;
  b.embed_w = t.parameter(params.embed_w);
  b.embed_b = t.parameter(params.embed_b);
  const bool mlp = params.config.score_fn == ScoreFn::kMlp;
  for (auto& enc : params.encoders) {
    BoundEncoder be;
    std::vector<Var> projections;
    for (auto& head : enc.heads) {
      BoundHead bh;
      bh.w_q = t.parameter(head.w_q);
      bh.w_k = t.parameter(head.w_k);
      bh.w_v = t.parameter(head.w_v);
      if (mlp) {
        bh.w_a1 = t.parameter(head.w_a1);
        bh.w_a2 = t.parameter(head.w_a2);
      }
      projections.insert(projections.end(), {bh.w_q, bh.w_k, bh.w_v});
      be.heads.push_back(bh);
    }
    be.w_qkv = ad::concat_cols(t, projections);
    be.ff1_w = t.parameter(enc.ff1_w);
    be.ff1_b = t.parameter(enc.ff1_b);
    be.ff2_w = t.parameter(enc.ff2_w);
    be.ff2_b = t.parameter(enc.ff2_b);
    be.ln1_gain = t.parameter(enc.ln1_gain);
    be.ln1_bias = t.parameter(enc.ln1_bias);
    be.ln2_gain = t.parameter(enc.ln2_gain);
    be.ln2_bias = t.parameter(enc.ln2_bias);
    b.encoders.push_back(std::move(be));
  }
  for (auto& layer : params.fc) {
    b.fc.emplace_back(t.parameter(layer.weight), t.parameter(layer.bias));
  }
  return b;
}

// ---- layers ---------------------------------------------------------------

Var embed_bonds(Tape& t, Var x, const BoundParams& p) {
  if (t.shape(x).back() != kFeatures) {
    throw std::invalid_argument("embed_bonds: feature width must be 8, got " +
                                std::to_string(t.shape(x).back()));
  }
  return ad::relu(t, ad::add_bias(t, ad::matmul(t, x, p.embed_w), p.embed_b));
}

Var score_dpa(Tape& t, Var q, Var k) {
  const double d = static_cast<double>(t.shape(q).back());
  return ad::scale(t, ad::bmm_nt(t, q, k), 1.0 / std::sqrt(d));
}

Var score_mpa(Tape& t, Var q, Var k, Var w_a1, Var w_a2) {
  Shape side = t.shape(q);
  const Var zeros = t.constant(Tensor(side));
  side.back() = 1;
  const Var ones = t.constant(Tensor(side, 1.0));
  const Var tq = ad::tanh(t, q);
  const Var tk = ad::tanh(t, k);
  const std::array<Var, 2> query_half{tq, zeros};
  const std::array<Var, 2> key_half{zeros, tk};
  const Var u = ad::matmul(t, ad::matmul(t, ad::concat_cols(t, query_half), w_a1), w_a2);
  const Var w = ad::matmul(t, ad::matmul(t, ad::concat_cols(t, key_half), w_a1), w_a2);
  // [u_i, 1] . [1, w_j] = u_i + w_j
  const std::array<Var, 2> left{u, ones};
  const std::array<Var, 2> right{ones, w};
  return ad::bmm_nt(t, ad::concat_cols(t, left), ad::concat_cols(t, right));
}

Var mask_scores(Tape& t, Var s, const AttentionMasks& masks) {
  return ad::add(t, ad::hadamard(t, s, masks.allowed), masks.blocked);
}

AttentionOutput attention_apply(Tape& t, Var s_masked, Var v, const AttentionMasks& masks) {
  const Var alpha = ad::hadamard(t, ad::softmax_rows(t, s_masked), masks.row_keep);
  return {ad::bmm(t, alpha, v), alpha};
}

EncoderOutput encoder_forward(Tape& t, Var h_in, const BoundEncoder& enc,
                              const AttentionMasks& masks, const ModelConfig& config) {
  const std::size_t d = config.d();
  const Var qkv = ad::matmul(t, h_in, enc.w_qkv);
  EncoderOutput out;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < enc.heads.size(); ++h) {
    const Var q = ad::slice_cols(t, qkv, 3 * d * h, d);
    const Var k = ad::slice_cols(t, qkv, 3 * d * h + d, d);
    const Var v = ad::slice_cols(t, qkv, 3 * d * h + 2 * d, d);
    const Var s = config.score_fn == ScoreFn::kDot
                      ? score_dpa(t, q, k)
                      : score_mpa(t, q, k, enc.heads[h].w_a1, enc.heads[h].w_a2);
    const AttentionOutput att = attention_apply(t, mask_scores(t, s, masks), v, masks);
    heads.push_back(att.z);
    out.alphas.push_back(att.alpha);
  }
  const Var mha = ad::concat_cols(t, heads);
  const Var h1 = ad::layer_norm(t, ad::add(t, h_in, mha), enc.ln1_gain, enc.ln1_bias);
  const Var ff = ad::add_bias(
      t, ad::matmul(t, ad::relu(t, ad::add_bias(t, ad::matmul(t, h1, enc.ff1_w), enc.ff1_b)),
                    enc.ff2_w),
      enc.ff2_b);
  out.h = ad::layer_norm(t, ad::add(t, h1, ff), enc.ln2_gain, enc.ln2_bias);
  return out;
}

Var masked_pool(Tape& t, Var h, const Tensor& mask) {
  const std::size_t n = mask.dim(0);
  for (std::size_t b = 0; b < n; ++b) {
    bool any = false;
    for (std::size_t k = 0; k < kSlots; ++k) any = any || mask[b * kSlots + k] != 0.0;
    if (!any) throw std::invalid_argument("masked_pool: sample " + std::to_string(b) +
                                          " has an all-zero mask");
  }
  const Var pooled = ad::bmm(t, t.constant(mask), h);
  return ad::reshape(t, pooled, Shape{n, t.shape(h).back()});
}

namespace {

Var fc_stack(Tape& t, Var x, const BoundParams& p) {
  for (std::size_t i = 0; i + 1 < p.fc.size(); ++i) {
    x = ad::relu(t, ad::add_bias(t, ad::matmul(t, x, p.fc[i].first), p.fc[i].second));
  }
  return ad::add_bias(t, ad::matmul(t, x, p.fc.back().first), p.fc.back().second);
}

}  // namespace

ClassificationOutput head_classification(Tape& t, Var pooled, const BoundParams& p) {
  const Var logits = fc_stack(t, pooled, p);
  return {logits, ad::softmax_rows(t, logits)};
}

Var head_regression(Tape& t, Var pooled, const BoundParams& p, const ModelConfig& config) {
  const Var raw = fc_stack(t, pooled, p);
  const std::size_t n = t.shape(raw).front();
  const Var unit = ad::sigmoid(t, ad::reshape(t, raw, Shape{n}));
  return ad::add(t, ad::scale(t, unit, config.y_max - config.y_min),
                 t.constant(Tensor(Shape{n}, config.y_min)));
}

Tensor one_hot(std::span<const std::size_t> classes, std::size_t n_classes) {
  Tensor t(Shape{classes.size(), n_classes});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= n_classes) throw std::out_of_range("one_hot: class out of range");
    t.at(i, classes[i]) = 1.0;
  }
  return t;
}

Var loss_classification(Tape& t, Var probs, const Tensor& one_hot_labels) {
  return ad::cross_entropy_sum(t, probs, one_hot_labels);
}

Var loss_regression(Tape& t, Var scc_hat, const Tensor& targets) {
  if (targets.size() == 0) throw std::invalid_argument("loss_regression: empty batch");
  return ad::mean_abs_error(t, scc_hat, targets);
}

ForwardResult forward(Tape& t, const Batch& batch, const BoundParams& p,
                      const ModelConfig& config, bool keep_attention) {
  const AttentionMasks masks = make_masks(t, batch, config.attention_scope);
  Var h = embed_bonds(t, t.constant(batch.features), p);
  ForwardResult result;
  for (const auto& enc : p.encoders) {
    EncoderOutput out = encoder_forward(t, h, enc, masks, config);
    h = out.h;
    if (keep_attention) {
      result.attention.insert(result.attention.end(), out.alphas.begin(), out.alphas.end());
    }
  }
  const Var pooled = masked_pool(t, h, batch.mask);
  if (config.head == HeadKind::kClassification) {
    const auto head = head_classification(t, pooled, p);
    result.output = head.probs;
    result.logits = head.logits;
  } else {
    result.output = head_regression(t, pooled, p, config);
  }
  return result;
}

std::vector<Prediction> predict(ModelParams& params, std::span<const CouplingSystem> systems,
                                std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be positive");
  const ModelConfig& config = params.config;
  std::vector<Prediction> out;
  out.reserve(systems.size());
  for (std::size_t start = 0; start < systems.size(); start += batch_size) {
    const auto chunk = systems.subspan(start, std::min(batch_size, systems.size() - start));
    Tape t;
    const BoundParams bound = bind(t, params);
    const ForwardResult r = forward(t, make_batch(chunk), bound, config);
    const Tensor& y = t.value(r.output);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Prediction p;
      if (config.head == HeadKind::kClassification) {
        const auto row = y.values().subspan(i * config.n_classes, config.n_classes);
        const auto cls = static_cast<std::size_t>(
            std::distance(row.begin(), std::max_element(row.begin(), row.end())));
        p.cls = cls;
        p.scc = class_to_scc(cls, config);
      } else {
        p.scc = y[i];
      }
      out.push_back(p);
    }
  }
  return out;
}

std::vector<std::vector<std::array<double, 64>>> attention_maps(ModelParams& params,
                                                                const CouplingSystem& system) {
  Tape t;
  const BoundParams bound = bind(t, params);
  const ForwardResult r =
      forward(t, make_batch(std::span<const CouplingSystem>(&system, 1)), bound, params.config,
              /*keep_attention=*/true);
  const std::size_t heads = params.config.n_heads;
  std::vector<std::vector<std::array<double, 64>>> maps(params.config.n_encoders);
  for (std::size_t l = 0; l < maps.size(); ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor& a = t.value(r.attention[l * heads + h]);
      std::array<double, 64> m{};
      std::copy(a.values().begin(), a.values().end(), m.begin());
      maps[l].push_back(m);
    }
  }
  return maps;
}

}  // namespace gelae
