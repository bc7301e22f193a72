#pragma once

// Graph-embedded local attention encoder for coupling systems.
//
//   X [B,8,8] --1x1 conv + ReLU--> [B,8,r]
//     --(multi-head masked attention, skip, LayerNorm,
//        feed-forward, skip, LayerNorm) x n_encoders-->
//     --mask pooling--> [B,r] --fully connected head--> class logits | scc
//
// Heads are concatenated without an output projection, so the per-head
// width is r / n_heads.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gelae/autodiff.h"
#include "gelae/checkpoint.h"
#include "gelae/featurizer.h"
#include "json.hpp"

namespace gelae {

enum class ScoreFn { kDot, kMlp };
enum class AttentionScope { kLocal, kGlobal };
enum class HeadKind { kClassification, kRegression };

std::string to_string(ScoreFn s);
std::string to_string(AttentionScope s);
std::string to_string(HeadKind h);
ScoreFn score_fn_from_string(const std::string& s);
AttentionScope attention_scope_from_string(const std::string& s);
HeadKind head_kind_from_string(const std::string& s);

/// Score assigned to non-adjacent pairs before the softmax.
inline constexpr double kMaskedScore = -1000.0;

struct ModelConfig {
  std::size_t r = 64;
  std::size_t n_heads = 4;
  std::size_t h = 32;  // hidden width of the MLP score
  std::size_t n_encoders = 6;
  std::size_t ff_dim = 128;
  std::vector<std::size_t> fc_hidden = {128, 256};
  ScoreFn score_fn = ScoreFn::kDot;
  AttentionScope attention_scope = AttentionScope::kLocal;
  HeadKind head = HeadKind::kClassification;
  std::size_t n_classes = 2000;
  double bin_width = 0.01;
  double y_min = -2.99;
  double y_max = 17.00;
  Representation representation = Representation::kE2Invariant;
  DihedralMode dihedral_mode = DihedralMode::kPerSlot;

  std::size_t d() const { return r / n_heads; }

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;

  /// r=512, ff_dim=2048, fc_hidden={1024, 1024}.
  static ModelConfig full_scale();
  /// r=8, h=4, ff=16, fc_hidden={8}, 10 classes over [0, 9] - for gradient
  /// checks.
  static ModelConfig tiny();
};

nlohmann::json to_json(const ModelConfig& c);
/// Reads the keys present in `j` on top of `base`. Unknown keys throw.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// ---- class binning --------------------------------------------------------

/// ceil((scc - y_min) / bin_width) clamped to [0, n_classes - 1]. Bins are
/// half-open (lower, upper], so y_min maps to class 0.
std::size_t scc_to_class(double scc, const ModelConfig& c);
/// Upper bin edge c * bin_width + y_min (for the default config:
/// c / 100 - 2.99), evaluated exactly on the 1/bin_width grid.
double class_to_scc(std::size_t cls, const ModelConfig& c);

// ---- parameters -----------------------------------------------------------

enum class ParamKind { kWeight, kBias, kNorm };

struct HeadParams {
  ad::Tensor w_q, w_k, w_v;  // r x d
  ad::Tensor w_a1;           // 2d x h (MLP score only)
  ad::Tensor w_a2;           // h x 1  (MLP score only)
};

struct EncoderParams {
  std::vector<HeadParams> heads;
  ad::Tensor ff1_w, ff1_b;  // r x ff, ff
  ad::Tensor ff2_w, ff2_b;  // ff x r, r
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor ln2_gain, ln2_bias;
};

struct DenseLayer {
  ad::Tensor weight, bias;
};

struct ModelParams {
  ModelConfig config;
  ad::Tensor embed_w;  // 8 x r
  ad::Tensor embed_b;  // r
  std::vector<EncoderParams> encoders;
  std::vector<DenseLayer> fc;  // hidden layers followed by the output layer

  /// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases, unit
  /// LayerNorm gains.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  using Visitor = std::function<void(const std::string& name, ad::Tensor&, ParamKind)>;
  void for_each(const Visitor& visit);
  void for_each(const std::function<void(const std::string&, const ad::Tensor&, ParamKind)>&
                    visit) const;

  std::size_t parameter_count() const;
  std::vector<ad::Tensor*> tensors();

  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  /// Throws std::runtime_error when shapes disagree with the embedded config.
  static ModelParams load(std::istream& in);
  static ModelParams load_file(const std::string& path);
};

// ---- forward pass ---------------------------------------------------------

/// Inputs of a batch laid out for the tape.
struct Batch {
  ad::Tensor features;   // B x 8 x 8
  ad::Tensor adjacency;  // B x 8 x 8
  ad::Tensor mask;       // B x 1 x 8
  ad::Tensor occupancy;  // B x 8 (1 for occupied slots)
  std::size_t size() const { return features.dim(0); }
};

Batch make_batch(std::span<const CouplingSystem* const> systems);
Batch make_batch(std::span<const CouplingSystem> systems);

/// Attention masks shared by every layer of one forward pass.
struct AttentionMasks {
  ad::Var allowed;   // 1 where attention may flow
  ad::Var blocked;   // (1 - allowed) * -1000
  ad::Var row_keep;  // 0 on rows of unoccupied query slots
};

AttentionMasks make_masks(ad::Tape& t, const Batch& batch, AttentionScope scope);

/// Tape handles for one set of parameters.
struct BoundHead {
  ad::Var w_q, w_k, w_v, w_a1, w_a2;
};
struct BoundEncoder {
  std::vector<BoundHead> heads;
  ad::Var w_qkv;  // all heads' projections side by side: [q0 k0 v0 q1 k1 v1 ...]
  ad::Var ff1_w, ff1_b, ff2_w, ff2_b, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};
struct BoundParams {
  ad::Var embed_w, embed_b;
  std::vector<BoundEncoder> encoders;
  std::vector<std::pair<ad::Var, ad::Var>> fc;
};

BoundParams bind(ad::Tape& t, ModelParams& params);

ad::Var embed_bonds(ad::Tape& t, ad::Var x, const BoundParams& p);
ad::Var score_dpa(ad::Tape& t, ad::Var q, ad::Var k);
/// S_ij = (tanh(q_i || k_j) W_a1) W_a2. Because tanh acts elementwise and the
/// two maps are linear, this equals u_i + w_j with u = tanh(q || 0) W_a1 W_a2
/// and w = tanh(0 || k) W_a1 W_a2, which is how the batch is evaluated.
ad::Var score_mpa(ad::Tape& t, ad::Var q, ad::Var k, ad::Var w_a1, ad::Var w_a2);
/// allowed (.) S + (1 - allowed) (.) Neg.
ad::Var mask_scores(ad::Tape& t, ad::Var s, const AttentionMasks& masks);

struct AttentionOutput {
  ad::Var z;      // B x 8 x d
  ad::Var alpha;  // B x 8 x 8
};
/// alpha = softmax_rows(S_A) with rows of unoccupied query slots zeroed;
/// z = alpha V.
AttentionOutput attention_apply(ad::Tape& t, ad::Var s_masked, ad::Var v,
                                const AttentionMasks& masks);

struct EncoderOutput {
  ad::Var h;
  std::vector<ad::Var> alphas;  // one per head
};
EncoderOutput encoder_forward(ad::Tape& t, ad::Var h_in, const BoundEncoder& enc,
                              const AttentionMasks& masks, const ModelConfig& config);

/// sum_i mask_i * H_i. Throws std::invalid_argument for an all-zero mask.
ad::Var masked_pool(ad::Tape& t, ad::Var h, const ad::Tensor& mask);

struct ClassificationOutput {
  ad::Var logits;
  ad::Var probs;
};
ClassificationOutput head_classification(ad::Tape& t, ad::Var pooled,
                                         const BoundParams& p);
/// sigmoid(raw) * (y_max - y_min) + y_min, shape [B].
ad::Var head_regression(ad::Tape& t, ad::Var pooled, const BoundParams& p,
                        const ModelConfig& config);

ad::Tensor one_hot(std::span<const std::size_t> classes, std::size_t n_classes);
ad::Var loss_classification(ad::Tape& t, ad::Var probs, const ad::Tensor& one_hot_labels);
ad::Var loss_regression(ad::Tape& t, ad::Var scc_hat, const ad::Tensor& targets);

struct ForwardResult {
  ad::Var output;  // probabilities [B, n_classes] or scc [B]
  std::optional<ad::Var> logits;
  /// Per layer, per head: B x 8 x 8 attention (layer-major). Empty unless
  /// requested.
  std::vector<ad::Var> attention;
};

ForwardResult forward(ad::Tape& t, const Batch& batch, const BoundParams& p,
                      const ModelConfig& config, bool keep_attention = false);

struct Prediction {
  double scc = 0.0;
  std::optional<std::size_t> cls;
};

/// Decodes argmax class (classification) or the scaled regression output.
std::vector<Prediction> predict(ModelParams& params,
                                std::span<const CouplingSystem> systems,
                                std::size_t batch_size = 256);

/// Attention matrices of one system: [layer][head] -> row-major 8x8.
std::vector<std::vector<std::array<double, 64>>> attention_maps(
    ModelParams& params, const CouplingSystem& system);

}  // namespace gelae
