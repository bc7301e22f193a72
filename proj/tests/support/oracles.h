#pragma once

// Reference implementations written directly from per-element definitions,
// independent of the batched code paths they check.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "gelae/featurizer.h"
#include "gelae/molecule_io.h"

namespace gelae::oracle {

// Row-major dense matrix for the scalar paths.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

inline Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m(r, c);
  for (double& x : m.v) x = u(rng);
  return m;
}

struct HeadWeights {
  Mat w_q, w_k, w_v, w_a1, w_a2;
};

struct HeadResult {
  Mat z;      // 8 x d
  Mat alpha;  // 8 x 8
};

/// One attention head evaluated node by node:
///   q_i = h_i W_Q, k_j = h_j W_K, v_j = h_j W_V
///   s_ij = q_i . k_j / sqrt(d)                    (dot)
///   s_ij = sum_m tanh([q_i, k_j])_l W_a1[l][m] W_a2[m]  (mlp)
///   s_ij -> -1000 where allowed_ij = 0
///   alpha_ij = exp(s_ij) / sum_k exp(s_ik); rows of unoccupied i are 0
///   z_i = sum_j alpha_ij v_j
inline HeadResult scalar_head(const Mat& h, const HeadWeights& w, bool mlp,
                              const std::vector<std::vector<int>>& allowed,
                              const std::vector<bool>& occupied) {
  const std::size_t n = h.rows, r = h.cols, d = w.w_q.cols;
  std::vector<std::vector<double>> q(n, std::vector<double>(d)), k = q, v = q;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t l = 0; l < r; ++l) {
        q[i][c] += h(i, l) * w.w_q(l, c);
        k[i][c] += h(i, l) * w.w_k(l, c);
        v[i][c] += h(i, l) * w.w_v(l, c);
      }
    }
  }
  HeadResult out{Mat(n, d), Mat(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
      double score = 0.0;
      if (!mlp) {
        for (std::size_t c = 0; c < d; ++c) score += q[i][c] * k[j][c];
        score /= std::sqrt(static_cast<double>(d));
      } else {
        std::vector<double> cat(2 * d);
        for (std::size_t c = 0; c < d; ++c) {
          cat[c] = std::tanh(q[i][c]);
          cat[d + c] = std::tanh(k[j][c]);
        }
        for (std::size_t m = 0; m < w.w_a1.cols; ++m) {
          double hidden = 0.0;
          for (std::size_t l = 0; l < 2 * d; ++l) hidden += cat[l] * w.w_a1(l, m);
          score += hidden * w.w_a2(m, 0);
        }
      }
      s[j] = allowed[i][j] ? score : -1000.0;
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(s[j]);
    for (std::size_t j = 0; j < n; ++j) {
      out.alpha(i, j) = occupied[i] ? std::exp(s[j]) / denom : 0.0;
    }
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t j = 0; j < n; ++j) out.z(i, c) += out.alpha(i, j) * v[j][c];
    }
  }
  return out;
}

/// Signed torsion p0-p1-p2-p3 by the atan2 formula, returned as |phi|.
inline double torsion_atan2(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                            const Eigen::Vector3d& p2, const Eigen::Vector3d& p3) {
  const Eigen::Vector3d b1 = p1 - p0, b2 = p2 - p1, b3 = p3 - p2;
  const Eigen::Vector3d n1 = b1.cross(b2), n2 = b2.cross(b3);
  const Eigen::Vector3d m1 = n1.cross(b2.normalized());
  return std::abs(std::atan2(m1.dot(n2), n1.dot(n2)));
}

struct MetricValues {
  double mae, log_mae, smape;
};

/// Single pass accumulating in long double.
inline MetricValues metrics_single_pass(std::span<const double> pred,
                                        std::span<const double> truth) {
  long double abs_sum = 0, ratio_sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const long double y = truth[i], p = pred[i];
    const long double e = std::fabs(y - p);
    abs_sum += e;
    const long double half = (std::fabs(y) + std::fabs(p)) / 2;
    ratio_sum += half == 0 ? 0 : e / half;
  }
  const double mae = static_cast<double>(abs_sum / pred.size());
  return {mae, std::log(mae), static_cast<double>(100 * ratio_sum / pred.size())};
}

/// Applies p -> R p + t to every atom.
inline Molecule moved(Molecule m, const Eigen::Matrix3d& rot, const Eigen::Vector3d& shift) {
  for (auto& a : m.atoms) a.position = rot * a.position + shift;
  return m;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

struct GeneratedCoupling {
  Molecule molecule;
  CouplingRecord record;
};

/// Random H-X1-X2-H fragment: X1 = C, X2 in {C, N, O}, up to valence-many
/// substituents (H, C or F) per centre, some slots randomly left empty,
/// jittered tetrahedral directions and random charges.
inline GeneratedCoupling random_coupling(std::mt19937_64& rng, std::int64_t id = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const Element x2_choices[] = {Element::kC, Element::kN, Element::kO};
  const Element x2 = x2_choices[static_cast<int>(u(rng) * 3) % 3];
  const double central = x2 == Element::kC ? 1.54 : x2 == Element::kN ? 1.47 : 1.43;
  // Bond lengths stay well inside the 1.1x detection threshold.
  const double h_len = x2 == Element::kC ? 1.09 : x2 == Element::kN ? 1.01 : 0.97;

  Molecule m;
  m.name = "rnd_" + std::to_string(id);
  auto add = [&](Element e, const Eigen::Vector3d& p) {
    m.atoms.push_back({static_cast<int>(m.atoms.size()), e, p,
                       std::uniform_real_distribution<double>(-0.5, 0.5)(rng)});
    return static_cast<int>(m.atoms.size()) - 1;
  };
  add(Element::kC, Eigen::Vector3d::Zero());
  add(x2, Eigen::Vector3d(central + 0.02 * g(rng), 0, 0));

  const double tet = std::acos(-1.0 / 3.0);
  auto substituent = [&](int center, double azimuth, Element e, double len) {
    const double theta = tet + 0.05 * g(rng);
    const double axial = center == 0 ? std::cos(theta) : -std::cos(theta);
    const Eigen::Vector3d dir(axial, std::sin(theta) * std::cos(azimuth),
                              std::sin(theta) * std::sin(azimuth));
    return add(e, m.atoms[static_cast<std::size_t>(center)].position + len * dir);
  };
  auto other = [&](int center, double azimuth) {
    const double pick = u(rng);
    const double hl = center == 0 ? 1.09 : h_len;
    if (pick < 0.5) return substituent(center, azimuth, Element::kH, hl + 0.01 * g(rng));
    if (pick < 0.8) return substituent(center, azimuth, Element::kC, 1.50 + 0.02 * g(rng));
    return substituent(center, azimuth, Element::kF, 1.35 + 0.02 * g(rng));
  };
  const double third = 2.0 * std::numbers::pi / 3.0;
  const double off0 = u(rng) * 2 * std::numbers::pi;
  const double off1 = u(rng) * 2 * std::numbers::pi;
  const int h_a = substituent(0, off0, Element::kH, 1.09 + 0.01 * g(rng));
  for (int k = 1; k < 3; ++k) {
    if (u(rng) < 0.85) other(0, off0 + k * third + 0.05 * g(rng));
  }
  const int h_b = substituent(1, off1, Element::kH, h_len + 0.01 * g(rng));
  const int extra = x2 == Element::kC ? 2 : x2 == Element::kN ? 1 : 0;
  for (int k = 1; k <= extra; ++k) {
    if (u(rng) < 0.85) other(1, off1 + k * third + 0.05 * g(rng));
  }
  const Eigen::Matrix3d rot = random_rotation(rng);
  const Eigen::Vector3d shift(5 * g(rng), 5 * g(rng), 5 * g(rng));
  m = moved(std::move(m), rot, shift);

  CouplingRecord rec;
  rec.id = id;
  rec.molecule_name = m.name;
  rec.atom_index_0 = h_a;
  rec.atom_index_1 = h_b;
  rec.coupling_type = "3JHH";
  rec.scc = 5.0 + 4.0 * g(rng);
  return {std::move(m), rec};
}

inline CouplingSystem featurize_generated(const GeneratedCoupling& gc,
                                          const FeatureOptions& options = {}) {
  const BondGraph graph(gc.molecule.atoms.size(),
                        detect_bonds(gc.molecule, BondTable::standard()));
  return featurize(gc.molecule, graph, gc.record, options);
}

}  // namespace gelae::oracle
