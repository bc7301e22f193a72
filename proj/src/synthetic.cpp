#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <random>

#include "gelae/random.h"
#include "gelae/training.h"

namespace gelae {

namespace {

constexpr double kCarbonCarbon = 1.54;
constexpr double kCarbonHydrogen = 1.09;
const double kTetrahedral = std::acos(-1.0 / 3.0);

struct EthaneShape {
  double cc = kCarbonCarbon;
  std::array<double, 6> ch{kCarbonHydrogen, kCarbonHydrogen, kCarbonHydrogen,
                           kCarbonHydrogen, kCarbonHydrogen, kCarbonHydrogen};
  std::array<double, 6> hcc{kTetrahedral, kTetrahedral, kTetrahedral,
                            kTetrahedral, kTetrahedral, kTetrahedral};
  // Azimuths around the C-C axis; entry 0 (H2) and 3 (H5) define the torsion.
  std::array<double, 6> azimuth{};
};

// C0 at the origin and C1 on +x. Hydrogens on C0 open away from C1 and vice
// versa, so the H2-C0-C1-H5 torsion is |azimuth[3] - azimuth[0]|.
Molecule build_ethane(const EthaneShape& s, const std::string& name) {
  Molecule m;
  m.name = name;
  auto add = [&](Element e, const Eigen::Vector3d& pos) {
    m.atoms.push_back({static_cast<int>(m.atoms.size()), e, pos, 0.0});
  };
  const Eigen::Vector3d c0(0, 0, 0);
  const Eigen::Vector3d c1(s.cc, 0, 0);
  add(Element::kC, c0);
  add(Element::kC, c1);
  for (std::size_t k = 0; k < 6; ++k) {
    const bool on_c0 = k < 3;
    const double theta = s.hcc[k];
    const double axial = on_c0 ? -std::cos(theta) : std::cos(theta);
    const Eigen::Vector3d dir(axial, std::sin(theta) * std::cos(s.azimuth[k]),
                              std::sin(theta) * std::sin(s.azimuth[k]));
    add(Element::kH, (on_c0 ? c0 : c1) + s.ch[k] * dir);
  }
  return m;
}

EthaneShape staggered(double phi) {
  EthaneShape s;
  const double third = 2.0 * std::numbers::pi / 3.0;
  s.azimuth = {0.0, third, 2 * third, phi, phi + third, phi + 2 * third};
  return s;
}

}  // namespace

Molecule ethane(double phi, const std::string& name) {
  return build_ethane(staggered(phi), name);
}

SyntheticSet gen_karplus_synthetic(std::size_t n, std::uint64_t seed,
                                   const SyntheticOptions& options) {
  if (n == 0) throw std::invalid_argument("gen_karplus_synthetic: n must be at least 1");
  auto rng = make_rng(seed, "synthetic");
  std::uniform_real_distribution<double> torsion(0.0, std::numbers::pi);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-10.0, 10.0);
  const double angle_sd = options.angle_jitter_deg * std::numbers::pi / 180.0;
  const BondTable table = BondTable::standard();

  SyntheticSet set;
  for (std::size_t i = 0; i < n; ++i) {
    const double phi = torsion(rng);
    EthaneShape shape = staggered(phi);
    shape.cc += options.length_jitter * unit(rng);
    for (auto& len : shape.ch) len += options.length_jitter * unit(rng);
    for (auto& a : shape.hcc) a += angle_sd * unit(rng);
    // H2 and H5 keep their azimuths so the coupling torsion stays phi.
    for (const std::size_t k : {1, 2, 4, 5}) shape.azimuth[k] += angle_sd * unit(rng);

    Molecule m = build_ethane(shape, "synth_" + std::to_string(i));
    Eigen::Quaterniond q(unit(rng), unit(rng), unit(rng), unit(rng));
    q.normalize();
    const Eigen::Vector3d offset(shift(rng), shift(rng), shift(rng));
    for (auto& atom : m.atoms) atom.position = q * atom.position + offset;

    CouplingRecord rec;
    rec.id = static_cast<std::int64_t>(i);
    rec.molecule_name = m.name;
    rec.atom_index_0 = 2;
    rec.atom_index_1 = 5;
    rec.coupling_type = "3JHH";
    rec.scc = karplus(phi, options.karplus) + options.noise_sd * unit(rng);

    const BondGraph graph(m.atoms.size(), detect_bonds(m, table));
    set.systems.push_back(featurize(m, graph, rec, options.features));
    set.molecules.push_back(std::move(m));
    set.records.push_back(rec);
    set.phi.push_back(phi);
  }
  return set;
}

}  // namespace gelae
