#include "gelae/featurizer.h"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace gelae {

std::string to_string(Representation r) {
  return r == Representation::kE2Invariant ? "E2" : "E1";
}

Representation representation_from_string(const std::string& s) {
  if (s == "E2") return Representation::kE2Invariant;
  if (s == "E1") return Representation::kE1BondVector;
  throw std::invalid_argument("unknown representation '" + s + "' (expected E1 or E2)");
}

std::string to_string(DihedralMode m) {
  return m == DihedralMode::kPerSlot ? "per_slot" : "central";
}

DihedralMode dihedral_mode_from_string(const std::string& s) {
  if (s == "per_slot") return DihedralMode::kPerSlot;
  if (s == "central") return DihedralMode::kCentral;
  throw std::invalid_argument("unknown dihedral mode '" + s +
                              "' (expected per_slot or central)");
}

std::string to_string(SkipReason r) {
  switch (r) {
    case SkipReason::kNoPath:
      return "no 3-bond path";
    case SkipReason::kValence:
      return "valence error";
    case SkipReason::kDegenerate:
      return "degenerate geometry";
    case SkipReason::kInvalidRecord:
      return "invalid record";
  }
  return "unknown";
}

// ---- graph ----------------------------------------------------------------

BondGraph::BondGraph(std::size_t atom_count, const std::vector<Bond>& bonds)
    : adj_(atom_count) {
  for (const Bond& b : bonds) {
    adj_.at(static_cast<std::size_t>(b.i)).push_back(b.j);
    adj_.at(static_cast<std::size_t>(b.j)).push_back(b.i);
  }
  for (auto& n : adj_) std::sort(n.begin(), n.end());
}

bool BondGraph::bonded(int a, int b) const {
  const auto& n = neighbors(a);
  return std::binary_search(n.begin(), n.end(), b);
}

CouplingPath find_coupling_path(const BondGraph& graph, int h_a, int h_b) {
  const auto count = static_cast<int>(graph.atom_count());
  if (h_a < 0 || h_b < 0 || h_a >= count || h_b >= count) {
    throw FeaturizeError(SkipReason::kInvalidRecord, "coupling atom out of range");
  }
  if (h_a == h_b) {
    throw FeaturizeError(SkipReason::kInvalidRecord, "coupling atoms are identical");
  }
  // Neighbour lists are sorted, so the first hit is lexicographically smallest.
  for (const int x1 : graph.neighbors(h_a)) {
    if (x1 == h_b) continue;
    for (const int x2 : graph.neighbors(h_b)) {
      if (x2 == h_a || x2 == x1) continue;
      if (graph.bonded(x1, x2)) return {h_a, x1, x2, h_b};
    }
  }
  throw FeaturizeError(SkipReason::kNoPath, "not a 3J coupling: no 3-bond path between atoms " +
                                                std::to_string(h_a) + " and " +
                                                std::to_string(h_b));
}

SlotLayout enumerate_bond_slots(const CouplingPath& path, const BondGraph& graph) {
  SlotLayout slots{};
  auto fill_side = [&](std::size_t base, int center, int coupling_h, int partner) {
    const auto& nbrs = graph.neighbors(center);
    if (nbrs.size() > 4) {
      throw FeaturizeError(SkipReason::kValence,
                           "central atom " + std::to_string(center) + " has " +
                               std::to_string(nbrs.size()) + " neighbours");
    }
    slots[base] = {center, coupling_h, SlotRole::kCouplingH, true};
    std::size_t next = base + 1;
    for (const int n : nbrs) {
      if (n == coupling_h || n == partner) continue;
      slots[next++] = {center, n, SlotRole::kOther, true};
    }
    slots[base + 3] = {center, partner, SlotRole::kCentral, true};
  };
  fill_side(0, path.x1, path.h_a, path.x2);
  fill_side(4, path.x2, path.h_b, path.x1);
  return slots;
}

// ---- geometry -------------------------------------------------------------

namespace {

constexpr double kMinLength = 1e-9;

// Same value as the clamped arccos of the normalized dot product, but exact at
// 0 and pi where arccos loses half the mantissa.
double unsigned_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace

double bond_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na <= kMinLength || nb <= kMinLength) {
    throw std::invalid_argument("bond_angle: zero-length vector");
  }
  return unsigned_angle(a, b);
}

std::optional<double> dihedral_angle_checked(const Eigen::Vector3d& slot_bond,
                                             const Eigen::Vector3d& central,
                                             const Eigen::Vector3d& ref_bond) {
  // Normal orientations follow the usual torsion convention (cis = 0).
  const Eigen::Vector3d v1 = central.cross(slot_bond);
  const Eigen::Vector3d v2 = central.cross(ref_bond);
  const double n1 = v1.norm();
  const double n2 = v2.norm();
  if (n1 < kMinLength || n2 < kMinLength) return std::nullopt;
  return unsigned_angle(v1, v2);
}

double dihedral_angle(const Eigen::Vector3d& slot_bond, const Eigen::Vector3d& central,
                      const Eigen::Vector3d& ref_bond) {
  return dihedral_angle_checked(slot_bond, central, ref_bond).value_or(0.0);
}

double atom_code(Element e) { return atomic_number(e) / 10.0; }

// ---- matrices -------------------------------------------------------------

std::array<double, kSlots * kFeatures> build_feature_matrix(
    const SlotLayout& slots, const Molecule& molecule, const FeatureOptions& options,
    FeatureDiagnostics* diagnostics) {
  const auto& atoms = molecule.atoms;
  auto atom = [&](int idx) -> const Atom& {
    return atoms.at(static_cast<std::size_t>(idx));
  };
  auto bond_vector = [&](std::size_t s) -> Eigen::Vector3d {
    return atom(slots[s].to_atom).position - atom(slots[s].from_atom).position;
  };

  std::array<double, kSlots * kFeatures> x{};
  auto torsion = [&](const Eigen::Vector3d& bond, const Eigen::Vector3d& central,
                     const Eigen::Vector3d& ref) {
    const auto d = dihedral_angle_checked(bond, central, ref);
    if (!d && diagnostics) ++diagnostics->degenerate_dihedrals;
    return d.value_or(0.0);
  };

  double central_torsion = 0.0;
  if (options.representation == Representation::kE2Invariant &&
      options.dihedral_mode == DihedralMode::kCentral) {
    central_torsion = torsion(bond_vector(0), bond_vector(3), bond_vector(4));
  }

  for (std::size_t s = 0; s < kSlots; ++s) {
    const BondSlot& slot = slots[s];
    if (!slot.occupied) continue;
    double* row = x.data() + s * kFeatures;
    const Eigen::Vector3d bond = bond_vector(s);
    if (options.representation == Representation::kE2Invariant) {
      const std::size_t side = s < 4 ? 0 : 4;
      const std::size_t ref1 = side;      // coupling-H bond on this centre
      const std::size_t ref2 = side + 3;  // central bond on this centre
      row[kColLength] = bond.norm();
      if (row[kColLength] <= kMinLength) {
        throw FeaturizeError(SkipReason::kDegenerate, "zero-length bond in slot " +
                                                          std::to_string(s));
      }
      row[kColAngleRef1] = s == ref1 ? 0.0 : bond_angle(bond, bond_vector(ref1));
      row[kColAngleRef2] = s == ref2 ? 0.0 : bond_angle(bond, bond_vector(ref2));
      if (options.dihedral_mode == DihedralMode::kCentral) {
        row[kColDihedral] = central_torsion;
      } else if (s != ref2) {
        // Reference bond on the opposite centre: its coupling-H bond.
        const std::size_t opposite = side == 0 ? 4 : 0;
        row[kColDihedral] = torsion(bond, bond_vector(ref2), bond_vector(opposite));
      }
    } else {
      row[0] = bond.x();
      row[1] = bond.y();
      row[2] = bond.z();
      row[3] = 0.0;
    }
    const Atom& from = atom(slot.from_atom);
    const Atom& to = atom(slot.to_atom);
    row[kColCodeFrom] = atom_code(from.element);
    row[kColCodeTo] = atom_code(to.element);
    row[kColChargeFrom] = from.charge;
    row[kColChargeTo] = to.charge;
  }
  return x;
}

std::array<double, kSlots * kSlots> build_adjacency(const SlotLayout& slots) {
  std::array<double, kSlots * kSlots> a{};
  for (std::size_t i = 0; i < kSlots; ++i) {
    if (!slots[i].occupied) continue;
    for (std::size_t j = 0; j < kSlots; ++j) {
      if (!slots[j].occupied) continue;
      const bool shares = slots[i].from_atom == slots[j].from_atom ||
                          slots[i].from_atom == slots[j].to_atom ||
                          slots[i].to_atom == slots[j].from_atom ||
                          slots[i].to_atom == slots[j].to_atom;
      a[i * kSlots + j] = shares ? 1.0 : 0.0;
    }
  }
  return a;
}

std::array<double, kSlots> build_mask(const SlotLayout& slots) {
  std::array<double, kSlots> m{};
  for (std::size_t s = 0; s < kSlots; ++s) {
    if (slots[s].role == SlotRole::kCouplingH && slots[s].occupied) m[s] = 1.0;
  }
  return m;
}

CouplingSystem featurize(const Molecule& molecule, const BondGraph& graph,
                         const CouplingRecord& record, const FeatureOptions& options,
                         FeatureDiagnostics* diagnostics) {
  if (const auto problem = validate_coupling(record, molecule)) {
    throw FeaturizeError(SkipReason::kInvalidRecord, *problem);
  }
  const CouplingPath path =
      find_coupling_path(graph, record.atom_index_0, record.atom_index_1);
  CouplingSystem sys;
  sys.slots = enumerate_bond_slots(path, graph);
  try {
    sys.features = build_feature_matrix(sys.slots, molecule, options, diagnostics);
  } catch (const std::invalid_argument& e) {
    throw FeaturizeError(SkipReason::kDegenerate, e.what());
  }
  sys.adjacency = build_adjacency(sys.slots);
  sys.mask = build_mask(sys.slots);
  sys.label = record.scc;
  sys.record_id = record.id;
  return sys;
}

FeaturizeSummary featurize_all(const std::vector<Molecule>& molecules,
                               const std::vector<CouplingRecord>& records,
                               const FeatureOptions& options, const BondTable& table) {
  FeaturizeSummary summary;
  summary.molecules = molecules.size();
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < molecules.size(); ++i) by_name.emplace(molecules[i].name, i);
  std::vector<std::optional<BondGraph>> graphs(molecules.size());
  for (const CouplingRecord& rec : records) {
    const auto it = by_name.find(rec.molecule_name);
    if (it == by_name.end()) {
      ++summary.skipped[static_cast<std::size_t>(SkipReason::kInvalidRecord)];
      spdlog::warn("record {}: unknown molecule {}", rec.id, rec.molecule_name);
      continue;
    }
    const Molecule& mol = molecules[it->second];
    auto& graph = graphs[it->second];
    if (!graph) graph.emplace(mol.atoms.size(), detect_bonds(mol, table));
    try {
      summary.systems.push_back(featurize(mol, *graph, rec, options, &summary.diagnostics));
    } catch (const FeaturizeError& e) {
      ++summary.skipped[static_cast<std::size_t>(e.reason())];
      spdlog::warn("record {} skipped ({}): {}", rec.id, to_string(e.reason()), e.what());
    }
  }
  return summary;
}

}  // namespace gelae
