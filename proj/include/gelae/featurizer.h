#pragma once

// Builds the fixed-size bond-graph representation of one 3JHH coupling.
//
// The coupling H_a - X1 - X2 - H_b is described by up to eight directed bonds
// leaving the two central atoms:
//
//   slot 0   X1 -> H_a          slot 4   X2 -> H_b
//   slot 1,2 X1 -> other        slot 5,6 X2 -> other
//   slot 3   X1 -> X2           slot 7   X2 -> X1
//
// "Other" neighbours are sorted by atom index; missing ones leave the slot
// unoccupied, with a zero feature row and zero adjacency row/column.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gelae/molecule_io.h"

namespace gelae {

inline constexpr std::size_t kSlots = 8;
inline constexpr std::size_t kFeatures = 8;

/// Column layout of an Input_E2 row.
enum E2Column : std::size_t {
  kColLength = 0,
  kColAngleRef1 = 1,
  kColAngleRef2 = 2,
  kColDihedral = 3,
  kColCodeFrom = 4,
  kColCodeTo = 5,
  kColChargeFrom = 6,
  kColChargeTo = 7,
};

enum class Representation { kE2Invariant, kE1BondVector };
enum class DihedralMode { kPerSlot, kCentral };

std::string to_string(Representation r);
Representation representation_from_string(const std::string& s);
std::string to_string(DihedralMode m);
DihedralMode dihedral_mode_from_string(const std::string& s);

enum class SlotRole { kCouplingH, kOther, kCentral };

struct BondSlot {
  int from_atom = -1;
  int to_atom = -1;
  SlotRole role = SlotRole::kOther;
  bool occupied = false;
};

using SlotLayout = std::array<BondSlot, kSlots>;

struct CouplingSystem {
  std::array<double, kSlots * kFeatures> features{};
  std::array<double, kSlots * kSlots> adjacency{};
  std::array<double, kSlots> mask{};
  std::optional<double> label;
  std::int64_t record_id = 0;
  SlotLayout slots{};

  double feature(std::size_t slot, std::size_t col) const {
    return features[slot * kFeatures + col];
  }
  double adj(std::size_t i, std::size_t j) const { return adjacency[i * kSlots + j]; }
  bool occupied(std::size_t slot) const { return adj(slot, slot) != 0.0; }
};

/// Why a coupling could not be featurized.
enum class SkipReason { kNoPath, kValence, kDegenerate, kInvalidRecord };
std::string to_string(SkipReason r);

class FeaturizeError : public std::runtime_error {
 public:
  FeaturizeError(SkipReason reason, const std::string& message)
      : std::runtime_error(message), reason_(reason) {}
  SkipReason reason() const { return reason_; }

 private:
  SkipReason reason_;
};

/// Undirected bond graph with sorted neighbour lists.
class BondGraph {
 public:
  BondGraph(std::size_t atom_count, const std::vector<Bond>& bonds);
  const std::vector<int>& neighbors(int atom) const {
    return adj_.at(static_cast<std::size_t>(atom));
  }
  bool bonded(int a, int b) const;
  std::size_t atom_count() const { return adj_.size(); }

 private:
  std::vector<std::vector<int>> adj_;
};

struct CouplingPath {
  int h_a = -1;
  int x1 = -1;
  int x2 = -1;
  int h_b = -1;
};

/// Finds X1 bonded to h_a and X2 bonded to h_b with X1-X2 bonded. When
/// several paths exist the lexicographically smallest (x1, x2) is returned.
CouplingPath find_coupling_path(const BondGraph& graph, int h_a, int h_b);

/// Canonical eight-slot layout for a path. Throws (kValence) when a central
/// atom has more than four neighbours.
SlotLayout enumerate_bond_slots(const CouplingPath& path, const BondGraph& graph);

/// Angle between two vectors in [0, pi]. Throws std::invalid_argument for a
/// vector shorter than 1e-9.
double bond_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Angle in [0, pi] between the plane of (slot_bond, central) and the plane
/// of (central, ref_bond). `slot_bond` and `central` leave the same atom and
/// `ref_bond` leaves the far end of `central`, so a coplanar cis arrangement
/// gives 0 and trans gives pi. Returns 0 when either plane is degenerate.
double dihedral_angle(const Eigen::Vector3d& slot_bond, const Eigen::Vector3d& central,
                      const Eigen::Vector3d& ref_bond);
/// As dihedral_angle, but nullopt for degenerate planes.
std::optional<double> dihedral_angle_checked(const Eigen::Vector3d& slot_bond,
                                             const Eigen::Vector3d& central,
                                             const Eigen::Vector3d& ref_bond);

/// Atomic number / 10.
double atom_code(Element e);

struct FeatureOptions {
  Representation representation = Representation::kE2Invariant;
  DihedralMode dihedral_mode = DihedralMode::kPerSlot;
};

struct FeatureDiagnostics {
  std::size_t degenerate_dihedrals = 0;
};

std::array<double, kSlots * kFeatures> build_feature_matrix(
    const SlotLayout& slots, const Molecule& molecule, const FeatureOptions& options,
    FeatureDiagnostics* diagnostics = nullptr);

/// A_ij = 1 when both slots are occupied and their bonds share an atom.
std::array<double, kSlots * kSlots> build_adjacency(const SlotLayout& slots);

/// 1 at the two coupling-hydrogen slots (0 and 4).
std::array<double, kSlots> build_mask(const SlotLayout& slots);

/// Full pipeline for one record. Throws FeaturizeError.
CouplingSystem featurize(const Molecule& molecule, const BondGraph& graph,
                         const CouplingRecord& record, const FeatureOptions& options,
                         FeatureDiagnostics* diagnostics = nullptr);

struct FeaturizeSummary {
  std::vector<CouplingSystem> systems;
  std::size_t molecules = 0;
  std::array<std::size_t, 4> skipped{};  // indexed by SkipReason
  FeatureDiagnostics diagnostics;

  std::size_t skipped_total() const {
    return skipped[0] + skipped[1] + skipped[2] + skipped[3];
  }
};

/// Featurizes every record against its molecule, computing each bond graph
/// once. Records naming an unknown molecule count as kInvalidRecord. Skips
/// are logged, never thrown.
FeaturizeSummary featurize_all(const std::vector<Molecule>& molecules,
                               const std::vector<CouplingRecord>& records,
                               const FeatureOptions& options, const BondTable& table);

}  // namespace gelae
