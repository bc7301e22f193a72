#pragma once

// Featurized dataset container.
//
//   offset 0   8 bytes   magic "GELAEDS1"
//   offset 8   8 bytes   manifest length L, unsigned little-endian
//   offset 16  L bytes   UTF-8 JSON manifest
//   then       count blocks of 154 little-endian float64 values:
//                64 features (row-major 8x8), 64 adjacency (row-major 8x8),
//                8 mask, 1 label (NaN when unlabelled), 1 record id,
//                16 slot atom indices (from, to per slot; -1 when padded)
//
// Manifest keys: format ("gelae-dataset"), layout_version (1), count,
// representation ("E2" | "E1"), dihedral_mode, columns (feature column names),
// values_per_sample (154).
//
// On load, slot occupancy is recovered from the adjacency diagonal and roles
// from the fixed layout.

#include <iosfwd>
#include <string>
#include <vector>

#include "gelae/featurizer.h"

namespace gelae {

inline constexpr int kDatasetLayoutVersion = 1;
inline constexpr std::size_t kValuesPerSample =
    kSlots * kFeatures + kSlots * kSlots + kSlots + 2 + 2 * kSlots;

struct Dataset {
  Representation representation = Representation::kE2Invariant;
  DihedralMode dihedral_mode = DihedralMode::kPerSlot;
  std::vector<CouplingSystem> systems;
};

std::vector<std::string> feature_column_names(Representation r);

void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);

void write_dataset_file(const std::string& path, const Dataset& dataset);
Dataset read_dataset_file(const std::string& path);

// Little-endian float64 helpers shared with the checkpoint format.
void write_f64_le(std::ostream& out, double v);
double read_f64_le(std::istream& in);
void write_u64_le(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64_le(std::istream& in);

}  // namespace gelae
