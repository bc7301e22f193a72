#include "gelae/dataset_io.h"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace gelae {

namespace {
constexpr char kMagic[8] = {'G', 'E', 'L', 'A', 'E', 'D', 'S', '1'};
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), 8)) {
    throw std::runtime_error("unexpected end of binary payload");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& out, double v) {
  write_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

double read_f64_le(std::istream& in) { return std::bit_cast<double>(read_u64_le(in)); }

std::vector<std::string> feature_column_names(Representation r) {
  if (r == Representation::kE2Invariant) {
    return {"bond_length", "angle_ref1",  "angle_ref2",  "dihedral",
            "code_from",   "code_to",     "charge_from", "charge_to"};
  }
  return {"dx", "dy", "dz", "zero", "code_from", "code_to", "charge_from", "charge_to"};
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  const nlohmann::json manifest = {
      {"format", "gelae-dataset"},
      {"layout_version", kDatasetLayoutVersion},
      {"count", dataset.systems.size()},
      {"representation", to_string(dataset.representation)},
      {"dihedral_mode", to_string(dataset.dihedral_mode)},
      {"columns", feature_column_names(dataset.representation)},
      {"values_per_sample", kValuesPerSample},
  };
  const std::string text = manifest.dump();
  out.write(kMagic, sizeof kMagic);
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const CouplingSystem& s : dataset.systems) {
    for (const double v : s.features) write_f64_le(out, v);
    for (const double v : s.adjacency) write_f64_le(out, v);
    for (const double v : s.mask) write_f64_le(out, v);
    write_f64_le(out, s.label.value_or(std::numeric_limits<double>::quiet_NaN()));
    write_f64_le(out, static_cast<double>(s.record_id));
    for (const BondSlot& slot : s.slots) {
      write_f64_le(out, slot.occupied ? slot.from_atom : -1);
      write_f64_le(out, slot.occupied ? slot.to_atom : -1);
    }
  }
  if (!out) throw std::runtime_error("failed writing dataset");
}

Dataset read_dataset(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a featurized dataset (bad magic)");
  }
  const std::uint64_t length = read_u64_le(in);
  if (length > (1u << 24)) throw std::runtime_error("dataset manifest too large");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw std::runtime_error("truncated dataset manifest");
  }
  const auto manifest = nlohmann::json::parse(text);
  if (manifest.at("format") != "gelae-dataset" ||
      manifest.at("layout_version").get<int>() != kDatasetLayoutVersion ||
      manifest.at("values_per_sample").get<std::size_t>() != kValuesPerSample) {
    throw std::runtime_error("unsupported dataset layout");
  }
  Dataset ds;
  ds.representation = representation_from_string(manifest.at("representation"));
  ds.dihedral_mode = dihedral_mode_from_string(manifest.at("dihedral_mode"));
  const auto count = manifest.at("count").get<std::size_t>();
  ds.systems.resize(count);
  for (CouplingSystem& s : ds.systems) {
    for (double& v : s.features) v = read_f64_le(in);
    for (double& v : s.adjacency) v = read_f64_le(in);
    for (double& v : s.mask) v = read_f64_le(in);
    const double label = read_f64_le(in);
    if (!std::isnan(label)) s.label = label;
    s.record_id = static_cast<std::int64_t>(read_f64_le(in));
    for (std::size_t k = 0; k < kSlots; ++k) {
      BondSlot& slot = s.slots[k];
      slot.from_atom = static_cast<int>(read_f64_le(in));
      slot.to_atom = static_cast<int>(read_f64_le(in));
      slot.occupied = s.adj(k, k) != 0.0;
      slot.role = (k == 0 || k == 4)   ? SlotRole::kCouplingH
                  : (k == 3 || k == 7) ? SlotRole::kCentral
                                       : SlotRole::kOther;
    }
  }
  return ds;
}

void write_dataset_file(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(out, dataset);
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  return read_dataset(in);
}

}  // namespace gelae
