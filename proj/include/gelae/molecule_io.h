#pragma once

// CHAMPS-style CSV ingestion and distance-based bond perception.
//
// Three schemas are supported, all comma separated with a header line:
//   structures: molecule_name,atom_index,atom,x,y,z
//   couplings:  id,molecule_name,atom_index_0,atom_index_1,type[,scalar_coupling_constant]
//   charges:    molecule_name,atom_index,mulliken_charge
// Coordinates and bond lengths are in Angstrom.

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gelae {

enum class Element { kH, kC, kN, kO, kF };

std::optional<Element> element_from_symbol(std::string_view symbol);
std::string_view element_symbol(Element e);
int atomic_number(Element e);

struct Atom {
  int index = 0;
  Element element = Element::kH;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double charge = 0.0;
};

struct Molecule {
  std::string name;
  std::vector<Atom> atoms;
};

/// Molecules above this size are accepted but logged.
inline constexpr std::size_t kMaxExpectedAtoms = 29;

/// Recorded scalar coupling range; labels outside it are flagged.
inline constexpr double kSccMin = -2.99;
inline constexpr double kSccMax = 17.00;

struct CouplingRecord {
  std::int64_t id = 0;
  std::string molecule_name;
  int atom_index_0 = 0;
  int atom_index_1 = 0;
  std::string coupling_type;
  std::optional<double> scc;
  bool out_of_range = false;
};

struct CouplingParseResult {
  std::vector<CouplingRecord> records;
  std::size_t skipped_other_types = 0;
};

/// Thrown for schema violations. `line` is 1-based and counts the header.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// One Molecule per distinct name, in order of first appearance. Atoms are
/// sorted by index, which must run 0..n-1 without gaps.
std::vector<Molecule> parse_structures(std::istream& in);

/// Keeps only 3JHH rows; other coupling types are counted and dropped.
CouplingParseResult parse_couplings(std::istream& in);

/// Assigns partial charges in place. Rows naming an unknown molecule are
/// skipped with a warning, or raise a ParseError when `strict` is set. A row
/// that names a missing atom of a known molecule is always an error.
void parse_charges(std::istream& in, std::vector<Molecule>& molecules,
                   bool strict = false);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

void write_structures(std::ostream& out, const std::vector<Molecule>& molecules);
void write_couplings(std::ostream& out, const std::vector<CouplingRecord>& records);
void write_charges(std::ostream& out, const std::vector<Molecule>& molecules);

/// Checks a record against its molecule: both atoms exist, are distinct
/// hydrogens. Returns a reason on failure.
std::optional<std::string> validate_coupling(const CouplingRecord& record,
                                             const Molecule& molecule);

// ---- bond perception ------------------------------------------------------

enum class BondOrder { kSingle = 1, kDouble = 2, kTriple = 3 };

struct BondTableEntry {
  Element a;
  Element b;
  BondOrder order;
  double length;     // Angstrom
  double threshold;  // 1.1 x length
};

class BondTable {
 public:
  /// The 20-row CHAMPS reference table.
  static BondTable standard();

  void add(Element a, Element b, BondOrder order, double length);

  const std::vector<BondTableEntry>& entries() const { return entries_; }
  /// Entries for an unordered element pair.
  std::vector<BondTableEntry> lookup(Element a, Element b) const;
  /// Largest connection threshold for the pair, or nullopt if the pair never
  /// bonds.
  std::optional<double> max_threshold(Element a, Element b) const;

  static constexpr double kThresholdFactor = 1.1;

 private:
  std::vector<BondTableEntry> entries_;
};

struct Bond {
  int i = 0;  // i < j
  int j = 0;
  BondOrder order = BondOrder::kSingle;
  double length = 0.0;
};

/// Pairs are bonded when their distance is at most the largest threshold
/// listed for the element pair. The order is the entry whose reference length
/// is nearest the measured distance.
std::vector<Bond> detect_bonds(const Molecule& molecule, const BondTable& table);

}  // namespace gelae
