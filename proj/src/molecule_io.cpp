#include "gelae/molecule_io.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <unordered_map>

namespace gelae {

namespace {

constexpr std::array<std::string_view, 5> kSymbols = {"H", "C", "N", "O", "F"};
constexpr std::array<int, 5> kAtomicNumbers = {1, 6, 7, 8, 9};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  T value{};
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(line, std::string("invalid ") + what + " '" +
                               std::string(field) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) {
      throw ParseError(line, std::string("non-finite ") + what);
    }
  }
  return value;
}

// Splits the header line, dropping a UTF-8 byte order mark if present.
std::vector<std::string_view> read_header(std::istream& in, std::string& storage) {
  if (!std::getline(in, storage)) throw ParseError(1, "missing header line");
  if (storage.size() >= 3 && static_cast<unsigned char>(storage[0]) == 0xEF &&
      static_cast<unsigned char>(storage[1]) == 0xBB &&
      static_cast<unsigned char>(storage[2]) == 0xBF) {
    storage.erase(0, 3);
  }
  return split_row(storage);
}

bool header_matches(const std::vector<std::string_view>& got,
                    std::initializer_list<std::string_view> want) {
  return got.size() == want.size() && std::equal(want.begin(), want.end(), got.begin());
}

std::string join(std::initializer_list<std::string_view> cols) {
  std::string out;
  for (const auto c : cols) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::optional<Element> element_from_symbol(std::string_view symbol) {
  for (std::size_t i = 0; i < kSymbols.size(); ++i) {
    if (kSymbols[i] == symbol) return static_cast<Element>(i);
  }
  return std::nullopt;
}

std::string_view element_symbol(Element e) { return kSymbols[static_cast<int>(e)]; }

int atomic_number(Element e) { return kAtomicNumbers[static_cast<int>(e)]; }

// ---- parsing --------------------------------------------------------------

std::vector<Molecule> parse_structures(std::istream& in) {
  std::string line;
  const auto header = read_header(in, line);
  const std::initializer_list<std::string_view> expected = {
      "molecule_name", "atom_index", "atom", "x", "y", "z"};
  if (!header_matches(header, expected)) {
    throw ParseError(1, "expected header '" + join(expected) + "'");
  }

  std::vector<Molecule> molecules;
  std::unordered_map<std::string, std::size_t> by_name;
  std::vector<std::size_t> first_line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_row(line);
    if (f.size() != 6) {
      throw ParseError(line_no, "expected 6 fields, found " + std::to_string(f.size()));
    }
    if (f[0].empty()) throw ParseError(line_no, "empty molecule_name");
    Atom atom;
    atom.index = parse_number<int>(f[1], line_no, "atom_index");
    if (atom.index < 0) throw ParseError(line_no, "negative atom_index");
    const auto element = element_from_symbol(f[2]);
    if (!element) {
      throw ParseError(line_no, "unknown element '" + std::string(f[2]) + "'");
    }
    atom.element = *element;
    atom.position = {parse_number<double>(f[3], line_no, "x"),
                     parse_number<double>(f[4], line_no, "y"),
                     parse_number<double>(f[5], line_no, "z")};

    const std::string name(f[0]);
    auto [it, inserted] = by_name.try_emplace(name, molecules.size());
    if (inserted) {
      molecules.push_back(Molecule{name, {}});
      first_line.push_back(line_no);
    }
    Molecule& mol = molecules[it->second];
    for (const Atom& existing : mol.atoms) {
      if (existing.index == atom.index) {
        throw ParseError(line_no, "duplicate atom " + std::to_string(atom.index) +
                                      " in molecule " + name);
      }
    }
    mol.atoms.push_back(atom);
  }

  for (std::size_t m = 0; m < molecules.size(); ++m) {
    Molecule& mol = molecules[m];
    std::sort(mol.atoms.begin(), mol.atoms.end(),
              [](const Atom& a, const Atom& b) { return a.index < b.index; });
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
      if (mol.atoms[i].index != static_cast<int>(i)) {
        throw ParseError(first_line[m], "molecule " + mol.name +
                                            " is missing atom index " +
                                            std::to_string(i));
      }
    }
    if (mol.atoms.size() > kMaxExpectedAtoms) {
      spdlog::warn("molecule {} has {} atoms (more than {})", mol.name,
                   mol.atoms.size(), kMaxExpectedAtoms);
    }
  }
  return molecules;
}

CouplingParseResult parse_couplings(std::istream& in) {
  std::string line;
  const auto header = read_header(in, line);
  const std::initializer_list<std::string_view> base = {
      "id", "molecule_name", "atom_index_0", "atom_index_1", "type"};
  const std::initializer_list<std::string_view> labelled = {
      "id",           "molecule_name", "atom_index_0",
      "atom_index_1", "type",          "scalar_coupling_constant"};
  bool has_label = false;
  if (header_matches(header, labelled)) {
    has_label = true;
  } else if (!header_matches(header, base)) {
    throw ParseError(1, "expected header '" + join(labelled) +
                            "' (last column optional)");
  }
  const std::size_t width = has_label ? 6 : 5;

  CouplingParseResult result;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_row(line);
    if (f.size() != width) {
      throw ParseError(line_no, "expected " + std::to_string(width) +
                                    " fields, found " + std::to_string(f.size()));
    }
    CouplingRecord rec;
    rec.id = parse_number<std::int64_t>(f[0], line_no, "id");
    if (f[1].empty()) throw ParseError(line_no, "empty molecule_name");
    rec.molecule_name = std::string(f[1]);
    rec.atom_index_0 = parse_number<int>(f[2], line_no, "atom_index_0");
    rec.atom_index_1 = parse_number<int>(f[3], line_no, "atom_index_1");
    rec.coupling_type = std::string(f[4]);
    if (rec.coupling_type != "3JHH") {
      ++result.skipped_other_types;
      continue;
    }
    if (has_label && !f[5].empty()) {
      rec.scc = parse_number<double>(f[5], line_no, "scalar_coupling_constant");
      rec.out_of_range = *rec.scc < kSccMin || *rec.scc > kSccMax;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

void parse_charges(std::istream& in, std::vector<Molecule>& molecules, bool strict) {
  std::string line;
  const auto header = read_header(in, line);
  const std::initializer_list<std::string_view> expected = {
      "molecule_name", "atom_index", "mulliken_charge"};
  if (!header_matches(header, expected)) {
    throw ParseError(1, "expected header '" + join(expected) + "'");
  }
  std::unordered_map<std::string, Molecule*> by_name;
  for (Molecule& m : molecules) by_name.emplace(m.name, &m);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_row(line);
    if (f.size() != 3) {
      throw ParseError(line_no, "expected 3 fields, found " + std::to_string(f.size()));
    }
    const int index = parse_number<int>(f[1], line_no, "atom_index");
    const double charge = parse_number<double>(f[2], line_no, "mulliken_charge");
    const auto it = by_name.find(std::string(f[0]));
    if (it == by_name.end()) {
      if (strict) {
        throw ParseError(line_no, "unknown molecule '" + std::string(f[0]) + "'");
      }
      spdlog::warn("charges line {}: unknown molecule '{}' skipped", line_no, f[0]);
      continue;
    }
    Molecule& mol = *it->second;
    if (index < 0 || static_cast<std::size_t>(index) >= mol.atoms.size()) {
      throw ParseError(line_no, "molecule " + mol.name + " has no atom " +
                                    std::to_string(index));
    }
    mol.atoms[static_cast<std::size_t>(index)].charge = charge;
  }
}

// ---- writing --------------------------------------------------------------

void write_structures(std::ostream& out, const std::vector<Molecule>& molecules) {
  out << "molecule_name,atom_index,atom,x,y,z\n";
  for (const Molecule& m : molecules) {
    for (const Atom& a : m.atoms) {
      out << m.name << ',' << a.index << ',' << element_symbol(a.element) << ','
          << format_double(a.position.x()) << ',' << format_double(a.position.y())
          << ',' << format_double(a.position.z()) << '\n';
    }
  }
}

void write_couplings(std::ostream& out, const std::vector<CouplingRecord>& records) {
  const bool labelled = std::any_of(records.begin(), records.end(),
                                    [](const auto& r) { return r.scc.has_value(); });
  out << "id,molecule_name,atom_index_0,atom_index_1,type";
  if (labelled) out << ",scalar_coupling_constant";
  out << '\n';
  for (const CouplingRecord& r : records) {
    out << r.id << ',' << r.molecule_name << ',' << r.atom_index_0 << ','
        << r.atom_index_1 << ',' << r.coupling_type;
    if (labelled) out << ',' << (r.scc ? format_double(*r.scc) : std::string());
    out << '\n';
  }
}

void write_charges(std::ostream& out, const std::vector<Molecule>& molecules) {
  out << "molecule_name,atom_index,mulliken_charge\n";
  for (const Molecule& m : molecules) {
    for (const Atom& a : m.atoms) {
      out << m.name << ',' << a.index << ',' << format_double(a.charge) << '\n';
    }
  }
}

std::optional<std::string> validate_coupling(const CouplingRecord& record,
                                             const Molecule& molecule) {
  const auto n = static_cast<int>(molecule.atoms.size());
  for (const int idx : {record.atom_index_0, record.atom_index_1}) {
    if (idx < 0 || idx >= n) {
      return "atom " + std::to_string(idx) + " not in molecule " + molecule.name;
    }
    if (molecule.atoms[static_cast<std::size_t>(idx)].element != Element::kH) {
      return "atom " + std::to_string(idx) + " is not a hydrogen";
    }
  }
  if (record.atom_index_0 == record.atom_index_1) {
    return "coupling atoms are identical";
  }
  return std::nullopt;
}

// ---- bond perception ------------------------------------------------------

BondTable BondTable::standard() {
  using E = Element;
  using O = BondOrder;
  BondTable t;
  t.add(E::kC, E::kC, O::kSingle, 1.54);
  t.add(E::kC, E::kC, O::kDouble, 1.34);
  t.add(E::kC, E::kC, O::kTriple, 1.20);
  t.add(E::kC, E::kN, O::kSingle, 1.48);
  t.add(E::kC, E::kN, O::kDouble, 1.35);
  t.add(E::kC, E::kN, O::kTriple, 1.16);
  t.add(E::kC, E::kO, O::kSingle, 1.43);
  t.add(E::kC, E::kO, O::kDouble, 1.20);
  t.add(E::kC, E::kF, O::kSingle, 1.38);
  t.add(E::kC, E::kH, O::kSingle, 1.09);
  t.add(E::kN, E::kN, O::kSingle, 1.45);
  t.add(E::kN, E::kN, O::kDouble, 1.25);
  t.add(E::kN, E::kN, O::kTriple, 1.10);
  t.add(E::kN, E::kO, O::kSingle, 1.46);
  t.add(E::kN, E::kO, O::kDouble, 1.14);
  t.add(E::kN, E::kF, O::kSingle, 1.40);
  t.add(E::kN, E::kH, O::kSingle, 1.01);
  t.add(E::kO, E::kO, O::kSingle, 1.48);
  t.add(E::kO, E::kO, O::kDouble, 1.20);
  t.add(E::kO, E::kH, O::kSingle, 0.98);
  return t;
}

void BondTable::add(Element a, Element b, BondOrder order, double length) {
  entries_.push_back({a, b, order, length, kThresholdFactor * length});
}

std::vector<BondTableEntry> BondTable::lookup(Element a, Element b) const {
  std::vector<BondTableEntry> out;
  for (const auto& e : entries_) {
    if ((e.a == a && e.b == b) || (e.a == b && e.b == a)) out.push_back(e);
  }
  return out;
}

std::optional<double> BondTable::max_threshold(Element a, Element b) const {
  std::optional<double> best;
  for (const auto& e : lookup(a, b)) {
    if (!best || e.threshold > *best) best = e.threshold;
  }
  return best;
}

std::vector<Bond> detect_bonds(const Molecule& molecule, const BondTable& table) {
  // Pair thresholds are resolved once per element combination.
  std::map<std::pair<Element, Element>, std::vector<BondTableEntry>> cache;
  auto entries_for = [&](Element a, Element b) -> const std::vector<BondTableEntry>& {
    const auto key = std::minmax(a, b);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, table.lookup(a, b)).first;
    return it->second;
  };

  std::vector<Bond> bonds;
  const auto& atoms = molecule.atoms;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    for (std::size_t j = i + 1; j < atoms.size(); ++j) {
      const auto& entries = entries_for(atoms[i].element, atoms[j].element);
      if (entries.empty()) continue;
      const double dist = (atoms[i].position - atoms[j].position).norm();
      double max_threshold = -std::numeric_limits<double>::infinity();
      for (const auto& e : entries) max_threshold = std::max(max_threshold, e.threshold);
      if (!(dist <= max_threshold)) continue;
      const BondTableEntry* nearest = &entries.front();
      for (const auto& e : entries) {
        if (std::abs(e.length - dist) < std::abs(nearest->length - dist)) nearest = &e;
      }
      bonds.push_back({static_cast<int>(i), static_cast<int>(j), nearest->order, dist});
    }
  }
  return bonds;
}

}  // namespace gelae
