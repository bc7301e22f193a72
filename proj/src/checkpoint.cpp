#include "gelae/checkpoint.h"

#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

#include "gelae/dataset_io.h"

namespace gelae {

namespace {
constexpr const char* kMagicLine = "GELAE-CHECKPOINT 1";
}

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors,
                      const nlohmann::json& config) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  std::set<std::string> names;
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second) {
      throw std::invalid_argument("duplicate tensor name " + t.name);
    }
    entries.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
    offset += t.tensor.size() * sizeof(double);
  }
  const nlohmann::json header = {
      {"tensors", entries}, {"payload_bytes", offset}, {"config", config}};
  out << kMagicLine << '\n' << header.dump() << '\n';
  for (const auto& t : tensors) {
    for (const double v : t.tensor.values()) write_f64_le(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

CheckpointData read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) {
    throw std::runtime_error("not a checkpoint (bad magic line)");
  }
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint header missing");
  const auto header = nlohmann::json::parse(line);
  CheckpointData data;
  data.config = header.at("config");
  std::size_t expected_offset = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<ad::Shape>();
    if (entry.at("offset").get<std::size_t>() != expected_offset) {
      throw std::runtime_error("checkpoint offsets are not contiguous");
    }
    ad::Tensor tensor(shape);
    for (double& v : tensor.values()) v = read_f64_le(in);
    expected_offset += tensor.size() * sizeof(double);
    data.tensors.push_back({entry.at("name").get<std::string>(), std::move(tensor)});
  }
  if (expected_offset != header.at("payload_bytes").get<std::size_t>()) {
    throw std::runtime_error("checkpoint payload size mismatch");
  }
  return data;
}

}  // namespace gelae
