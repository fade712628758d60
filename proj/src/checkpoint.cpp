#include "prism/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace prism {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'I', 'S', 'M', 'W', 'M', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::ordered_json header;
  header["version"] = data.version;
  header["dtype"] = "f64";
  header["modules"] = data.modules;
  header["gate_tau"] = data.gate_tau;
  header["train_steps"] = data.train_steps;
  header["config"] = data.config_text;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& name : data.tensor_names) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = data.shapes.at(name);
    tensors.push_back(entry);
  }
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& name : data.tensor_names) {
    const auto& values = data.tensors.at(name);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: invalid checkpoint header in " + path);
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw CheckpointError("checkpoint: truncated checkpoint " + path);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("checkpoint: truncated checkpoint " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::parse_error&) {
    throw CheckpointError("checkpoint: invalid checkpoint header in " + path);
  }

  CheckpointData data;
  data.version = header.at("version").get<std::uint32_t>();
  if (data.version != 1) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(data.version) + " in " + path);
  }
  data.modules = header.at("modules").get<std::vector<std::string>>();
  data.config_text = header.at("config").get<std::string>();
  data.gate_tau = header.at("gate_tau").get<double>();
  data.train_steps = header.at("train_steps").get<std::int64_t>();
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t numel = 1;
    for (std::size_t d : shape) numel *= d;
    std::vector<double> values(numel);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint: truncated checkpoint " + path);
    data.tensor_names.push_back(name);
    data.shapes[name] = shape;
    data.tensors[name] = std::move(values);
  }
  return data;
}

CheckpointData checkpoint_from_params(const ParamList& params, const std::vector<std::string>& modules,
                                      const std::string& config_text, double gate_tau, std::int64_t train_steps) {
  CheckpointData data;
  data.modules = modules;
  data.config_text = config_text;
  data.gate_tau = gate_tau;
  data.train_steps = train_steps;
  for (const auto& p : params) {
    data.tensor_names.push_back(p.name);
    data.shapes[p.name] = p.tensor.shape();
    data.tensors[p.name] = std::vector<double>(p.tensor.data().begin(), p.tensor.data().end());
  }
  return data;
}

void apply_checkpoint(const CheckpointData& data, ParamList& params) {
  for (auto& p : params) {
    auto it = data.tensors.find(p.name);
    if (it == data.tensors.end()) {
      throw CheckpointError("checkpoint: missing tensor '" + p.name + "'");
    }
    if (data.shapes.at(p.name) != p.tensor.shape()) {
      throw CheckpointError("checkpoint: shape mismatch for tensor '" + p.name + "'");
    }
    auto dst = p.tensor.raw_data();
    std::copy(it->second.begin(), it->second.end(), dst.begin());
  }
}

}  // namespace prism
