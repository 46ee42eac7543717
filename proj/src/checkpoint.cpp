#include "fontdisent/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fontdisent/error.hpp"

namespace fontdisent {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'F', 'D', 'C', 'K', 'P', 'T', 0, 0};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw Error(ErrorKind::InvalidArgument, "unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType parse_dtype(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  throw Error(ErrorKind::CorruptFile, "unknown dtype '" + name + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(DisentangleNet& net) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : net->named_parameters()) out.emplace_back(item.key(), item.value());
  for (const auto& item : net->named_buffers()) out.emplace_back(item.key(), item.value());
  return out;
}

void restore_tensors(std::istream& in, const nlohmann::json& tensors, DisentangleNet& net);

}  // namespace

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::Init: return "init";
    case Phase::Pretrained: return "pretrained";
    case Phase::Finetuned: return "finetuned";
  }
  return "init";
}

Phase parse_phase(std::string_view text) {
  if (text == "init") return Phase::Init;
  if (text == "pretrained") return Phase::Pretrained;
  if (text == "finetuned") return Phase::Finetuned;
  throw Error(ErrorKind::CorruptFile, "unknown phase tag '" + std::string(text) + "'");
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  auto net = ckpt.net;
  auto state = named_state(net);
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["phase"] = to_string(ckpt.phase);
  header["model"] = net->config();
  header["config"] = ckpt.config;
  auto& dir = header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  std::vector<torch::Tensor> payload;
  for (auto& [name, tensor] : state) {
    auto t = tensor.detach().contiguous().cpu();
    const uint64_t bytes = t.numel() * t.element_size();
    dir.push_back({{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()},
                   {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
    payload.push_back(std::move(t));
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    const uint32_t version = kCheckpointFormatVersion;
    const uint64_t length = text.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : payload) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read checkpoint " + path.string());
  char magic[8];
  uint32_t version = 0;
  uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::CorruptFile, path.string() + " is not a checkpoint");
  }
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorKind::CorruptFile, "checkpoint format version " + std::to_string(version) + ", expected " +
                                            std::to_string(kCheckpointFormatVersion));
  }
  if (length > (1u << 26)) throw Error(ErrorKind::CorruptFile, "implausible checkpoint header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(ErrorKind::CorruptFile, "truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.phase = parse_phase(header.at("phase").get<std::string>());
    ckpt.config = header.value("config", nlohmann::json::object());
    ckpt.net = DisentangleNet(header.at("model").get<ModelConfig>());
    restore_tensors(in, header.at("tensors"), ckpt.net);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, std::string("checkpoint header: ") + e.what());
  }
  ckpt.net->eval();
  return ckpt;
}

namespace {

void restore_tensors(std::istream& in, const nlohmann::json& tensors, DisentangleNet& net) {
  for (const auto& entry : tensors) {
    if (entry.at("dtype") == "f64") {
      net->to(torch::kFloat64);
      break;
    }
  }

  const auto payload_start = in.tellg();
  std::unordered_map<std::string, torch::Tensor> targets;
  for (auto& [name, tensor] : named_state(net)) targets.emplace(name, tensor);

  torch::NoGradGuard guard;
  size_t restored = 0;
  for (const auto& entry : tensors) {
    const auto name = entry.at("name").get<std::string>();
    const auto it = targets.find(name);
    if (it == targets.end()) throw Error(ErrorKind::CorruptFile, "unexpected tensor '" + name + "'");
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto loaded = torch::empty(shape, torch::TensorOptions().dtype(parse_dtype(entry.at("dtype"))));
    const auto bytes = entry.at("bytes").get<uint64_t>();
    if (bytes != static_cast<uint64_t>(loaded.numel() * loaded.element_size())) {
      throw Error(ErrorKind::CorruptFile, "size mismatch for '" + name + "'");
    }
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    in.read(static_cast<char*>(loaded.data_ptr()), static_cast<std::streamsize>(bytes));
    if (!in) throw Error(ErrorKind::CorruptFile, "truncated tensor '" + name + "'");
    if (it->second.sizes() != loaded.sizes() || it->second.scalar_type() != loaded.scalar_type()) {
      throw Error(ErrorKind::CorruptFile, "shape or dtype mismatch for '" + name + "'");
    }
    it->second.set_data(loaded);
    ++restored;
  }
  if (restored != targets.size()) throw Error(ErrorKind::CorruptFile, "checkpoint is missing tensors");
}

}  // namespace

}  // namespace fontdisent
