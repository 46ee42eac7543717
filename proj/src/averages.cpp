#include "fontdisent/averages.hpp"

#include <cstring>
#include <fstream>

#include "fontdisent/error.hpp"

namespace fontdisent {

namespace {
constexpr char kMagic[8] = {'F', 'D', 'A', 'V', 'G', 0, 0, 0};
}

void save_averages(const std::filesystem::path& path, const AverageFeatureTable& table) {
  if (table.empty()) throw Error(ErrorKind::MissingAverages, "nothing to save");
  const auto style = table.style.detach().to(torch::kFloat32).contiguous();
  const auto content = table.content.detach().to(torch::kFloat32).contiguous();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  const uint32_t header[4] = {kAveragesFormatVersion, static_cast<uint32_t>(style.size(0)),
                              static_cast<uint32_t>(content.size(0)), static_cast<uint32_t>(style.size(1))};
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(style.data_ptr<float>()), style.numel() * sizeof(float));
  out.write(reinterpret_cast<const char*>(content.data_ptr<float>()), content.numel() * sizeof(float));
  for (int64_t i = 0; i < style.size(0); ++i) {
    out << (static_cast<size_t>(i) < table.font_names.size() ? table.font_names[i] : std::to_string(i)) << "\n";
  }
}

AverageFeatureTable load_averages(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  char magic[8];
  uint32_t header[4];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::CorruptFile, path.string() + " is not an averages file");
  }
  if (header[0] != kAveragesFormatVersion) {
    throw Error(ErrorKind::CorruptFile, "averages format version " + std::to_string(header[0]) + " unsupported");
  }
  AverageFeatureTable table;
  table.style = torch::empty({header[1], header[3]}, torch::kFloat32);
  table.content = torch::empty({header[2], header[3]}, torch::kFloat32);
  in.read(reinterpret_cast<char*>(table.style.data_ptr<float>()), table.style.numel() * sizeof(float));
  in.read(reinterpret_cast<char*>(table.content.data_ptr<float>()), table.content.numel() * sizeof(float));
  if (!in) throw Error(ErrorKind::CorruptFile, "truncated averages file " + path.string());
  std::string name;
  while (table.font_names.size() < header[1] && std::getline(in, name)) table.font_names.push_back(name);
  if (table.font_names.size() != header[1]) throw Error(ErrorKind::CorruptFile, "averages file lacks font names");
  return table;
}

}  // namespace fontdisent
