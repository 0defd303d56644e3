#include "srspace/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace srspace {

namespace {
constexpr char kMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kFormatVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<ParamTensor*>& params) {
  nlohmann::json header = meta;
  header["format_version"] = kFormatVersion;
  nlohmann::json table = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto* p : params) {
    table.push_back({{"name", p->name}, {"size", p->value.size()}, {"offset", offset}});
    offset += p->value.size();
  }
  header["tensors"] = table;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  const uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto* p : params) {
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

namespace {

nlohmann::json read_header(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (!f || hlen == 0 || hlen > (1ULL << 30)) {
    throw std::runtime_error("checkpoint: bad header length in " + path);
  }
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw std::runtime_error("checkpoint: malformed header in " + path);
  if (header.value("format_version", -1) != kFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version in " + path);
  }
  return header;
}

}  // namespace

nlohmann::json read_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_header(f, path);
}

nlohmann::json load_checkpoint(const std::string& path, const std::vector<ParamTensor*>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  nlohmann::json header = read_header(f, path);

  const std::streampos blob_start = f.tellg();
  std::map<std::string, std::pair<uint64_t, uint64_t>> table;  // name -> (size, offset)
  for (const auto& t : header.at("tensors")) {
    table[t.at("name").get<std::string>()] = {t.at("size").get<uint64_t>(),
                                              t.at("offset").get<uint64_t>()};
  }
  for (auto* p : params) {
    auto it = table.find(p->name);
    if (it == table.end()) {
      throw std::runtime_error("checkpoint: missing tensor '" + p->name + "' in " + path);
    }
    if (it->second.first != p->value.size()) {
      throw std::runtime_error("checkpoint: size mismatch for '" + p->name + "' in " + path);
    }
    f.seekg(blob_start + static_cast<std::streamoff>(it->second.second * sizeof(double)));
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated blob in " + path);
  }
  return header;
}

}  // namespace srspace
