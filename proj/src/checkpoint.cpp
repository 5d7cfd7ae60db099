#include "cdrnp/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace cdrnp {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'R', 'N', 'P', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint '" + path + "'");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams& params, std::uint64_t config_hash) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, config_hash);
    const auto all = params.all();
    write_pod(out, static_cast<std::uint32_t>(all.size()));
    for (Parameter* p : all) {
      write_pod(out, static_cast<std::uint32_t>(p->name.size()));
      out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      write_pod(out, static_cast<std::uint32_t>(p->value.shape.size()));
      for (auto dim : p->value.shape) write_pod(out, static_cast<std::int64_t>(dim));
      out.write(reinterpret_cast<const char*>(p->value.data.data()),
                static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::map<std::string, Tensor> read_checkpoint_tensors(const std::string& path,
                                                      std::uint64_t* config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("'" + path + "' is not a checkpoint file");
  }
  const auto hash = read_pod<std::uint64_t>(in, path);
  if (config_hash != nullptr) *config_hash = hash;
  const auto count = read_pod<std::uint32_t>(in, path);
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(in, path);
    std::vector<std::int64_t> shape(rank);
    for (auto& dim : shape) dim = read_pod<std::int64_t>(in, path);
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint '" + path + "'");
    tensors.emplace(std::move(name), std::move(t));
  }
  return tensors;
}

std::uint64_t load_checkpoint(const std::string& path, ModelParams& params) {
  std::uint64_t hash = 0;
  auto tensors = read_checkpoint_tensors(path, &hash);
  const auto all = params.all();
  if (tensors.size() != all.size()) {
    throw ValidationError("checkpoint '" + path + "' holds " + std::to_string(tensors.size()) +
                          " parameters, model expects " + std::to_string(all.size()));
  }
  for (Parameter* p : all) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) {
      throw ValidationError("checkpoint '" + path + "' is missing parameter '" + p->name + "'");
    }
    if (it->second.shape != p->value.shape) {
      throw ValidationError("checkpoint parameter '" + p->name + "' has shape " +
                            it->second.shape_str() + ", model expects " + p->value.shape_str());
    }
    p->value = std::move(it->second);
    p->zero_grad();
  }
  return hash;
}

}  // namespace cdrnp
