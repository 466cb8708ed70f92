#include "css/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "css/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace css {

namespace {

constexpr std::uint32_t kMagic = 0x53534331;  // "CSS1"
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  auto len = read_pod<std::uint64_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  write_pod(out, kMagic);
  write_pod(out, kVersion);
  write_pod<std::uint64_t>(out, fnv1a(config_json.data(), config_json.size()));
  write_string(out, config_json);
  write_pod<std::uint64_t>(out, store.size());
  for (const auto& e : store) {
    write_string(out, e.name);
    write_pod<std::uint64_t>(out, e.value.rank());
    for (std::size_t d : e.value.shape()) write_pod<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(e.value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  if (read_pod<std::uint32_t>(in) != kMagic) {
    throw std::runtime_error("load_checkpoint: not a checkpoint file");
  }
  if (read_pod<std::uint32_t>(in) != kVersion) {
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version");
  }
  CheckpointData data;
  data.config_digest = read_pod<std::uint64_t>(in);
  data.config_json = read_string(in);
  if (fnv1a(data.config_json.data(), data.config_json.size()) != data.config_digest) {
    throw std::runtime_error("load_checkpoint: config digest mismatch");
  }
  auto count = read_pod<std::uint64_t>(in);
  data.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    auto rank = read_pod<std::uint64_t>(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = read_pod<std::uint64_t>(in);
    Tensor t(shape, 0.0);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data");
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  return data;
}

void restore_params(const CheckpointData& data, ParamStore& store) {
  if (data.tensors.size() != store.size()) {
    throw std::runtime_error("restore_params: parameter count mismatch");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    const auto& [name, tensor] = data.tensors[i];
    if (name != e.name || tensor.shape() != e.value.shape()) {
      throw std::runtime_error("restore_params: layout mismatch at " + name);
    }
    e.value = tensor;
  }
}

}  // namespace css
