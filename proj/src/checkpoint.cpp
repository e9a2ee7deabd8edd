#include "tdrd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "tdrd/errors.hpp"

namespace tdrd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'D', 'R', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw SchemaError("truncated checkpoint " + path.string());
  return v;
}

std::string get_string(std::ifstream& in, std::uint64_t len, const std::filesystem::path& path) {
  if (len > (1ull << 30)) throw SchemaError("implausible string length in checkpoint " + path.string());
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw SchemaError("truncated checkpoint " + path.string());
  return s;
}

std::ifstream open_and_check(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw SchemaError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  return in;
}

ModelConfig read_config(std::ifstream& in, const std::filesystem::path& path) {
  const auto len = get<std::uint64_t>(in, path);
  const std::string text = get_string(in, len, path);
  try {
    return ModelConfig::from_entries(kv::parse(text));
  } catch (const std::exception& e) {
    throw SchemaError("checkpoint config invalid: " + std::string(e.what()));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Detector& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, 8);
    put(out, kVersion);
    const std::string text = kv::format(model.config().to_entries());
    put(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto params = model.named_parameters();
    put(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
      put(out, static_cast<std::uint32_t>(p.name.size()));
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      const Shape& s = p.tensor.shape();
      for (int d : {s.n, s.c, s.h, s.w}) put(out, static_cast<std::int32_t>(d));
      auto v = p.tensor.values();
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  auto in = open_and_check(path);
  return read_config(in, path);
}

Detector load_checkpoint(const std::filesystem::path& path) {
  auto in = open_and_check(path);
  Detector model(read_config(in, path));
  std::map<std::string, Tensor> by_name;
  for (auto& p : model.named_parameters()) by_name.emplace(p.name, p.tensor);

  const auto count = get<std::uint32_t>(in, path);
  if (count != by_name.size())
    throw SchemaError("checkpoint holds " + std::to_string(count) + " arrays, config expects " +
                      std::to_string(by_name.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, get<std::uint32_t>(in, path), path);
    Shape s;
    s.n = get<std::int32_t>(in, path);
    s.c = get<std::int32_t>(in, path);
    s.h = get<std::int32_t>(in, path);
    s.w = get<std::int32_t>(in, path);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw SchemaError("checkpoint parameter '" + name + "' not in model");
    if (!(it->second.shape() == s))
      throw SchemaError("checkpoint parameter '" + name + "' has shape " + s.str() + ", model expects " +
                        it->second.shape().str());
    auto dst = it->second.mutable_values();
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!in) throw SchemaError("truncated checkpoint " + path.string());
  }
  return model;
}

}  // namespace tdrd
