#include <bit>
#include <cstring>
#include <fstream>

#include "advpicker/error.hpp"
#include "advpicker/tensor.hpp"

namespace advpicker {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

constexpr char kMagic[4] = {'A', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IOError("truncated checkpoint " + path.string());
  return v;
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const auto n = get<std::uint32_t>(in, path);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw IOError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, store.seed());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  std::uint32_t count = 0;
  for (const auto& [_, comp] : store.all()) count += static_cast<std::uint32_t>(comp.size());
  put<std::uint32_t>(out, count);
  for (const auto& [comp, params] : store.all()) {
    for (const auto& [name, t] : params) {
      put_string(out, comp);
      put_string(out, name);
      put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t.value();
      out.write(reinterpret_cast<const char*>(rm.data()),
                static_cast<std::streamsize>(rm.size() * static_cast<Eigen::Index>(sizeof(double))));
    }
  }
  if (!out) throw IOError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IOError("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw IOError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ck{ParamStore(get<std::uint64_t>(in, path)), {}};
  const auto nmeta = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = get_string(in, path);
    ck.metadata[std::move(k)] = get_string(in, path);
  }
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto comp = get_string(in, path);
    auto name = get_string(in, path);
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    if (rm.size() > 0 &&
        !in.read(reinterpret_cast<char*>(rm.data()),
                 static_cast<std::streamsize>(rm.size() * static_cast<Eigen::Index>(sizeof(double))))) {
      throw IOError("truncated checkpoint " + path.string());
    }
    ck.params.add(comp, name, Matrix(rm));
  }
  return ck;
}

}  // namespace advpicker
