#include "mmet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mmet/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

namespace mmet {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'E', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  template <typename T>
  T get() {
    T v{};
    read(&v, sizeof(T));
    return v;
  }

  std::string get_string() {
    auto n = get<std::uint64_t>();
    if (n > (1ULL << 30)) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }

  [[noreturn]] void fail(const std::string& what) {
    throw DataError("checkpoint " + path_.string() + ": " + what);
  }

 private:
  std::istream& in_;
  const std::filesystem::path& path_;
};

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, block] : tensors) {
    if (shape_numel(block.shape) != block.values.size())
      throw UsageError("checkpoint block " + name + " has inconsistent shape");
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(block.shape.size()));
    for (auto d : block.shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(block.values.data()),
              static_cast<std::streamsize>(block.values.size() * sizeof(double)));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(texts.size()));
  for (const auto& [name, value] : texts) {
    put_string(out, name);
    put_string(out, value);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(in, path);
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("bad magic");
  if (auto v = r.get<std::uint32_t>(); v != kVersion)
    r.fail("unsupported version " + std::to_string(v));
  Checkpoint ck;
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.get_string();
    TensorBlock block;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank for " + name);
    for (std::uint32_t k = 0; k < rank; ++k) block.shape.push_back(r.get<std::uint64_t>());
    const auto n = shape_numel(block.shape);
    if (n > (1ULL << 28)) r.fail("implausible size for " + name);
    block.values.resize(n);
    r.read(block.values.data(), n * sizeof(double));
    ck.tensors.emplace(std::move(name), std::move(block));
  }
  const auto n_texts = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_texts; ++i) {
    auto name = r.get_string();
    ck.texts.emplace(std::move(name), r.get_string());
  }
  return ck;
}

const TensorBlock& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint has no tensor " + name);
  return it->second;
}

const std::string& Checkpoint::text(const std::string& name) const {
  auto it = texts.find(name);
  if (it == texts.end()) throw DataError("checkpoint has no entry " + name);
  return it->second;
}

}  // namespace mmet
