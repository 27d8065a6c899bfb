#include "cfcrs/nn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cfcrs/error.hpp"

namespace cfcrs::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'F', 'C', 'R', 'S', 'C', 'K', 'P'};

template <typename T>
void put_le(std::ostream& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>((u >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) {
      throw Error(ErrorCode::kParseError, "truncated checkpoint");
    }
    u |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(u);
}

}  // namespace

void save_checkpoint(const ParamStore& store, std::ostream& out, DType dtype) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, store.entries().size());
  for (const auto& [name, t] : store.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) {
      if (dtype == DType::kF64) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      } else {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  if (!out) throw Error(ErrorCode::kMissingArtifact, "checkpoint write failed");
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     DType dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kMissingArtifact, "cannot open " + path.string());
  save_checkpoint(store, out, dtype);
}

ParamStore load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error(ErrorCode::kParseError, "bad checkpoint magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kParseError,
                "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint64_t>(in);
  ParamStore store;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = get_le<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw Error(ErrorCode::kParseError, "truncated checkpoint name");
    const int tag = in.get();
    if (tag != 0 && tag != 1) throw Error(ErrorCode::kParseError, "bad dtype tag");
    const auto rank = get_le<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    Tensor t(shape);
    for (double& v : t.values()) {
      if (tag == 0) {
        v = std::bit_cast<double>(get_le<std::uint64_t>(in));
      } else {
        v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
      }
    }
    store.add(name, std::move(t));
  }
  return store;
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open " + path.string());
  return load_checkpoint(in);
}

void assign_values(ParamStore& target, const ParamStore& source) {
  for (const std::string& name : target.names()) {
    Tensor& t = target.get(name);
    const Tensor& s = source.get(name);
    if (!t.same_shape(s)) {
      throw Error(ErrorCode::kShapeMismatch, "checkpoint shape for " + name);
    }
    t = s;
  }
}

}  // namespace cfcrs::nn
