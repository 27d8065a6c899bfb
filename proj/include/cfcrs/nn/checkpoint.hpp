#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "cfcrs/nn/param_store.hpp"

namespace cfcrs::nn {

// Binary layout, all integers little-endian:
//   magic "CFCRSCKP", u32 format version, u64 entry count
//   per entry: u32 name length, UTF-8 name, u8 dtype (0 = f64, 1 = f32),
//              u32 rank, u64 dims[rank], values
// Entries are written in name order. Only parameter values are stored.
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF64 = 0, kF32 = 1 };

void save_checkpoint(const ParamStore& store, std::ostream& out,
                     DType dtype = DType::kF64);
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     DType dtype = DType::kF64);
ParamStore load_checkpoint(std::istream& in);
ParamStore load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into `target`; every target name must exist in
// source with the same shape.
void assign_values(ParamStore& target, const ParamStore& source);

}  // namespace cfcrs::nn
