#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "samdetr/nn.hpp"

namespace samdetr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[] = "SAMD0001";

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Serialises tensors as: magic, u32 count, then per tensor u16 name length,
/// name bytes, u8 rank, u32 dims, f32 values (all little-endian).
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
/// Inverse of encode_checkpoint. Throws CheckpointError on bad magic,
/// truncation, trailing bytes or duplicate names.
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

std::vector<NamedTensor> snapshot(const ParameterSet& params);

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `params`. Names must match exactly; otherwise the
/// error lists the missing and extra names. Shapes must agree.
void load_into(ParameterSet& params, const std::vector<NamedTensor>& tensors);
void load_checkpoint(ParameterSet& params, const std::filesystem::path& path);

}  // namespace samdetr
