#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "choreoseg/nn/optim.hpp"
#include "choreoseg/nn/tensor.hpp"

namespace choreoseg::nn {

inline constexpr std::uint8_t kCheckpointVersion = 1;

/// On-disk layout: "DSEG", u8 version, then records until end of file:
///   u32 name length, UTF-8 name, u32 rank, rank x u32 dims, payload.
/// Tensor payloads are little-endian f32. Records named "meta/<key>" are
/// metadata: rank 1, dims[0] = byte length, payload = raw UTF-8 bytes.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> metadata;

  const Tensor* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Appends the optimizer state as "opt/m/<param>", "opt/v/<param>",
/// "opt/step_count" and "opt/hyper" ([lr, beta1, beta2, eps]).
void append_adam_state(Checkpoint& ckpt, std::span<const ParamTensor> params,
                       const AdamState& state);
/// Restores the optimizer state written by append_adam_state.
AdamState extract_adam_state(const Checkpoint& ckpt, std::span<const ParamTensor> params);

}  // namespace choreoseg::nn
