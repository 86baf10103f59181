#include "choreoseg/nn/checkpoint.hpp"

#include <fstream>

#include "choreoseg/binary_io.hpp"

namespace choreoseg::nn {

namespace {

constexpr std::string_view kMagic = "DSEG";
constexpr std::string_view kMetaPrefix = "meta/";
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

void write_name(std::ostream& out, const std::string& name) {
  binary::write_u32(out, static_cast<std::uint32_t>(name.size()));
  binary::write_bytes(out, name);
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  binary::write_bytes(out, kMagic);
  out.put(static_cast<char>(kCheckpointVersion));
  for (const auto& [key, text] : ckpt.metadata) {
    write_name(out, std::string(kMetaPrefix) + key);
    binary::write_u32(out, 1);
    binary::write_u32(out, static_cast<std::uint32_t>(text.size()));
    binary::write_bytes(out, text);
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.starts_with(kMetaPrefix)) throw ConfigError("tensor name uses reserved prefix: " + name);
    write_name(out, name);
    binary::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) binary::write_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) binary::write_f32(out, static_cast<float>(v));
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  write_checkpoint(out, ckpt);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  if (binary::read_string(in, 4, "checkpoint header") != kMagic) {
    throw ParseError("checkpoint has wrong magic");
  }
  const int version = in.get();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t name_len = binary::read_u32(in, "checkpoint record");
    if (name_len > kMaxName) throw ParseError("checkpoint record name too long");
    std::string name = binary::read_string(in, name_len, "checkpoint record name");
    const std::uint32_t rank = binary::read_u32(in, "checkpoint record");
    if (rank > kMaxRank) throw ParseError("checkpoint record '" + name + "' has rank " +
                                          std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = binary::read_u32(in, "checkpoint dims");
    if (name.starts_with(kMetaPrefix)) {
      if (rank != 1) throw ParseError("metadata record '" + name + "' must have rank 1");
      ckpt.metadata[name.substr(kMetaPrefix.size())] =
          binary::read_string(in, shape[0], "checkpoint metadata");
      continue;
    }
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = binary::read_f32(in, "checkpoint payload");
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void append_adam_state(Checkpoint& ckpt, std::span<const ParamTensor> params,
                       const AdamState& state) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    ckpt.tensors.emplace_back("opt/m/" + params[k].name, state.m[k]);
    ckpt.tensors.emplace_back("opt/v/" + params[k].name, state.v[k]);
  }
  ckpt.tensors.emplace_back("opt/step_count",
                            Tensor({1}, {static_cast<double>(state.step_count)}));
  const auto& c = state.config;
  ckpt.tensors.emplace_back("opt/hyper", Tensor({4}, {c.lr, c.beta1, c.beta2, c.eps}));
}

AdamState extract_adam_state(const Checkpoint& ckpt, std::span<const ParamTensor> params) {
  AdamState state;
  const Tensor* hyper = ckpt.find("opt/hyper");
  const Tensor* steps = ckpt.find("opt/step_count");
  if (hyper == nullptr || steps == nullptr || hyper->size() != 4 || steps->size() != 1) {
    throw ParseError("checkpoint carries no optimizer state");
  }
  state.config = {(*hyper)[0], (*hyper)[1], (*hyper)[2], (*hyper)[3]};
  state.step_count = static_cast<std::uint64_t>((*steps)[0]);
  for (const auto& p : params) {
    const Tensor* m = ckpt.find("opt/m/" + p.name);
    const Tensor* v = ckpt.find("opt/v/" + p.name);
    if (m == nullptr || v == nullptr) throw ParseError("optimizer state missing for " + p.name);
    require_shape(*m, p.value.shape(), "optimizer first moment");
    require_shape(*v, p.value.shape(), "optimizer second moment");
    state.m.push_back(*m);
    state.v.push_back(*v);
  }
  return state;
}

}  // namespace choreoseg::nn
