#pragma once

#include <cstring>

#include "ght/model.hpp"
#include "ght/optim.hpp"

namespace ght {

// On-disk container (see docs/checkpoint_format.md for the byte layout).
// Round trips are bit-exact: raw little-endian value bytes are stored as-is.
struct CheckpointData {
  static constexpr uint32_t kVersion = 1;

  struct Blob {
    std::string name;
    uint8_t dtype = 1;  // 1 = f32, 2 = f64
    Shape shape;
    std::vector<uint8_t> raw;
  };

  std::string config_text;
  std::vector<Blob> params;
  bool has_mask = false;
  HeadMask mask;
  bool has_optimizer = false;
  int64_t optimizer_step = 0;
  std::vector<Blob> opt_m, opt_v;
  bool has_trainer_state = false;
  std::string trainer_state;
};

// Atomic (tmp + rename) writer and reader; throw IoError on malformed files.
void write_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint_file(const std::string& path);

std::string sha256_hex(const uint8_t* data, size_t len);
inline std::string sha256_hex(const std::vector<uint8_t>& v) {
  return sha256_hex(v.data(), v.size());
}

namespace detail {

template <class S>
CheckpointData::Blob tensor_blob(const std::string& name, const Tensor<S>& t) {
  CheckpointData::Blob b;
  b.name = name;
  b.dtype = sizeof(S) == 4 ? 1 : 2;
  b.shape = t.shape();
  b.raw.resize(t.data().size() * sizeof(S));
  std::memcpy(b.raw.data(), t.data().data(), b.raw.size());
  return b;
}

template <class S>
CheckpointData::Blob vector_blob(const std::string& name, const std::vector<S>& v) {
  CheckpointData::Blob b;
  b.name = name;
  b.dtype = sizeof(S) == 4 ? 1 : 2;
  b.shape = {static_cast<int64_t>(v.size())};
  b.raw.resize(v.size() * sizeof(S));
  std::memcpy(b.raw.data(), v.data(), b.raw.size());
  return b;
}

template <class S>
void blob_into(const CheckpointData::Blob& b, std::vector<S>& out) {
  uint8_t want = sizeof(S) == 4 ? 1 : 2;
  if (b.dtype != want)
    throw IoError(strprintf("checkpoint: blob '%s' holds dtype %d, expected %d", b.name.c_str(),
                            b.dtype, want));
  if (b.raw.size() != out.size() * sizeof(S))
    throw IoError(strprintf("checkpoint: blob '%s' holds %zu bytes, expected %zu", b.name.c_str(),
                            b.raw.size(), out.size() * sizeof(S)));
  std::memcpy(out.data(), b.raw.data(), b.raw.size());
}

}  // namespace detail

template <class S>
CheckpointData snapshot_model(TransformerModel<S>& model, const std::string& config_text,
                              Adam<S>* optimizer = nullptr,
                              const std::string& trainer_state = "") {
  CheckpointData ck;
  ck.config_text = config_text;
  for (auto& np : model.named_params()) ck.params.push_back(detail::tensor_blob(np.name, np.tensor));
  if (model.mask_installed()) {
    ck.has_mask = true;
    ck.mask = model.current_mask();
  }
  if (optimizer) {
    ck.has_optimizer = true;
    ck.optimizer_step = optimizer->step_count();
    auto& params = optimizer->params();
    for (size_t i = 0; i < params.size(); ++i) {
      ck.opt_m.push_back(detail::vector_blob(strprintf("m.%zu", i), optimizer->first_moments()[i]));
      ck.opt_v.push_back(detail::vector_blob(strprintf("v.%zu", i), optimizer->second_moments()[i]));
    }
  }
  if (!trainer_state.empty()) {
    ck.has_trainer_state = true;
    ck.trainer_state = trainer_state;
  }
  return ck;
}

// Restores parameters (resizing attention layers first when the checkpoint
// holds a structurally pruned model) and re-installs any head mask.
template <class S>
void restore_model(TransformerModel<S>& model, const CheckpointData& ck) {
  auto find_blob = [&](const std::string& name) -> const CheckpointData::Blob* {
    for (const auto& b : ck.params)
      if (b.name == name) return &b;
    return nullptr;
  };
  for (auto* attn : model.attention_layers()) {
    const auto* b = find_blob(attn->name() + ".w_q");
    if (!b) throw IoError(strprintf("checkpoint: missing parameter '%s.w_q'", attn->name().c_str()));
    if (b->shape.size() != 2) throw IoError("checkpoint: attention blob must be 2-d");
    int heads = static_cast<int>(b->shape[1] / attn->d_head());
    if (heads != attn->n_heads()) attn->resize_heads(heads);
  }
  auto named = model.named_params();
  if (named.size() != ck.params.size())
    throw IoError(strprintf("checkpoint: %zu parameters for a model with %zu", ck.params.size(),
                            named.size()));
  for (auto& np : named) {
    const auto* b = find_blob(np.name);
    if (!b) throw IoError(strprintf("checkpoint: missing parameter '%s'", np.name.c_str()));
    if (b->shape != np.tensor.shape())
      throw IoError(strprintf("checkpoint: parameter '%s' has shape %s, expected %s",
                              np.name.c_str(), shape_str(b->shape).c_str(),
                              shape_str(np.tensor.shape()).c_str()));
    detail::blob_into(*b, np.tensor.data());
  }
  if (ck.has_mask)
    model.install_head_mask(ck.mask);
  else
    model.clear_head_mask();
}

template <class S>
void restore_optimizer(Adam<S>& optimizer, const CheckpointData& ck) {
  if (!ck.has_optimizer) throw IoError("checkpoint: no optimizer section");
  optimizer.set_step_count(ck.optimizer_step);
  auto& m = optimizer.first_moments();
  auto& v = optimizer.second_moments();
  if (ck.opt_m.size() != m.size() || ck.opt_v.size() != v.size())
    throw IoError("checkpoint: optimizer section does not match the parameter list");
  for (size_t i = 0; i < m.size(); ++i) {
    detail::blob_into(ck.opt_m[i], m[i]);
    detail::blob_into(ck.opt_v[i], v[i]);
  }
}

// Deterministic parameter serialization for purity hashes.
template <class S>
std::vector<uint8_t> param_bytes(TransformerModel<S>& model) {
  std::vector<uint8_t> out;
  for (auto& np : model.named_params()) {
    out.insert(out.end(), np.name.begin(), np.name.end());
    const auto& d = np.tensor.data();
    size_t at = out.size();
    out.resize(at + d.size() * sizeof(S));
    std::memcpy(out.data() + at, d.data(), d.size() * sizeof(S));
  }
  return out;
}

template <class S>
std::string param_hash(TransformerModel<S>& model) {
  auto bytes = param_bytes(model);
  return sha256_hex(bytes);
}

}  // namespace ght
