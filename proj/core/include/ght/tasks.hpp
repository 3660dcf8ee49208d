#pragma once

#include "ght/config.hpp"
#include "ght/tensor.hpp"

namespace ght {
namespace tasks {

// Reserved ids; task symbols start at 3.
constexpr int32_t kPad = 0;
constexpr int32_t kBos = 1;
constexpr int32_t kEos = 2;

struct Sample {
  std::vector<int32_t> src;  // without eos; empty for decoder-only tasks
  std::vector<int32_t> tgt;  // without bos/eos
};

struct Dataset {
  TaskKind kind = TaskKind::Copy;
  int64_t vocab = 0;  // model vocabulary size implied by the task
  std::vector<Sample> train, valid, test;
  std::string charset;  // char_lm: index -> character
};

// Deterministic under seed; split 8:1:1 in generation order.
Dataset generate_dataset(const TaskSpec& spec, uint64_t seed);

struct Batch {
  IntTensor src;      // [B, S+1] with eos; numel 0 for decoder-only
  IntTensor tgt_in;   // [B, T+1], bos-shifted
  IntTensor tgt_out;  // [B, T+1], ends with eos
};

// Same-length bucket batching; all batches are rectangular, so no padding is
// needed inside a batch. Order is deterministic without an rng and shuffled
// (buckets and members) with one.
std::vector<Batch> make_batches(const std::vector<Sample>& data, int batch_size, Arch arch,
                                Rng* shuffle_rng);

}  // namespace tasks
}  // namespace ght
