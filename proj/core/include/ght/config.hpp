#pragma once

#include <map>
#include <string>

#include "ght/grouping.hpp"
#include "ght/model.hpp"
#include "ght/v2s.hpp"

namespace ght {

// Distinguished from other config failures so the CLI can exit differently.
struct UnknownKeyError : ConfigError {
  using ConfigError::ConfigError;
};

enum class TaskKind { Copy, Reverse, CharLm };

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  int64_t vocab = 16;  // includes pad/bos/eos
  int min_len = 5;
  int max_len = 12;
  int64_t samples = 2000;
  std::string corpus;  // char_lm only

  void validate() const {
    if (kind != TaskKind::CharLm && vocab < 4)
      throw ConfigError("task: vocab must be >= 4 (pad/bos/eos are reserved)");
    if (min_len < 1 || max_len < min_len) throw ConfigError("task: bad length range");
    if (samples < 10) throw ConfigError("task: need at least 10 samples");
    if (kind == TaskKind::CharLm && corpus.empty())
      throw ConfigError("task: char_lm needs task.corpus");
  }
};

struct TrainConfig {
  uint64_t seed = 1;
  int batch_size = 32;
  int max_epochs = 40;
  int patience = 5;  // early stop, epochs without validation improvement
  double lr_peak = 5e-4;
  int64_t warmup_steps = 400;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double clip_norm = 0.0;  // 0 = off
  double label_smoothing = 0.1;
  int log_every = 20;
  bool v2s = true;
  v2s::VoteMode vote_mode = v2s::VoteMode::ZeroOne;
  int64_t finetune_warmup = 100;
  int finetune_max_epochs = 10;
  std::string output_dir = "runs/default";

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (lr_peak <= 0.0) throw ConfigError("train: lr_peak must be > 0");
    if (warmup_steps < 1) throw ConfigError("train: warmup_steps must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw ConfigError("train: label_smoothing must be in [0, 1)");
    if (log_every < 1) throw ConfigError("train: log_every must be >= 1");
  }
};

// Everything tunable for one run. Serializes to a flat key-value file with
// model.* / group.* / train.* / task.* sections.
struct RunConfig {
  std::string preset;  // "", tiny, small, paper-base
  ModelConfig model;
  group::GroupConfig group;
  TrainConfig train;
  TaskSpec task;

  void validate() const {
    model.validate();
    group.validate(model.heads);
    train.validate();
    task.validate();
  }
};

// Desk-scale presets plus the accounting-only paper-base architecture.
RunConfig preset_config(const std::string& name);

// Parse the flat key-value text (applies any model.preset first, then the
// explicit keys in file order). Unknown keys throw ConfigError naming them.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Apply one `section.key=value` override.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Serialize every key. `include_output_dir=false` is used inside checkpoints
// so that byte-identical runs in different directories stay byte-identical.
std::string config_to_text(const RunConfig& cfg, bool include_output_dir = true);

}  // namespace ght
