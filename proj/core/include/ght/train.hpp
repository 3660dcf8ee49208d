#pragma once

#include <fstream>
#include <memory>
#include <optional>

#include "ght/checkpoint.hpp"
#include "ght/config.hpp"
#include "ght/metrics.hpp"
#include "ght/report.hpp"
#include "ght/tasks.hpp"
#include "ght/v2s.hpp"

namespace ght {
namespace train {

using Real = float;

// stage1-gct -> voting -> stage2-finetune -> done. Runs without V2S stop at
// stage1 -> done.
enum class Stage { Stage1, Voting, Stage2, Done };
const char* stage_name(Stage s);

struct TrainResult {
  Stage final_stage = Stage::Done;
  int64_t global_step = 0;
  double best_valid_acc = 0.0;
  metrics::EvalAccumulator test;
  bool pruned = false;
};

// Snapshot of group structure from one probe batch (used for logging, the
// sweep report, and `inspect`).
struct GroupProbe {
  bool defined = false;
  double sc = 0.0, di = 0.0;
  bool sc_defined = false, di_defined = false;
  double homogeneity = 0.0, diversity = 0.0;
  std::vector<std::vector<int>> labels;        // per active layer
  std::vector<std::vector<double>> eta;        // per active layer
  std::vector<std::string> layer_names;
  std::vector<report::FmDumpRecord> dump;      // pooled vectors, all kinds
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  // Rebuild a trainer from a checkpoint; the run continues at the next epoch.
  static std::unique_ptr<Trainer> from_checkpoint(const std::string& path,
                                                  const std::string& output_dir_override = "");

  // Run the stage machine to completion, writing all artifacts.
  TrainResult run();

  // One voting epoch now (the `prune` subcommand). Refuses while rho is
  // unsatisfied unless forced; a forced run is logged as non-conforming.
  v2s::PruneReport prune_now(bool force_rho);

  // Move a pruned model into stage 2 (fresh optimizer, restarted schedule).
  void begin_finetune();

  metrics::EvalAccumulator evaluate(const std::vector<tasks::Sample>& split);
  GroupProbe probe_groups(bool want_dump = false);

  void save(const std::string& name);

  TransformerModel<Real>& model() { return model_; }
  group::GroupingState& grouping() { return grouping_; }
  const tasks::Dataset& dataset() const { return data_; }
  const RunConfig& config() const { return cfg_; }
  Stage stage() const { return stage_; }
  int64_t global_step() const { return global_step_; }
  const std::string& metrics_path() const { return metrics_path_; }
  const std::optional<v2s::PruneReport>& prune_report() const { return prune_report_; }

 private:
  void init_from_config();
  void open_metrics_log();
  void train_epoch(bool with_gct);
  double epoch_lr_step() const;
  Tensor<Real> step_loss(const tasks::Batch& batch, bool with_gct, Rng& dropout_rng,
                         double* loss_task, double* loss_group, ForwardResult<Real>* fr_out);
  void log_row(int64_t step, double loss_task, double loss_group,
               const ForwardResult<Real>* fr, const tasks::Batch& batch, bool with_gct);
  void run_voting_stage();
  void reset_for_stage2();
  std::string trainer_state_text() const;
  void load_trainer_state(const std::string& text);
  void write_row(const report::MetricsRow& row);

  RunConfig cfg_;
  tasks::Dataset data_;
  TransformerModel<Real> model_;
  Adam<Real> adam_;
  LrSchedule schedule_;
  group::GroupingState grouping_;
  std::vector<group::GroupClassifier<Real>> classifiers_;

  Stage stage_ = Stage::Stage1;
  int64_t global_step_ = 0;
  int epoch_counter_ = 0;   // total epochs finished, all stages
  int stage_epoch_ = 0;     // epochs finished in the current stage
  int64_t stage2_start_step_ = 0;
  double best_valid_ = -1.0;
  int patience_used_ = 0;
  std::optional<v2s::PruneReport> prune_report_;

  std::string out_dir_;
  std::string metrics_path_;
  std::unique_ptr<std::ofstream> metrics_file_;
};

// Sweep over an alpha-beta grid or over the group count; each cell runs with
// a derived seed and reports final compactness and task metrics.
struct SweepCell {
  std::string label;
  double alpha = 0.0, beta = 0.0;
  int c = 0;
  uint64_t seed = 0;
  bool sc_defined = false, di_defined = false;
  double sc = 0.0, di = 0.0;
  double homogeneity = 0.0, diversity = 0.0;
  double acc = 0.0, ppl = 0.0;
};

enum class SweepAxis { AlphaBetaGrid, GroupCount };

std::vector<SweepCell> run_sweep(const RunConfig& base, SweepAxis axis,
                                 const std::vector<double>& grid);
std::string sweep_report_csv(const std::vector<SweepCell>& cells);

}  // namespace train
}  // namespace ght
