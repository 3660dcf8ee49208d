#include "ght/train.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace ght {
namespace train {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Stage1: return "stage1-gct";
    case Stage::Voting: return "voting";
    case Stage::Stage2: return "stage2-finetune";
    default: return "done";
  }
}

namespace {

Stage stage_from_name(const std::string& s) {
  if (s == "stage1-gct") return Stage::Stage1;
  if (s == "voting") return Stage::Voting;
  if (s == "stage2-finetune") return Stage::Stage2;
  if (s == "done") return Stage::Done;
  throw IoError(strprintf("unknown stage '%s'", s.c_str()));
}

// Mirrors TransformerModel::attention_layers() ordering.
std::vector<AttnKind> model_layer_kinds(const ModelConfig& cfg) {
  std::vector<AttnKind> kinds;
  if (cfg.arch == Arch::EncoderDecoder)
    for (int i = 0; i < cfg.layers; ++i) kinds.push_back(AttnKind::EncSelf);
  for (int i = 0; i < cfg.layers; ++i) {
    kinds.push_back(AttnKind::DecSelf);
    if (cfg.arch == Arch::EncoderDecoder) kinds.push_back(AttnKind::Cross);
  }
  return kinds;
}

template <class T>
std::string join_values(const std::vector<T>& v) {
  std::ostringstream os;
  os.precision(17);
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << " ";
    os << v[i];
  }
  return os.str();
}

}  // namespace

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)) {
  init_from_config();
}

void Trainer::init_from_config() {
  // vocabulary comes from the task for char-lm runs
  data_ = tasks::generate_dataset(cfg_.task, cfg_.train.seed);
  if (cfg_.task.kind == TaskKind::CharLm) {
    cfg_.model.arch = Arch::DecoderOnly;
    cfg_.model.vocab_size = data_.vocab;
  } else {
    cfg_.model.vocab_size = std::max<int64_t>(cfg_.model.vocab_size, data_.vocab);
  }
  if (cfg_.group.attn_pool_dim == 0) cfg_.group.attn_pool_dim = cfg_.task.max_len + 1;
  cfg_.validate();

  Rng init_rng(Rng::derive_seed(cfg_.train.seed, "init"));
  model_ = TransformerModel<Real>::build(cfg_.model, init_rng);
  grouping_ = group::GroupingState::init(cfg_.group, model_layer_kinds(cfg_.model),
                                         Rng::derive_seed(cfg_.train.seed, "huds"));

  std::vector<Tensor<Real>> params = model_.parameters();
  if (cfg_.group.variant == group::LossVariant::Categorical) {
    Rng cls_rng(Rng::derive_seed(cfg_.train.seed, "classifier"));
    classifiers_.resize(grouping_.layers.size());
    int64_t d = cfg_.group.primary_kind() == group::FmKind::Attention
                    ? cfg_.group.attn_pool_dim
                    : cfg_.model.d_head();
    for (size_t l = 0; l < classifiers_.size(); ++l) {
      if (!grouping_.layers[l].active) continue;
      classifiers_[l].init(d, cfg_.group.c, cls_rng);
      params.push_back(classifiers_[l].w);
      params.push_back(classifiers_[l].b);
    }
  }
  AdamConfig ac;
  ac.beta1 = cfg_.train.adam_beta1;
  ac.beta2 = cfg_.train.adam_beta2;
  ac.eps = cfg_.train.adam_eps;
  ac.weight_decay = cfg_.train.weight_decay;
  adam_ = Adam<Real>(std::move(params), ac);
  schedule_ = LrSchedule{cfg_.train.warmup_steps, cfg_.train.lr_peak};

  out_dir_ = cfg_.train.output_dir;
  metrics_path_ = out_dir_ + "/metrics.csv";
}

void Trainer::open_metrics_log() {
  report::ensure_dir(out_dir_);
  report::write_text_atomic(out_dir_ + "/config.txt", config_to_text(cfg_));
  bool fresh = global_step_ == 0;
  metrics_file_ = std::make_unique<std::ofstream>(
      metrics_path_, fresh ? (std::ios::out | std::ios::trunc) : (std::ios::out | std::ios::app));
  if (!*metrics_file_) throw IoError(strprintf("cannot open metrics log '%s'", metrics_path_.c_str()));
  if (fresh) *metrics_file_ << report::metrics_csv_header() << "\n";
  metrics_file_->flush();
}

void Trainer::write_row(const report::MetricsRow& row) {
  if (!metrics_file_) return;
  *metrics_file_ << report::metrics_csv_line(row) << "\n";
  metrics_file_->flush();
}

double Trainer::epoch_lr_step() const {
  if (stage_ == Stage::Stage2) {
    LrSchedule s{cfg_.train.finetune_warmup, cfg_.train.lr_peak};
    return s.lr(global_step_ - stage2_start_step_ + 1);
  }
  return schedule_.lr(global_step_ + 1);
}

Tensor<Real> Trainer::step_loss(const tasks::Batch& batch, bool with_gct, Rng& dropout_rng,
                                double* loss_task, double* loss_group,
                                ForwardResult<Real>* fr_out) {
  ForwardOptions opt;
  opt.training = true;
  opt.dropout_rng = &dropout_rng;
  opt.capture_fms = with_gct;
  ForwardResult<Real> fr = model_.forward(batch.src, batch.tgt_in, opt);

  Tensor<Real> loss = cross_entropy_label_smoothed(fr.logits, batch.tgt_out,
                                                   cfg_.train.label_smoothing, tasks::kPad);
  *loss_task = loss.item();
  *loss_group = 0.0;
  if (with_gct) {
    if (grouping_.batches_seen % cfg_.group.refresh_every == 0 || grouping_.batches_seen == 0)
      group::huds_refresh(grouping_, fr.fms);
    else
      grouping_.batches_seen++;
    bool loss_active = cfg_.group.alpha > 0.0 || cfg_.group.beta > 0.0;
    if (loss_active) {
      Tensor<Real> lz;
      if (cfg_.group.variant == group::LossVariant::Continuous) {
        lz = group::gct_loss_continuous(grouping_, fr.fms, cfg_.group.alpha, cfg_.group.beta);
      } else {
        Rng unused(0);
        lz = group::gct_loss_categorical(grouping_, fr.fms, classifiers_, unused,
                                         cfg_.group.alpha, cfg_.group.beta);
      }
      *loss_group = lz.item();
      loss = add(loss, lz);
    }
  }
  if (fr_out) *fr_out = std::move(fr);
  return loss;
}

void Trainer::log_row(int64_t step, double loss_task, double loss_group,
                      const ForwardResult<Real>* fr, const tasks::Batch& batch, bool with_gct) {
  report::MetricsRow row;
  row.step = step;
  row.loss_task = loss_task;
  row.loss_group = loss_group;
  double nan = std::numeric_limits<double>::quiet_NaN();
  row.homogeneity = nan;
  row.diversity = nan;
  row.sc = nan;
  row.di = nan;
  if (with_gct && fr) {
    NoGradGuard ng;
    group::FmKind kind = cfg_.group.primary_kind();
    std::vector<std::vector<std::vector<double>>> pooled;
    int last_active = -1;
    for (size_t l = 0; l < grouping_.layers.size(); ++l) {
      if (!grouping_.layers[l].active) continue;
      pooled.push_back(group::rows_of(
          group::pool_feature_maps(fr->fms[l], kind, cfg_.group.attn_pool_dim)));
      last_active = static_cast<int>(l);
    }
    if (last_active >= 0 && !grouping_.layers[static_cast<size_t>(last_active)].labels.empty()) {
      row.homogeneity = metrics::intra_homogeneity(pooled, grouping_);
      row.diversity = metrics::inter_diversity(grouping_);
      const auto& labels = grouping_.layers[static_cast<size_t>(last_active)].labels;
      auto sc = metrics::silhouette(pooled.back(), labels);
      auto di = metrics::dunn_index(pooled.back(), labels);
      row.sc = sc ? *sc : nan;
      row.di = di ? *di : nan;
    }
  }
  {
    NoGradGuard ng;
    metrics::EvalAccumulator acc;
    if (fr) {
      metrics::accumulate_task_metrics(acc, fr->logits, batch.tgt_out, tasks::kPad);
    } else {
      ForwardResult<Real> f2 = model_.forward(batch.src, batch.tgt_in, {});
      metrics::accumulate_task_metrics(acc, f2.logits, batch.tgt_out, tasks::kPad);
    }
    row.ppl = acc.perplexity();
    row.acc = acc.token_accuracy();
  }
  write_row(row);
}

void Trainer::train_epoch(bool with_gct) {
  Rng data_rng(Rng::derive_seed(cfg_.train.seed, "data", static_cast<uint64_t>(epoch_counter_)));
  Rng dropout_rng(
      Rng::derive_seed(cfg_.train.seed, "dropout", static_cast<uint64_t>(epoch_counter_)));
  auto batches = tasks::make_batches(data_.train, cfg_.train.batch_size, cfg_.model.arch, &data_rng);
  for (const auto& batch : batches) {
    double lt = 0.0, lg = 0.0;
    ForwardResult<Real> fr;
    Tensor<Real> loss = step_loss(batch, with_gct, dropout_rng, &lt, &lg, &fr);
    double total = static_cast<double>(loss.item());
    if (!std::isfinite(total)) {
      save("abort.ckpt");
      report::write_text_atomic(
          out_dir_ + "/abort.txt",
          strprintf("non-finite loss at step %lld (task %.6g group %.6g stage %s)\n",
                    static_cast<long long>(global_step_), lt, lg, stage_name(stage_)));
      throw ContractError(strprintf("training aborted: non-finite loss at step %lld; "
                                    "diagnostic snapshot written to %s",
                                    static_cast<long long>(global_step_), out_dir_.c_str()));
    }
    if (global_step_ % cfg_.train.log_every == 0) log_row(global_step_, lt, lg, &fr, batch, with_gct);
    adam_.zero_grad();
    loss.backward();
    if (cfg_.train.clip_norm > 0.0) adam_.clip_grad_norm(cfg_.train.clip_norm);
    adam_.step(epoch_lr_step());
    global_step_++;
  }
}

metrics::EvalAccumulator Trainer::evaluate(const std::vector<tasks::Sample>& split) {
  NoGradGuard ng;
  metrics::EvalAccumulator acc;
  auto batches = tasks::make_batches(split, cfg_.train.batch_size, cfg_.model.arch, nullptr);
  for (const auto& b : batches) {
    ForwardResult<Real> fr = model_.forward(b.src, b.tgt_in, {});
    metrics::accumulate_task_metrics(acc, fr.logits, b.tgt_out, tasks::kPad);
  }
  return acc;
}

GroupProbe Trainer::probe_groups(bool want_dump) {
  GroupProbe p;
  auto batches = tasks::make_batches(data_.valid, cfg_.train.batch_size, cfg_.model.arch, nullptr);
  if (batches.empty()) return p;
  NoGradGuard ng;
  ForwardOptions opt;
  opt.capture_fms = true;
  ForwardResult<Real> fr = model_.forward(batches[0].src, batches[0].tgt_in, opt);
  group::GroupingState gs = grouping_;  // probe on a copy; no training state disturbed
  group::huds_refresh(gs, fr.fms);
  group::FmKind kind = gs.cfg.primary_kind();
  std::vector<std::vector<std::vector<double>>> pooled;
  int last_active = -1;
  for (size_t l = 0; l < gs.layers.size(); ++l) {
    if (!gs.layers[l].active) continue;
    pooled.push_back(
        group::rows_of(group::pool_feature_maps(fr.fms[l], kind, gs.cfg.attn_pool_dim)));
    p.labels.push_back(gs.layers[l].labels);
    p.eta.push_back(gs.layers[l].eta);
    p.layer_names.push_back(fr.fms[l].name);
    last_active = static_cast<int>(l);
  }
  if (last_active < 0) return p;
  p.defined = true;
  p.homogeneity = metrics::intra_homogeneity(pooled, gs);
  p.diversity = metrics::inter_diversity(gs);
  const auto& labels = gs.layers[static_cast<size_t>(last_active)].labels;
  auto sc = metrics::silhouette(pooled.back(), labels);
  auto di = metrics::dunn_index(pooled.back(), labels);
  p.sc_defined = sc.has_value();
  p.di_defined = di.has_value();
  p.sc = sc.value_or(0.0);
  p.di = di.value_or(0.0);
  if (want_dump) {
    const group::FmKind kinds[3] = {group::FmKind::Value, group::FmKind::Attention,
                                    group::FmKind::Output};
    for (size_t l = 0; l < fr.fms.size(); ++l)
      for (group::FmKind kk : kinds) {
        auto rows = group::rows_of(group::pool_feature_maps(fr.fms[l], kk, 0));
        for (size_t h = 0; h < rows.size(); ++h) {
          report::FmDumpRecord rec;
          rec.layer = static_cast<int32_t>(l);
          rec.head = static_cast<int32_t>(h);
          rec.kind = group::fm_kind_name(kk)[0];
          rec.values = std::move(rows[h]);
          p.dump.push_back(std::move(rec));
        }
      }
  }
  return p;
}

void Trainer::run_voting_stage() {
  save("stage1.ckpt");
  auto batches = tasks::make_batches(data_.train, cfg_.train.batch_size, cfg_.model.arch, nullptr);
  std::vector<v2s::VotingBatch<Real>> vb;
  vb.reserve(batches.size());
  for (auto& b : batches) vb.push_back({b.src, b.tgt_in});
  prune_report_ = v2s::run_voting_epoch(model_, vb, grouping_, cfg_.train.vote_mode,
                                        group::convergence_check(grouping_));
  report::write_text_atomic(out_dir_ + "/prune_report.txt", prune_report_->to_text());
}

v2s::PruneReport Trainer::prune_now(bool force_rho) {
  bool rho = group::convergence_check(grouping_);
  if (!rho && !force_rho)
    throw ContractError("prune: rho is not satisfied; pass --force-rho to vote anyway");
  report::ensure_dir(out_dir_);
  if (!rho && force_rho)
    std::cerr << "warning: voting with unsatisfied rho (non-conforming run)\n";
  auto batches = tasks::make_batches(data_.train, cfg_.train.batch_size, cfg_.model.arch, nullptr);
  std::vector<v2s::VotingBatch<Real>> vb;
  for (auto& b : batches) vb.push_back({b.src, b.tgt_in});
  prune_report_ = v2s::run_voting_epoch(model_, vb, grouping_, cfg_.train.vote_mode, true);
  report::write_text_atomic(out_dir_ + "/prune_report.txt", prune_report_->to_text());
  return *prune_report_;
}

void Trainer::begin_finetune() {
  if (!model_.mask_installed())
    throw ContractError("finetune: the checkpoint has no installed head mask");
  if (stage_ == Stage::Stage1 || stage_ == Stage::Voting || stage_ == Stage::Done) {
    reset_for_stage2();
    stage_ = Stage::Stage2;
  }
}

void Trainer::reset_for_stage2() {
  AdamConfig ac = adam_.config();
  adam_ = Adam<Real>(model_.parameters(), ac);
  stage2_start_step_ = global_step_;
  best_valid_ = -1.0;
  patience_used_ = 0;
  stage_epoch_ = 0;
}

TrainResult Trainer::run() {
  open_metrics_log();
  while (stage_ != Stage::Done) {
    switch (stage_) {
      case Stage::Stage1: {
        train_epoch(/*with_gct=*/true);
        group::snapshot_epoch(grouping_);
        epoch_counter_++;
        stage_epoch_++;
        auto val = evaluate(data_.valid);
        double metric = val.token_accuracy();
        if (metric > best_valid_ + 1e-12) {
          best_valid_ = metric;
          patience_used_ = 0;
        } else {
          patience_used_++;
        }
        bool rho = group::convergence_check(grouping_);
        double worst_shift = 0.0;
        for (const auto& ls : grouping_.layers)
          if (ls.active && ls.snapshots_taken > 1 && std::isfinite(ls.last_shift))
            worst_shift = std::max(worst_shift, ls.last_shift);
        std::cout << strprintf(
            "epoch %d [%s] step %lld valid_acc %.4f valid_ppl %.3f shift %.4f rho %s\n",
            epoch_counter_, stage_name(stage_), static_cast<long long>(global_step_), metric,
            val.perplexity(), worst_shift, rho ? "yes" : "no");
        save("last.ckpt");
        if (cfg_.train.v2s && rho) {
          stage_ = Stage::Voting;
        } else if (patience_used_ >= cfg_.train.patience || stage_epoch_ >= cfg_.train.max_epochs) {
          stage_ = Stage::Done;
        }
        break;
      }
      case Stage::Voting: {
        run_voting_stage();
        reset_for_stage2();
        stage_ = Stage::Stage2;
        save("last.ckpt");
        break;
      }
      case Stage::Stage2: {
        train_epoch(/*with_gct=*/false);
        epoch_counter_++;
        stage_epoch_++;
        auto val = evaluate(data_.valid);
        double metric = val.token_accuracy();
        if (metric > best_valid_ + 1e-12) {
          best_valid_ = metric;
          patience_used_ = 0;
        } else {
          patience_used_++;
        }
        std::cout << strprintf("epoch %d [%s] step %lld valid_acc %.4f valid_ppl %.3f\n",
                               epoch_counter_, stage_name(stage_),
                               static_cast<long long>(global_step_), metric, val.perplexity());
        save("last.ckpt");
        if (patience_used_ >= cfg_.train.patience || stage_epoch_ >= cfg_.train.finetune_max_epochs)
          stage_ = Stage::Done;
        break;
      }
      case Stage::Done: break;
    }
  }
  save("final.ckpt");
  TrainResult r;
  r.final_stage = stage_;
  r.global_step = global_step_;
  r.best_valid_acc = best_valid_;
  r.test = evaluate(data_.test);
  r.pruned = prune_report_.has_value();
  return r;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

std::string Trainer::trainer_state_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "trainer.stage = " << stage_name(stage_) << "\n";
  os << "trainer.epoch = " << epoch_counter_ << "\n";
  os << "trainer.stage_epoch = " << stage_epoch_ << "\n";
  os << "trainer.step = " << global_step_ << "\n";
  os << "trainer.stage2_start = " << stage2_start_step_ << "\n";
  os << "trainer.best = " << best_valid_ << "\n";
  os << "trainer.patience_used = " << patience_used_ << "\n";
  os << "huds.rng = " << grouping_.rng.save_state() << "\n";
  os << "huds.batches = " << grouping_.batches_seen << "\n";
  for (size_t l = 0; l < grouping_.layers.size(); ++l) {
    const auto& ls = grouping_.layers[l];
    os << "layer." << l << ".active = " << (ls.active ? 1 : 0) << "\n";
    if (!ls.active) continue;
    os << "layer." << l << ".has_ema = " << (ls.has_ema ? 1 : 0) << "\n";
    os << "layer." << l << ".snapshots = " << ls.snapshots_taken << "\n";
    os << "layer." << l << ".last_shift = " << ls.last_shift << "\n";
    os << "layer." << l << ".labels = " << join_values(ls.labels) << "\n";
    if (ls.has_ema) {
      os << "layer." << l << ".dims = " << ls.ema_units.size() << " "
         << (ls.ema_units.empty() ? 0 : ls.ema_units[0].size()) << "\n";
      for (size_t j = 0; j < ls.ema_units.size(); ++j)
        os << "layer." << l << ".ema." << j << " = " << join_values(ls.ema_units[j]) << "\n";
      for (size_t j = 0; j < ls.epoch_snapshot.size(); ++j)
        os << "layer." << l << ".snap." << j << " = " << join_values(ls.epoch_snapshot[j]) << "\n";
      for (size_t j = 0; j < ls.fresh_units.size(); ++j)
        os << "layer." << l << ".fresh." << j << " = " << join_values(ls.fresh_units[j]) << "\n";
      os << "layer." << l << ".eta = " << join_values(ls.eta) << "\n";
    }
  }
  if (cfg_.group.variant == group::LossVariant::Categorical) {
    for (size_t l = 0; l < classifiers_.size(); ++l) {
      if (!classifiers_[l].initialized()) continue;
      os << "classifier." << l << ".w = ";
      os.precision(9);
      const auto& w = classifiers_[l].w.data();
      for (size_t i = 0; i < w.size(); ++i) os << (i ? " " : "") << w[i];
      os << "\n";
      os << "classifier." << l << ".b = ";
      const auto& b = classifiers_[l].b.data();
      for (size_t i = 0; i < b.size(); ++i) os << (i ? " " : "") << b[i];
      os << "\n";
      os.precision(17);
    }
  }
  return os.str();
}

void Trainer::load_trainer_state(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto parse_doubles = [](const std::string& s) {
    std::istringstream v(s);
    std::vector<double> out;
    double x;
    while (v >> x) out.push_back(x);
    return out;
  };
  while (std::getline(is, line)) {
    size_t eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 3);
    if (key == "trainer.stage") stage_ = stage_from_name(val);
    else if (key == "trainer.epoch") epoch_counter_ = std::stoi(val);
    else if (key == "trainer.stage_epoch") stage_epoch_ = std::stoi(val);
    else if (key == "trainer.step") global_step_ = std::stoll(val);
    else if (key == "trainer.stage2_start") stage2_start_step_ = std::stoll(val);
    else if (key == "trainer.best") best_valid_ = std::stod(val);
    else if (key == "trainer.patience_used") patience_used_ = std::stoi(val);
    else if (key == "huds.rng") grouping_.rng.load_state(val);
    else if (key == "huds.batches") grouping_.batches_seen = std::stoll(val);
    else if (key.rfind("layer.", 0) == 0) {
      size_t dot1 = key.find('.', 6);
      size_t l = static_cast<size_t>(std::stoul(key.substr(6, dot1 - 6)));
      if (l >= grouping_.layers.size()) throw IoError("trainer state: layer index out of range");
      auto& ls = grouping_.layers[l];
      std::string field = key.substr(dot1 + 1);
      if (field == "active") ls.active = val == "1";
      else if (field == "has_ema") ls.has_ema = val == "1";
      else if (field == "snapshots") ls.snapshots_taken = std::stoi(val);
      else if (field == "last_shift") ls.last_shift = std::stod(val);
      else if (field == "labels") {
        auto d = parse_doubles(val);
        ls.labels.assign(d.size(), 0);
        for (size_t i = 0; i < d.size(); ++i) ls.labels[i] = static_cast<int>(d[i]);
      } else if (field == "dims") {
        auto d = parse_doubles(val);
        ls.ema_units.assign(static_cast<size_t>(d[0]), std::vector<double>(static_cast<size_t>(d[1]), 0.0));
        ls.epoch_snapshot = ls.ema_units;
        ls.fresh_units = ls.ema_units;
      } else if (field == "eta") {
        ls.eta = parse_doubles(val);
      } else if (field.rfind("ema.", 0) == 0) {
        ls.ema_units[std::stoul(field.substr(4))] = parse_doubles(val);
      } else if (field.rfind("snap.", 0) == 0) {
        ls.epoch_snapshot[std::stoul(field.substr(5))] = parse_doubles(val);
      } else if (field.rfind("fresh.", 0) == 0) {
        ls.fresh_units[std::stoul(field.substr(6))] = parse_doubles(val);
      }
    } else if (key.rfind("classifier.", 0) == 0) {
      size_t dot1 = key.find('.', 11);
      size_t l = static_cast<size_t>(std::stoul(key.substr(11, dot1 - 11)));
      std::string field = key.substr(dot1 + 1);
      auto d = parse_doubles(val);
      auto& dst = field == "w" ? classifiers_[l].w.data() : classifiers_[l].b.data();
      if (dst.size() != d.size()) throw IoError("trainer state: classifier size mismatch");
      for (size_t i = 0; i < d.size(); ++i) dst[i] = static_cast<Real>(d[i]);
    }
  }
}

void Trainer::save(const std::string& name) {
  report::ensure_dir(out_dir_);
  CheckpointData ck = snapshot_model(model_, config_to_text(cfg_, /*include_output_dir=*/false),
                                     &adam_, trainer_state_text());
  write_checkpoint_file(out_dir_ + "/" + name, ck);
}

std::unique_ptr<Trainer> Trainer::from_checkpoint(const std::string& path,
                                                  const std::string& output_dir_override) {
  CheckpointData ck = read_checkpoint_file(path);
  RunConfig cfg = parse_config_text(ck.config_text);
  if (!output_dir_override.empty())
    cfg.train.output_dir = output_dir_override;
  else if (cfg.train.output_dir.empty())
    cfg.train.output_dir = "runs/resumed";
  auto t = std::unique_ptr<Trainer>(new Trainer(cfg));
  restore_model(t->model_, ck);
  if (ck.has_optimizer) restore_optimizer(t->adam_, ck);
  if (ck.has_trainer_state) t->load_trainer_state(ck.trainer_state);
  return t;
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

std::vector<SweepCell> run_sweep(const RunConfig& base, SweepAxis axis,
                                 const std::vector<double>& grid) {
  std::vector<RunConfig> cells;
  std::vector<SweepCell> results;
  if (axis == SweepAxis::AlphaBetaGrid) {
    if (grid.empty()) throw ConfigError("sweep: alpha-beta grid needs at least one value");
    for (double a : grid)
      for (double b : grid) {
        RunConfig c = base;
        c.group.alpha = a;
        c.group.beta = b;
        cells.push_back(c);
        SweepCell cell;
        cell.label = strprintf("alpha=%.3g beta=%.3g", a, b);
        cell.alpha = a;
        cell.beta = b;
        cell.c = base.group.c;
        results.push_back(cell);
      }
  } else {
    for (int c = 1; c <= base.model.heads; ++c) {
      RunConfig cc = base;
      cc.group.c = c;
      cells.push_back(cc);
      SweepCell cell;
      cell.label = strprintf("C=%d", c);
      cell.alpha = base.group.alpha;
      cell.beta = base.group.beta;
      cell.c = c;
      results.push_back(cell);
    }
  }

  for (size_t i = 0; i < cells.size(); ++i) {
    RunConfig& cfg = cells[i];
    cfg.train.seed = Rng::derive_seed(base.train.seed, "sweep", i);
    cfg.train.output_dir = base.train.output_dir + strprintf("/cell_%02zu", i);
    results[i].seed = cfg.train.seed;
    Trainer t(cfg);
    TrainResult r = t.run();
    GroupProbe p = t.probe_groups();
    results[i].sc_defined = p.sc_defined;
    results[i].di_defined = p.di_defined;
    results[i].sc = p.sc;
    results[i].di = p.di;
    results[i].homogeneity = p.homogeneity;
    results[i].diversity = p.diversity;
    results[i].acc = r.test.token_accuracy();
    results[i].ppl = r.test.perplexity();
    std::cout << strprintf("sweep cell %zu/%zu %s: acc %.4f sc %s\n", i + 1, cells.size(),
                           results[i].label.c_str(), results[i].acc,
                           results[i].sc_defined ? strprintf("%.4f", results[i].sc).c_str() : "n/a");
  }
  return results;
}

std::string sweep_report_csv(const std::vector<SweepCell>& cells) {
  std::string out = "label,alpha,beta,c,seed,sc,di,homogeneity,diversity,acc,ppl\n";
  for (const auto& c : cells) {
    out += strprintf("%s,%.9g,%.9g,%d,%llu,", c.label.c_str(), c.alpha, c.beta, c.c,
                     static_cast<unsigned long long>(c.seed));
    out += c.sc_defined ? strprintf("%.9g,", c.sc) : "n/a,";
    out += c.di_defined ? strprintf("%.9g,", c.di) : "n/a,";
    out += strprintf("%.9g,%.9g,%.9g,%.9g\n", c.homogeneity, c.diversity, c.acc, c.ppl);
  }
  return out;
}

}  // namespace train
}  // namespace ght
