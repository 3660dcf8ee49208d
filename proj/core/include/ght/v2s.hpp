#pragma once

#include <sstream>

#include "ght/metrics.hpp"

namespace ght {
namespace v2s {

enum class VoteMode { ZeroOne, ScoreSum };

inline const char* vote_mode_name(VoteMode m) {
  return m == VoteMode::ZeroOne ? "zero_one" : "score_sum";
}

// One 0-1 vote: for a single layer, FM kind and batch, the per-group
// argmax-eta heads carry a 1.
struct VoteVector {
  int layer = 0;
  group::FmKind kind = group::FmKind::Value;
  int64_t batch = 0;
  std::vector<uint8_t> bits;
};

struct LayerLedger {
  std::vector<VoteVector> votes;
  std::vector<double> eta_sum;  // per head, over all batches and FM kinds
};

struct VoteLedger {
  std::vector<LayerLedger> layers;
  std::vector<std::vector<int>> frozen_labels;  // group assignment for the whole epoch
  int64_t batches = 0;
};

// Per group, the head with the highest pattern score gets the 1; ties break
// toward the lowest head index. Every group must have at least one member.
inline std::vector<uint8_t> batch_votes(const std::vector<double>& eta,
                                        const std::vector<int>& labels, int c) {
  if (eta.size() != labels.size()) throw ShapeError("batch_votes: eta/labels length mismatch");
  std::vector<int> winner(static_cast<size_t>(c), -1);
  for (size_t i = 0; i < eta.size(); ++i) {
    int g = labels[i];
    if (g < 0 || g >= c) throw ContractError("batch_votes: label outside group range");
    int& w = winner[static_cast<size_t>(g)];
    if (w < 0 || eta[i] > eta[static_cast<size_t>(w)]) w = static_cast<int>(i);
  }
  for (int g = 0; g < c; ++g)
    if (winner[static_cast<size_t>(g)] < 0)
      throw ContractError(strprintf("batch_votes: group %d has no member head", g));
  std::vector<uint8_t> bits(eta.size(), 0);
  for (int g = 0; g < c; ++g) bits[static_cast<size_t>(winner[static_cast<size_t>(g)])] = 1;
  return bits;
}

// VOTE: count the 1s per head over the complete ledger and keep the
// highest-count head per group.
inline std::vector<uint8_t> vote(const LayerLedger& ledger, const std::vector<int>& labels, int c,
                                 int64_t expected_votes) {
  if (static_cast<int64_t>(ledger.votes.size()) != expected_votes)
    throw ContractError(strprintf("vote: ledger holds %zu votes, expected %lld",
                                  ledger.votes.size(), static_cast<long long>(expected_votes)));
  size_t k = labels.size();
  std::vector<int64_t> counts(k, 0);
  for (const auto& vv : ledger.votes) {
    if (vv.bits.size() != k) throw ShapeError("vote: vote vector length mismatch");
    for (size_t i = 0; i < k; ++i) counts[i] += vv.bits[i];
  }
  std::vector<int> winner(static_cast<size_t>(c), -1);
  for (size_t i = 0; i < k; ++i) {
    int g = labels[i];
    int& w = winner[static_cast<size_t>(g)];
    if (w < 0 || counts[i] > counts[static_cast<size_t>(w)]) w = static_cast<int>(i);
  }
  std::vector<uint8_t> bits(k, 0);
  for (int g = 0; g < c; ++g) {
    if (winner[static_cast<size_t>(g)] < 0)
      throw ContractError(strprintf("vote: group %d has no member head", g));
    bits[static_cast<size_t>(winner[static_cast<size_t>(g)])] = 1;
  }
  return bits;
}

// Alternative tally: summed raw pattern scores instead of 0-1 counts.
inline std::vector<uint8_t> score_sum_vote(const std::vector<double>& eta_sum,
                                           const std::vector<int>& labels, int c) {
  return batch_votes(eta_sum, labels, c);
}

struct PruneReport {
  HeadMask mask;
  std::vector<std::string> layer_names;
  std::vector<uint8_t> layer_active;
  std::vector<std::vector<int>> labels;          // frozen assignment per layer
  std::vector<std::vector<int64_t>> vote_counts; // per layer, per head
  std::vector<std::vector<double>> eta_sums;
  std::vector<std::vector<int>> survivors;       // per layer, surviving head ids
  int64_t params_before = 0, params_after = 0;
  int64_t flops_before = 0, flops_after = 0;
  int64_t batches = 0;
  VoteMode mode = VoteMode::ZeroOne;

  std::string to_text() const {
    std::ostringstream os;
    os << "ght.prune_report.version = 1\n";
    os << "vote.mode = " << vote_mode_name(mode) << "\n";
    os << "vote.batches = " << batches << "\n";
    os << "params.before = " << params_before << "\n";
    os << "params.after = " << params_after << "\n";
    double red = params_before > 0
                     ? 100.0 * (1.0 - static_cast<double>(params_after) / params_before)
                     : 0.0;
    os << "params.reduction_pct = " << strprintf("%.2f", red) << "\n";
    os << "flops.before = " << flops_before << "\n";
    os << "flops.after = " << flops_after << "\n";
    os << "layers = " << layer_names.size() << "\n";
    for (size_t l = 0; l < layer_names.size(); ++l) {
      os << "[layer " << l << "]\n";
      os << "name = " << layer_names[l] << "\n";
      os << "active = " << (layer_active[l] ? 1 : 0) << "\n";
      auto row = [&os](const char* key, auto&& values) {
        os << key << " =";
        for (const auto& v : values) os << " " << v;
        os << "\n";
      };
      row("labels", labels[l]);
      row("votes", vote_counts[l]);
      os << "eta_sum =";
      for (double e : eta_sums[l]) os << " " << strprintf("%.6f", e);
      os << "\n";
      row("survivors", survivors[l]);
      row("mask", std::vector<int>(mask.layers[l].begin(), mask.layers[l].end()));
    }
    return os.str();
  }
};

template <class S>
struct VotingBatch {
  IntTensor src;
  IntTensor tgt_in;
};

// Algorithm: freeze the model, iterate the whole training set once, and per
// batch collect one 0-1 vote per FM kind per attention layer under the frozen
// group assignment. Units for eta are the per-group means of the batch's
// pooled vectors in each kind's own space. After the epoch the tally builds
// the head mask and installs it.
template <class S>
PruneReport run_voting_epoch(TransformerModel<S>& model,
                             const std::vector<VotingBatch<S>>& batches,
                             const group::GroupingState& gs, VoteMode mode, bool rho_satisfied) {
  if (!rho_satisfied)
    throw ContractError("run_voting_epoch: refusing to vote before the hidden units converge");
  if (model.mask_installed())
    throw ContractError("run_voting_epoch: a head mask is already installed");
  if (batches.empty()) throw ContractError("run_voting_epoch: no batches");

  auto attn = model.attention_layers();
  if (gs.layers.size() != attn.size())
    throw ShapeError("run_voting_epoch: grouping state does not match the model");

  int c = gs.cfg.c;
  VoteLedger ledger;
  ledger.layers.resize(attn.size());
  ledger.frozen_labels.resize(attn.size());
  for (size_t l = 0; l < attn.size(); ++l) {
    if (!gs.layers[l].active) continue;
    if (gs.layers[l].labels.empty())
      throw ContractError("run_voting_epoch: no group assignment for an active layer");
    ledger.frozen_labels[l] = gs.layers[l].labels;
    ledger.layers[l].eta_sum.assign(static_cast<size_t>(attn[l]->n_heads()), 0.0);
  }

  const group::FmKind kinds[3] = {group::FmKind::Value, group::FmKind::Attention,
                                  group::FmKind::Output};
  NoGradGuard ng;
  for (size_t bi = 0; bi < batches.size(); ++bi) {
    ForwardOptions opt;
    opt.capture_fms = true;  // dropout off: the model is frozen
    ForwardResult<S> fr = model.forward(batches[bi].src, batches[bi].tgt_in, opt);
    for (size_t l = 0; l < attn.size(); ++l) {
      if (!gs.layers[l].active) continue;
      const auto& labels = ledger.frozen_labels[l];
      for (group::FmKind kind : kinds) {
        Tensor<S> pooled = group::pool_feature_maps(fr.fms[l], kind, 0);
        auto pts = group::rows_of(pooled);
        // per-group mean in this kind's space under the frozen assignment
        size_t dim = pts[0].size();
        std::vector<std::vector<double>> units(static_cast<size_t>(c),
                                               std::vector<double>(dim, 0.0));
        std::vector<int> counts(static_cast<size_t>(c), 0);
        for (size_t i = 0; i < pts.size(); ++i) {
          int g = labels[i];
          counts[static_cast<size_t>(g)]++;
          for (size_t j = 0; j < dim; ++j) units[static_cast<size_t>(g)][j] += pts[i][j];
        }
        for (int g = 0; g < c; ++g) {
          if (counts[static_cast<size_t>(g)] == 0)
            throw ContractError("run_voting_epoch: frozen assignment misses a group");
          for (auto& x : units[static_cast<size_t>(g)]) x /= counts[static_cast<size_t>(g)];
        }
        std::vector<double> eta(pts.size());
        for (size_t i = 0; i < pts.size(); ++i)
          eta[i] = group::pattern_score(pts[i], units[static_cast<size_t>(labels[i])]);
        VoteVector vv;
        vv.layer = static_cast<int>(l);
        vv.kind = kind;
        vv.batch = static_cast<int64_t>(bi);
        vv.bits = batch_votes(eta, labels, c);
        ledger.layers[l].votes.push_back(std::move(vv));
        for (size_t i = 0; i < eta.size(); ++i) ledger.layers[l].eta_sum[i] += eta[i];
      }
    }
  }
  ledger.batches = static_cast<int64_t>(batches.size());

  PruneReport report;
  report.mode = mode;
  report.batches = ledger.batches;
  report.mask.layers.resize(attn.size());
  for (size_t l = 0; l < attn.size(); ++l) {
    size_t k = static_cast<size_t>(attn[l]->n_heads());
    report.layer_names.push_back(attn[l]->name());
    report.layer_active.push_back(gs.layers[l].active ? 1 : 0);
    report.labels.push_back(ledger.frozen_labels[l]);
    std::vector<int64_t> counts(k, 0);
    for (const auto& vv : ledger.layers[l].votes)
      for (size_t i = 0; i < k; ++i) counts[i] += vv.bits[i];
    report.vote_counts.push_back(counts);
    report.eta_sums.push_back(gs.layers[l].active ? ledger.layers[l].eta_sum
                                                  : std::vector<double>(k, 0.0));
    if (!gs.layers[l].active) {
      report.mask.layers[l].assign(k, 1);
    } else if (mode == VoteMode::ZeroOne) {
      report.mask.layers[l] =
          vote(ledger.layers[l], ledger.frozen_labels[l], c, 3 * ledger.batches);
    } else {
      report.mask.layers[l] =
          score_sum_vote(ledger.layers[l].eta_sum, ledger.frozen_labels[l], c);
    }
    std::vector<int> surv;
    for (size_t i = 0; i < k; ++i)
      if (report.mask.layers[l][i]) surv.push_back(static_cast<int>(i));
    report.survivors.push_back(std::move(surv));
  }

  report.params_before = metrics::count_params(model);
  report.flops_before = metrics::estimate_flops(model);  // no mask installed yet
  TransformerModel<S> preview = model.structural_prune(report.mask);
  report.params_after = metrics::count_params(preview);
  report.flops_after = metrics::estimate_flops(preview);

  model.install_head_mask(report.mask);
  return report;
}

}  // namespace v2s
}  // namespace ght
