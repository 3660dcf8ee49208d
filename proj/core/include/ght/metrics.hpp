#pragma once

#include <optional>

#include "ght/grouping.hpp"
#include "ght/model.hpp"

namespace ght {
namespace metrics {

enum class DistanceMetric { Cosine, Euclidean };

inline double point_distance(const std::vector<double>& a, const std::vector<double>& b,
                             DistanceMetric m) {
  if (m == DistanceMetric::Euclidean) return std::sqrt(group::detail::sqdist(a, b));
  return 1.0 - group::cosine(a, b);
}

// Mean silhouette over all points, (b - a) / max(a, b). Points in singleton
// clusters contribute 0, as does the 0/0 case of coincident points. A single
// cluster has no silhouette: nullopt.
inline std::optional<double> silhouette(const std::vector<std::vector<double>>& points,
                                        const std::vector<int>& labels,
                                        DistanceMetric metric = DistanceMetric::Cosine) {
  if (points.size() != labels.size() || points.empty())
    throw ShapeError("silhouette: points/labels mismatch");
  int c = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> count(static_cast<size_t>(c), 0);
  for (int l : labels) count[static_cast<size_t>(l)]++;
  int nonempty = 0;
  for (int cnt : count) nonempty += cnt > 0 ? 1 : 0;
  if (nonempty < 2) return std::nullopt;

  size_t n = points.size();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    int li = labels[i];
    if (count[static_cast<size_t>(li)] <= 1) continue;  // singleton contributes 0
    std::vector<double> mean_d(static_cast<size_t>(c), 0.0);
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      mean_d[static_cast<size_t>(labels[j])] += point_distance(points[i], points[j], metric);
    }
    double a = mean_d[static_cast<size_t>(li)] / (count[static_cast<size_t>(li)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int g = 0; g < c; ++g) {
      if (g == li || count[static_cast<size_t>(g)] == 0) continue;
      b = std::min(b, mean_d[static_cast<size_t>(g)] / count[static_cast<size_t>(g)]);
    }
    double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

// Dunn's index: min inter-cluster point distance / max intra-cluster
// diameter. Separated point-clusters (zero diameter) give +infinity;
// a single cluster gives nullopt.
inline std::optional<double> dunn_index(const std::vector<std::vector<double>>& points,
                                        const std::vector<int>& labels,
                                        DistanceMetric metric = DistanceMetric::Cosine) {
  if (points.size() != labels.size() || points.empty())
    throw ShapeError("dunn_index: points/labels mismatch");
  int c = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> count(static_cast<size_t>(c), 0);
  for (int l : labels) count[static_cast<size_t>(l)]++;
  int nonempty = 0;
  for (int cnt : count) nonempty += cnt > 0 ? 1 : 0;
  if (nonempty < 2) return std::nullopt;

  double min_inter = std::numeric_limits<double>::infinity();
  double max_diam = 0.0;
  size_t n = points.size();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double d = point_distance(points[i], points[j], metric);
      if (labels[i] == labels[j])
        max_diam = std::max(max_diam, d);
      else
        min_inter = std::min(min_inter, d);
    }
  if (max_diam <= 0.0) return std::numeric_limits<double>::infinity();
  return min_inter / max_diam;
}

// The two group-constraint terms at alpha = beta = 1, evaluated on detached
// state (same formulas the loss uses; cross-checked in tests). `use_ema`
// evaluates against the EMA-stabilized units instead of the batch-fresh ones;
// per-step trend logging uses that form so single-batch clustering jitter
// does not masquerade as a trend.
inline double intra_homogeneity(const std::vector<std::vector<std::vector<double>>>& pooled,
                                const group::GroupingState& st, bool use_ema = false) {
  double sum = 0.0;
  int64_t k = 0;
  int n_active = 0;
  size_t pi = 0;
  for (const auto& ls : st.layers) {
    if (!ls.active) continue;
    const auto& pts = pooled[pi++];
    const auto& units = use_ema ? ls.ema_units : ls.fresh_units;
    n_active++;
    k = static_cast<int64_t>(pts.size());
    for (size_t i = 0; i < pts.size(); ++i)
      sum += group::phi_value(pts[i], units[static_cast<size_t>(ls.labels[i])]);
  }
  if (n_active == 0 || k == 0) return 0.0;
  return sum / static_cast<double>(k * n_active);
}

inline double inter_diversity(const group::GroupingState& st, bool use_ema = false) {
  double sum = 0.0;
  int n_active = 0;
  int64_t pairs = static_cast<int64_t>(st.cfg.c) * (st.cfg.c - 1) / 2;
  if (pairs == 0) return 0.0;
  for (const auto& ls : st.layers) {
    if (!ls.active) continue;
    const auto& units = use_ema ? ls.ema_units : ls.fresh_units;
    if (units.empty()) continue;
    n_active++;
    for (size_t j1 = 0; j1 + 1 < units.size(); ++j1)
      for (size_t j2 = j1 + 1; j2 < units.size(); ++j2)
        sum += group::phi_value(units[j1], units[j2]);
  }
  if (n_active == 0) return 0.0;
  return -sum / static_cast<double>(pairs * n_active);
}

// ---------------------------------------------------------------------------
// efficiency accounting
// ---------------------------------------------------------------------------

// Exact parameter count from the live tensors. Embedding tables (and the
// vocabulary projection, tied or not) are vocabulary-sized and excluded by
// default, matching the usual non-embedding accounting.
template <class S>
int64_t count_params(TransformerModel<S>& model, bool exclude_embeddings = true) {
  int64_t total = 0;
  for (auto& np : model.named_params()) {
    if (exclude_embeddings &&
        (np.name.rfind("embed.", 0) == 0 || np.name.rfind("generator.", 0) == 0))
      continue;
    total += np.tensor.numel();
  }
  return total;
}

// Closed-form parameter count for a uniform head count per layer; used to
// cross-check count_params in tests and reports.
inline int64_t closed_form_params(const ModelConfig& cfg, int heads_per_layer) {
  int64_t d = cfg.d_model, f = cfg.d_ff;
  int64_t inner = static_cast<int64_t>(heads_per_layer) * (cfg.d_model / cfg.heads);
  int64_t attn = 3 * d * inner + inner * d;        // q, k, v, out; no biases
  int64_t ffn = d * f + f + f * d + d;             // two affine maps
  int64_t ln = 2 * d;
  int64_t enc_layer = attn + ffn + 2 * ln;
  int64_t dec_layer_ed = 2 * attn + ffn + 3 * ln;
  int64_t dec_layer_do = attn + ffn + 2 * ln;
  if (cfg.arch == Arch::EncoderDecoder)
    return cfg.layers * (enc_layer + dec_layer_ed) + 2 * ln;  // + final norms
  return cfg.layers * dec_layer_do + ln;
}

// Analytic FLOPs (2 * multiply-accumulates) of one teacher-forced forward at
// a fixed input length, counting the projection, attention-score, FFN and
// vocabulary-head matrix products. Per block, with source length S, target
// length T, surviving heads h, head dim dh:
//   self attention:  3*T*d*(h*dh) + 2*h*T*T*dh + T*(h*dh)*d
//   cross attention: (2*T + 2*S)*d*(h*dh)/2 ... q/out on T, k/v on S
//   feed-forward:    2*T*d*f
//   vocab head:      T*d*V
template <class S>
int64_t estimate_flops(const TransformerModel<S>& model, int64_t input_len = 30) {
  const ModelConfig& cfg = model.config();
  int64_t d = cfg.d_model;
  int64_t Tq = input_len, Ts = input_len;
  int64_t macs = 0;
  for (const auto* attn : model.attention_layers()) {
    int64_t h = attn->n_heads();
    if (!attn->head_mask().empty()) {
      h = 0;
      for (uint8_t b : attn->head_mask()) h += b;
    }
    int64_t dh = attn->d_head();
    int64_t inner = h * dh;
    int64_t tq = Tq, tk = Tq;
    if (attn->kind() == AttnKind::Cross) tk = Ts;
    // projections: q and out on the query side, k and v on the key side
    macs += tq * d * inner * 2 + tk * d * inner * 2;
    // scores and weighted sum
    macs += 2 * h * tq * tk * dh;
  }
  int64_t ffn_blocks = cfg.arch == Arch::EncoderDecoder ? 2 * cfg.layers : cfg.layers;
  macs += ffn_blocks * 2 * input_len * d * cfg.d_ff;
  macs += input_len * d * cfg.vocab_size;  // vocabulary head
  return 2 * macs;
}

// ---------------------------------------------------------------------------
// task metrics
// ---------------------------------------------------------------------------

struct EvalAccumulator {
  double ce_sum = 0.0;  // unsmoothed cross entropy, summed over tokens
  int64_t tokens = 0;
  int64_t correct = 0;
  int64_t sequences = 0;
  int64_t exact = 0;

  double perplexity() const { return tokens > 0 ? std::exp(ce_sum / tokens) : 0.0; }
  double token_accuracy() const {
    return tokens > 0 ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  }
  double exact_match() const {
    return sequences > 0 ? static_cast<double>(exact) / static_cast<double>(sequences) : 0.0;
  }
};

// logits [B, T, V], targets [B, T]; pad positions carry `ignore_index`.
template <class S>
void accumulate_task_metrics(EvalAccumulator& acc, const Tensor<S>& logits,
                             const IntTensor& targets, int32_t ignore_index = -1) {
  if (logits.dim() != 3) throw ShapeError("task_metrics: logits must be [B, T, V]");
  int64_t b = logits.shape()[0], t = logits.shape()[1], v = logits.shape()[2];
  if (targets.numel() != b * t) throw ShapeError("task_metrics: target extent mismatch");
  const auto& x = logits.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    bool seq_ok = true;
    for (int64_t ti = 0; ti < t; ++ti) {
      int32_t tgt = targets.data[static_cast<size_t>(bi * t + ti)];
      if (tgt == ignore_index) continue;
      const S* row = x.data() + (bi * t + ti) * v;
      S mx = row[0];
      int64_t argmax = 0;
      for (int64_t c = 1; c < v; ++c)
        if (row[c] > mx) {
          mx = row[c];
          argmax = c;
        }
      double z = 0.0;
      for (int64_t c = 0; c < v; ++c) z += std::exp(static_cast<double>(row[c] - mx));
      double logp = static_cast<double>(row[tgt] - mx) - std::log(z);
      acc.ce_sum += -logp;
      acc.tokens++;
      if (argmax == tgt)
        acc.correct++;
      else
        seq_ok = false;
    }
    acc.sequences++;
    if (seq_ok) acc.exact++;
  }
}

}  // namespace metrics
}  // namespace ght
