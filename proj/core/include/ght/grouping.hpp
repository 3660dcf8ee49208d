#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>

#include "ght/model.hpp"

namespace ght {
namespace group {

enum class FmKind { Value, Attention, Output };

inline const char* fm_kind_name(FmKind k) {
  switch (k) {
    case FmKind::Value: return "v";
    case FmKind::Attention: return "a";
    default: return "o";
  }
}

enum class LossVariant { Continuous, Categorical };

struct GroupConfig {
  int c = 2;
  double alpha = 0.5;
  double beta = 0.5;
  double tau_v = 1.0, tau_a = 0.0, tau_o = 0.0;
  LossVariant variant = LossVariant::Continuous;
  double rho_epsilon = 0.01;
  double ema_decay = 0.9;
  int refresh_every = 1;  // batches between HUDS refreshes
  int kmeans_restarts = 16;
  int kmeans_max_iters = 100;
  int attn_pool_dim = 0;  // fixed length attention-FM pooled vectors are padded to
  bool apply_enc_self = true, apply_dec_self = true, apply_cross = true;

  FmKind primary_kind() const {
    if (tau_v >= tau_a && tau_v >= tau_o) return FmKind::Value;
    if (tau_a >= tau_o) return FmKind::Attention;
    return FmKind::Output;
  }

  bool applies_to(AttnKind k) const {
    switch (k) {
      case AttnKind::EncSelf: return apply_enc_self;
      case AttnKind::DecSelf: return apply_dec_self;
      default: return apply_cross;
    }
  }

  void validate(int heads) const {
    if (c < 1 || c > heads)
      throw ConfigError(strprintf("group: need 1 <= C <= k, got C=%d with k=%d", c, heads));
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("group: alpha and beta must be >= 0");
    if (tau_v < 0.0 || tau_a < 0.0 || tau_o < 0.0)
      throw ConfigError("group: tau weights must be >= 0");
    if (tau_v + tau_a + tau_o <= 0.0) throw ConfigError("group: at least one tau must be > 0");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("group: ema_decay must be in [0,1)");
    if (rho_epsilon <= 0.0) throw ConfigError("group: rho_epsilon must be > 0");
    if (refresh_every < 1) throw ConfigError("group: refresh_every must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

constexpr double kNormEps = 1e-12;

// Differentiable row-wise L2 normalization with a guarded denominator.
template <class S>
Tensor<S> normalize_rows(const Tensor<S>& x) {
  Tensor<S> n = sqrt_op(sum_axis(mul(x, x), -1, /*keepdim=*/true));
  return div(x, add_scalar(n, static_cast<S>(kNormEps)));
}

// Per-head pooled vectors for one layer and FM kind, as a [k, d] tensor on
// the tape. Value/output maps pool over batch and sequence; the attention map
// pools over batch and query positions, giving a key-length vector that is
// zero-padded to `pad_to` so its embedding space is stable across batches.
template <class S>
Tensor<S> pool_feature_maps(const LayerFeatureMaps<S>& fm, FmKind kind, int64_t pad_to = 0) {
  const Tensor<S>* src = nullptr;
  switch (kind) {
    case FmKind::Value: src = &fm.value_fm; break;
    case FmKind::Attention: src = &fm.attn_fm; break;
    case FmKind::Output: src = &fm.out_fm; break;
  }
  if (src->dim() != 4) throw ShapeError("pool_feature_maps: feature map must be [B,H,T,d]");
  if (src->shape()[0] == 0) throw ContractError("pool_feature_maps: empty batch");
  Tensor<S> pooled = mean_axes(*src, {0, 2});  // -> [H, d] (or [H, Tk] for attention)
  if (kind == FmKind::Attention && pad_to > 0) {
    int64_t h = pooled.shape()[0], d = pooled.shape()[1];
    if (d > pad_to)
      throw ShapeError(strprintf("pool_feature_maps: key length %lld exceeds pad length %lld",
                                 static_cast<long long>(d), static_cast<long long>(pad_to)));
    if (d < pad_to) {
      // zero-pad via matmul with a [d, pad_to] selector so gradients flow
      std::vector<S> sel(static_cast<size_t>(d * pad_to), S(0));
      for (int64_t i = 0; i < d; ++i) sel[static_cast<size_t>(i * pad_to + i)] = S(1);
      pooled = matmul(pooled, Tensor<S>::from_data({d, pad_to}, std::move(sel)));
    }
    (void)h;
  }
  return normalize_rows(pooled);
}

// ---------------------------------------------------------------------------
// plain-vector helpers (detached path)
// ---------------------------------------------------------------------------

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / ((norm(a) + kNormEps) * (norm(b) + kNormEps));
}

// phi is a *negative* cosine similarity, so minimizing the homogenization
// term pulls heads toward their unit and eta = -phi ranks representativeness.
inline double phi_value(const std::vector<double>& a, const std::vector<double>& b) {
  return -cosine(a, b);
}

template <class S>
std::vector<std::vector<double>> rows_of(const Tensor<S>& t) {
  if (t.dim() != 2) throw ShapeError("rows_of: need a [k, d] tensor");
  int64_t k = t.shape()[0], d = t.shape()[1];
  std::vector<std::vector<double>> out(static_cast<size_t>(k), std::vector<double>(static_cast<size_t>(d)));
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          static_cast<double>(t.data()[static_cast<size_t>(i * d + j)]);
  return out;
}

// ---------------------------------------------------------------------------
// HUDS: Lloyd's K-means with k-means++ seeding and empty-cluster repair
// ---------------------------------------------------------------------------

struct KmeansResult {
  std::vector<int> labels;
  std::vector<std::vector<double>> centroids;
  double cost = 0.0;
};

namespace detail {

inline double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline KmeansResult kmeans_single(const std::vector<std::vector<double>>& pts, int c, Rng& rng,
                                  int max_iters) {
  int n = static_cast<int>(pts.size());
  size_t dim = pts[0].size();
  KmeansResult r;
  r.centroids.reserve(static_cast<size_t>(c));

  // k-means++ seeding
  r.centroids.push_back(pts[static_cast<size_t>(rng.below(static_cast<uint64_t>(n)))]);
  std::vector<double> d2(static_cast<size_t>(n));
  while (static_cast<int>(r.centroids.size()) < c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& cen : r.centroids) best = std::min(best, sqdist(pts[static_cast<size_t>(i)], cen));
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    } else {
      double target = rng.uniform01() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    }
    r.centroids.push_back(pts[static_cast<size_t>(pick)]);
  }

  r.labels.assign(static_cast<size_t>(n), 0);
  auto assign = [&]() {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      // sticky on ties: a point moves only for a strictly closer centroid
      int best = r.labels[static_cast<size_t>(i)];
      double bd = sqdist(pts[static_cast<size_t>(i)], r.centroids[static_cast<size_t>(best)]);
      for (int j = 0; j < c; ++j) {
        double d = sqdist(pts[static_cast<size_t>(i)], r.centroids[static_cast<size_t>(j)]);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (r.labels[static_cast<size_t>(i)] != best) {
        r.labels[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }
    return changed;
  };
  auto recenter = [&]() {
    std::vector<int> count(static_cast<size_t>(c), 0);
    for (auto& cen : r.centroids) cen.assign(dim, 0.0);
    for (int i = 0; i < n; ++i) {
      int l = r.labels[static_cast<size_t>(i)];
      count[static_cast<size_t>(l)]++;
      for (size_t j = 0; j < dim; ++j) r.centroids[static_cast<size_t>(l)][j] += pts[static_cast<size_t>(i)][j];
    }
    for (int j = 0; j < c; ++j)
      if (count[static_cast<size_t>(j)] > 0)
        for (size_t t = 0; t < dim; ++t)
          r.centroids[static_cast<size_t>(j)][t] /= count[static_cast<size_t>(j)];
    // Empty clusters take the farthest member of the largest cluster.
    for (int j = 0; j < c; ++j) {
      if (count[static_cast<size_t>(j)] > 0) continue;
      int largest = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
      if (count[static_cast<size_t>(largest)] <= 1) continue;
      int far_pt = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (r.labels[static_cast<size_t>(i)] != largest) continue;
        double d = sqdist(pts[static_cast<size_t>(i)], r.centroids[static_cast<size_t>(largest)]);
        if (d > far_d) {
          far_d = d;
          far_pt = i;
        }
      }
      if (far_pt >= 0) {
        r.centroids[static_cast<size_t>(j)] = pts[static_cast<size_t>(far_pt)];
        r.labels[static_cast<size_t>(far_pt)] = j;
        count[static_cast<size_t>(largest)]--;
        count[static_cast<size_t>(j)]++;
      }
    }
  };

  assign();
  for (int it = 0; it < max_iters; ++it) {
    recenter();
    if (!assign()) break;  // labels stable against their own means: Lloyd fixpoint
  }

  r.cost = 0.0;
  for (int i = 0; i < n; ++i)
    r.cost += sqdist(pts[static_cast<size_t>(i)], r.centroids[static_cast<size_t>(r.labels[static_cast<size_t>(i)])]);
  return r;
}

}  // namespace detail

// Discover C hidden-unit candidates from the pooled head vectors.
inline KmeansResult discover_hidden_units(const std::vector<std::vector<double>>& points, int c,
                                          Rng& rng, int restarts = 16, int max_iters = 100) {
  int k = static_cast<int>(points.size());
  if (c > k)
    throw ConfigError(strprintf("discover_hidden_units: C=%d exceeds k=%d heads", c, k));
  if (c < 1) throw ConfigError("discover_hidden_units: C must be >= 1");
  for (const auto& p : points)
    for (double x : p)
      if (!std::isfinite(x)) throw ContractError("discover_hidden_units: non-finite input vector");
  KmeansResult best;
  best.cost = std::numeric_limits<double>::infinity();
  for (int t = 0; t < std::max(1, restarts); ++t) {
    KmeansResult r = detail::kmeans_single(points, c, rng, max_iters);
    if (r.cost < best.cost) best = std::move(r);
  }
  return best;
}

// Permutation p (new index -> stable slot) maximizing total cosine similarity
// between matched centroid pairs. Exhaustive up to C = 8, greedy beyond.
inline std::vector<int> match_groups(const std::vector<std::vector<double>>& fresh,
                                     const std::vector<std::vector<double>>& stable) {
  size_t c = fresh.size();
  if (stable.size() != c) throw ShapeError("match_groups: group counts disagree");
  for (size_t i = 0; i < c; ++i)
    if (fresh[i].size() != stable[i].size())
      throw ShapeError("match_groups: centroid dimensions disagree");
  std::vector<std::vector<double>> sim(c, std::vector<double>(c));
  for (size_t i = 0; i < c; ++i)
    for (size_t j = 0; j < c; ++j) sim[i][j] = cosine(fresh[i], stable[j]);

  std::vector<int> best(c);
  if (c <= 8) {
    std::vector<int> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    double best_total = -std::numeric_limits<double>::infinity();
    do {
      double total = 0.0;
      for (size_t i = 0; i < c; ++i) total += sim[i][static_cast<size_t>(perm[i])];
      if (total > best_total) {
        best_total = total;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<char> used(c, 0);
    std::vector<size_t> order(c);
    std::iota(order.begin(), order.end(), 0);
    for (size_t i : order) {
      double bd = -std::numeric_limits<double>::infinity();
      int pick = -1;
      for (size_t j = 0; j < c; ++j)
        if (!used[j] && sim[i][j] > bd) {
          bd = sim[i][j];
          pick = static_cast<int>(j);
        }
      used[static_cast<size_t>(pick)] = 1;
      best[i] = pick;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// per-layer cross-batch state
// ---------------------------------------------------------------------------

struct LayerGroupState {
  bool active = false;
  std::vector<std::vector<double>> ema_units;   // C x d, EMA-stabilized
  std::vector<std::vector<double>> fresh_units; // this batch's aligned centroids
  std::vector<std::vector<double>> epoch_snapshot;
  int snapshots_taken = 0;
  std::vector<int> labels;   // k, values 0..C-1
  std::vector<double> eta;   // k, pattern scores on the primary kind
  double last_shift = std::numeric_limits<double>::infinity();
  bool has_ema = false;
};

struct GroupingState {
  GroupConfig cfg;
  std::vector<LayerGroupState> layers;
  Rng rng;
  int64_t batches_seen = 0;

  static GroupingState init(const GroupConfig& cfg, const std::vector<AttnKind>& layer_kinds,
                            uint64_t seed) {
    GroupingState st;
    st.cfg = cfg;
    st.rng = Rng(seed);
    st.layers.resize(layer_kinds.size());
    for (size_t i = 0; i < layer_kinds.size(); ++i)
      st.layers[i].active = cfg.applies_to(layer_kinds[i]);
    return st;
  }

  int active_layer_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.active ? 1 : 0;
    return n;
  }
};

// Pattern score: cosine similarity to the head's own unit (continuous form).
inline double pattern_score(const std::vector<double>& pooled, const std::vector<double>& unit) {
  return -phi_value(pooled, unit);
}

// One HUDS refresh over the captured feature maps: per active layer, cluster
// the pooled primary-kind vectors, align the new centroids with the EMA ones,
// update the EMA, and record fresh units / labels / pattern scores.
template <class S>
void huds_refresh(GroupingState& st, const std::vector<LayerFeatureMaps<S>>& fms) {
  if (fms.size() != st.layers.size())
    throw ShapeError(strprintf("huds_refresh: %zu feature maps for %zu layers", fms.size(),
                               st.layers.size()));
  FmKind kind = st.cfg.primary_kind();
  for (size_t li = 0; li < fms.size(); ++li) {
    auto& ls = st.layers[li];
    if (!ls.active) continue;
    Tensor<S> pooled;
    {
      NoGradGuard ng;  // clustering sees frozen values
      pooled = pool_feature_maps(fms[li], kind, st.cfg.attn_pool_dim);
    }
    auto points = rows_of(pooled);
    KmeansResult km = discover_hidden_units(points, st.cfg.c, st.rng, st.cfg.kmeans_restarts,
                                            st.cfg.kmeans_max_iters);
    if (ls.has_ema) {
      std::vector<int> perm = match_groups(km.centroids, ls.ema_units);
      std::vector<std::vector<double>> aligned(km.centroids.size());
      for (size_t j = 0; j < km.centroids.size(); ++j)
        aligned[static_cast<size_t>(perm[j])] = std::move(km.centroids[j]);
      km.centroids = std::move(aligned);
      for (auto& l : km.labels) l = perm[static_cast<size_t>(l)];
      for (size_t j = 0; j < km.centroids.size(); ++j)
        for (size_t t = 0; t < km.centroids[j].size(); ++t)
          ls.ema_units[j][t] =
              st.cfg.ema_decay * ls.ema_units[j][t] + (1.0 - st.cfg.ema_decay) * km.centroids[j][t];
    } else {
      ls.ema_units = km.centroids;
      ls.has_ema = true;
    }
    ls.fresh_units = std::move(km.centroids);
    ls.labels = std::move(km.labels);
    ls.eta.assign(points.size(), 0.0);
    for (size_t i = 0; i < points.size(); ++i)
      ls.eta[i] = pattern_score(points[i], ls.fresh_units[static_cast<size_t>(ls.labels[i])]);
  }
  st.batches_seen++;
}

// End-of-epoch EMA snapshot; returns the mean cosine shift per layer.
inline void snapshot_epoch(GroupingState& st) {
  for (auto& ls : st.layers) {
    if (!ls.active || !ls.has_ema) continue;
    if (ls.snapshots_taken > 0) {
      double shift = 0.0;
      for (size_t j = 0; j < ls.ema_units.size(); ++j)
        shift += 1.0 - cosine(ls.ema_units[j], ls.epoch_snapshot[j]);
      ls.last_shift = shift / static_cast<double>(ls.ema_units.size());
    }
    ls.epoch_snapshot = ls.ema_units;
    ls.snapshots_taken++;
  }
}

// rho: every active layer's latest epoch-over-epoch center shift is strictly
// below the threshold. Needs at least two completed epochs.
inline bool convergence_check(const GroupingState& st) {
  bool any = false;
  for (const auto& ls : st.layers) {
    if (!ls.active) continue;
    any = true;
    if (ls.snapshots_taken < 2) return false;
    if (!(ls.last_shift < st.cfg.rho_epsilon)) return false;
  }
  return any;
}

// ---------------------------------------------------------------------------
// the GCT objective
// ---------------------------------------------------------------------------

// Row-wise phi between pooled head vectors and their (constant) units:
// returns a [k] tensor of negative cosine similarities.
template <class S>
Tensor<S> phi_rows(const Tensor<S>& pooled, const Tensor<S>& units_const) {
  Tensor<S> d = sum_axis(mul(pooled, units_const), -1, false);
  Tensor<S> np = sqrt_op(sum_axis(mul(pooled, pooled), -1, false));
  Tensor<S> nz = sqrt_op(sum_axis(mul(units_const, units_const), -1, false));
  Tensor<S> denom = mul(add_scalar(np, static_cast<S>(kNormEps)),
                        add_scalar(nz, static_cast<S>(kNormEps)));
  return neg(div(d, denom));
}

template <class S>
Tensor<S> units_for_heads(const LayerGroupState& ls) {
  size_t k = ls.labels.size();
  size_t d = ls.fresh_units[0].size();
  std::vector<S> data(k * d);
  for (size_t i = 0; i < k; ++i) {
    const auto& u = ls.fresh_units[static_cast<size_t>(ls.labels[i])];
    for (size_t j = 0; j < d; ++j) data[i * d + j] = static_cast<S>(u[j]);
  }
  return Tensor<S>::from_data({static_cast<int64_t>(k), static_cast<int64_t>(d)}, std::move(data));
}

struct GctLossBreakdown {
  double homogenization = 0.0;  // first term at alpha = 1
  double diversification = 0.0; // second term at beta = 1 (sign included)
};

// Per-group means of the pooled head vectors under the given assignment, on
// the tape: [C, k] selector times [k, d] pooled. Values coincide with the
// fresh k-means centroids (a centroid is exactly its members' mean), but the
// recomputation keeps gradients alive into the feature maps.
template <class S>
Tensor<S> group_means(const Tensor<S>& pooled, const std::vector<int>& labels, int c) {
  int64_t k = pooled.shape()[0];
  std::vector<int> count(static_cast<size_t>(c), 0);
  for (int l : labels) count[static_cast<size_t>(l)]++;
  std::vector<S> sel(static_cast<size_t>(c) * static_cast<size_t>(k), S(0));
  for (int64_t i = 0; i < k; ++i) {
    int g = labels[static_cast<size_t>(i)];
    sel[static_cast<size_t>(g * k + i)] = S(1) / static_cast<S>(count[static_cast<size_t>(g)]);
  }
  return matmul(Tensor<S>::from_data({c, k}, std::move(sel)), pooled);
}

// Pairwise phi over all unit pairs j1 < j2, summed: selector matrices gather
// the two sides so the whole thing stays on the tape.
template <class S>
Tensor<S> pairwise_phi_sum(const Tensor<S>& units) {
  int64_t c = units.shape()[0];
  int64_t pairs = c * (c - 1) / 2;
  if (pairs == 0) return Tensor<S>::scalar(S(0));
  std::vector<S> p1(static_cast<size_t>(pairs * c), S(0));
  std::vector<S> p2(static_cast<size_t>(pairs * c), S(0));
  int64_t row = 0;
  for (int64_t j1 = 0; j1 + 1 < c; ++j1)
    for (int64_t j2 = j1 + 1; j2 < c; ++j2, ++row) {
      p1[static_cast<size_t>(row * c + j1)] = S(1);
      p2[static_cast<size_t>(row * c + j2)] = S(1);
    }
  Tensor<S> a = matmul(Tensor<S>::from_data({pairs, c}, std::move(p1)), units);
  Tensor<S> b = matmul(Tensor<S>::from_data({pairs, c}, std::move(p2)), units);
  return sum_all(phi_rows(a, b));
}

// Continuous (metric-learning) variant of the group constraint:
//   L_z = (alpha/kn) sum phi(FMs; z_own) - (beta/(C(C-1)/2 n)) sum phi(z_j1; z_j2).
// The homogenization targets are the batch's fresh units, held constant; the
// diversification term is evaluated on recomputed (differentiable) group
// means so it actually pushes the groups apart. With C < 2 it is zero.
template <class S>
Tensor<S> gct_loss_continuous(const GroupingState& st,
                              const std::vector<LayerFeatureMaps<S>>& fms, double alpha,
                              double beta, GctLossBreakdown* breakdown = nullptr) {
  if (fms.size() != st.layers.size())
    throw ShapeError("gct_loss_continuous: feature map / state layer mismatch");
  int n_active = st.active_layer_count();
  if (n_active == 0) return Tensor<S>::scalar(S(0));

  struct TauKind {
    double tau;
    FmKind kind;
  };
  std::vector<TauKind> taus;
  if (st.cfg.tau_v > 0.0) taus.push_back({st.cfg.tau_v, FmKind::Value});
  if (st.cfg.tau_a > 0.0) taus.push_back({st.cfg.tau_a, FmKind::Attention});
  if (st.cfg.tau_o > 0.0) taus.push_back({st.cfg.tau_o, FmKind::Output});
  FmKind primary = st.cfg.primary_kind();

  Tensor<S> intra_sum = Tensor<S>::scalar(S(0));
  Tensor<S> inter_sum = Tensor<S>::scalar(S(0));
  int64_t k = 0;
  int64_t pair_count_per_layer = static_cast<int64_t>(st.cfg.c) * (st.cfg.c - 1) / 2;
  for (size_t li = 0; li < fms.size(); ++li) {
    const auto& ls = st.layers[li];
    if (!ls.active) continue;
    if (ls.fresh_units.empty() || ls.labels.empty())
      throw ContractError("gct_loss_continuous: HUDS has not run for this batch");
    k = static_cast<int64_t>(ls.labels.size());
    Tensor<S> units = units_for_heads<S>(ls);
    Tensor<S> primary_pooled;
    for (const auto& tk : taus) {
      Tensor<S> pooled = pool_feature_maps(fms[li], tk.kind, st.cfg.attn_pool_dim);
      if (tk.kind == primary) primary_pooled = pooled;
      if (pooled.shape()[1] != units.shape()[1])
        throw ShapeError(strprintf(
            "gct_loss_continuous: %s pooled dim %lld does not match unit dim %lld",
            fm_kind_name(tk.kind), static_cast<long long>(pooled.shape()[1]),
            static_cast<long long>(units.shape()[1])));
      intra_sum = add(intra_sum, scale(sum_all(phi_rows(pooled, units)), static_cast<S>(tk.tau)));
    }
    if (pair_count_per_layer > 0) {
      if (primary_pooled.numel() == 0)
        primary_pooled = pool_feature_maps(fms[li], primary, st.cfg.attn_pool_dim);
      Tensor<S> means = group_means(primary_pooled, ls.labels, st.cfg.c);
      inter_sum = add(inter_sum, pairwise_phi_sum(means));
    }
  }

  double intra_norm = 1.0 / static_cast<double>(k * n_active);
  double inter_norm =
      pair_count_per_layer > 0 ? 1.0 / static_cast<double>(pair_count_per_layer * n_active) : 0.0;
  if (breakdown) {
    breakdown->homogenization = static_cast<double>(intra_sum.detach().item()) * intra_norm;
    breakdown->diversification = -static_cast<double>(inter_sum.detach().item()) * inter_norm;
  }
  Tensor<S> loss = scale(intra_sum, static_cast<S>(alpha * intra_norm));
  return add(loss, scale(inter_sum, static_cast<S>(-beta * inter_norm)));
}

// Per-layer linear classifier parameters for the categorical variant.
template <class S>
struct GroupClassifier {
  Tensor<S> w, b;
  bool initialized() const { return w.numel() > 0; }
  void init(int64_t d, int64_t c, Rng& rng) {
    w = ght::detail::xavier<S>(d, c, rng);
    b = Tensor<S>({c}, S(0), true);
  }
};

// Categorical (classification) variant:
//   L_z = -(alpha/kn) sum log p(own) + (beta/((C-1)kn)) sum_{j != own} log p(j),
// with probabilities clamped to [1e-7, 1]; the classifiers train jointly.
template <class S>
Tensor<S> gct_loss_categorical(const GroupingState& st,
                               const std::vector<LayerFeatureMaps<S>>& fms,
                               std::vector<GroupClassifier<S>>& classifiers, Rng& init_rng,
                               double alpha, double beta,
                               std::vector<std::vector<double>>* eta_out = nullptr) {
  if (fms.size() != st.layers.size())
    throw ShapeError("gct_loss_categorical: feature map / state layer mismatch");
  classifiers.resize(st.layers.size());
  int n_active = st.active_layer_count();
  if (n_active == 0) return Tensor<S>::scalar(S(0));
  FmKind kind = st.cfg.primary_kind();
  int c = st.cfg.c;

  Tensor<S> own_sum = Tensor<S>::scalar(S(0));
  Tensor<S> other_sum = Tensor<S>::scalar(S(0));
  int64_t k = 0;
  if (eta_out) eta_out->assign(st.layers.size(), {});
  for (size_t li = 0; li < fms.size(); ++li) {
    const auto& ls = st.layers[li];
    if (!ls.active) continue;
    if (ls.labels.empty())
      throw ContractError("gct_loss_categorical: HUDS has not run for this batch");
    k = static_cast<int64_t>(ls.labels.size());
    Tensor<S> pooled = pool_feature_maps(fms[li], kind, st.cfg.attn_pool_dim);
    auto& cls = classifiers[li];
    if (!cls.initialized()) cls.init(pooled.shape()[1], c, init_rng);
    Tensor<S> p = softmax(add(matmul(pooled, cls.w), cls.b), -1);  // [k, C]
    {
      const auto& pv = p.data();
      for (int64_t i = 0; i < k; ++i) {
        S rowsum = S(0);
        for (int j = 0; j < c; ++j) rowsum += pv[static_cast<size_t>(i * c + j)];
        if (std::abs(static_cast<double>(rowsum) - 1.0) > 1e-5)
          throw ContractError("gct_loss_categorical: class probabilities do not sum to 1");
      }
    }
    Tensor<S> lp = unary_op(
        p, [](S x) { return std::log(std::max(x, S(1e-7))); },
        [](S go, S x, S) { return x > S(1e-7) ? go / x : S(0); });
    std::vector<S> own(static_cast<size_t>(k * c), S(0));
    std::vector<S> other(static_cast<size_t>(k * c), S(0));
    for (int64_t i = 0; i < k; ++i)
      for (int j = 0; j < c; ++j) {
        bool is_own = ls.labels[static_cast<size_t>(i)] == j;
        (is_own ? own : other)[static_cast<size_t>(i * c + j)] = S(1);
      }
    own_sum = add(own_sum, sum_all(mul(lp, Tensor<S>::from_data({k, c}, std::move(own)))));
    other_sum = add(other_sum, sum_all(mul(lp, Tensor<S>::from_data({k, c}, std::move(other)))));
    if (eta_out) {
      auto& e = (*eta_out)[li];
      e.assign(static_cast<size_t>(k), 0.0);
      for (int64_t i = 0; i < k; ++i)
        e[static_cast<size_t>(i)] = static_cast<double>(
            p.data()[static_cast<size_t>(i * c + ls.labels[static_cast<size_t>(i)])]);
    }
  }
  double kn = static_cast<double>(k * n_active);
  Tensor<S> loss = scale(own_sum, static_cast<S>(-alpha / kn));
  if (c > 1)
    loss = add(loss, scale(other_sum, static_cast<S>(beta / (static_cast<double>(c - 1) * kn))));
  return loss;
}

}  // namespace group
}  // namespace ght
