#ifndef LFAT_LOF_HPP_
#define LFAT_LOF_HPP_

// Local Outlier Factor novelty detection.
//
// LofIndex<D> holds the fitted neighbourhood structure over a fixed training
// set and scores unseen queries against it. Training points are never scored
// against themselves: their k-distances and local reachability densities are
// computed leave-self-out, and a query is never a member of its own
// neighbourhood (a training point that coincides with the query is, though).
//
// Neighbourhoods follow the canonical definition: every training point whose
// distance is <= the k-distance belongs to it, so ties can grow it past k.
//
// LofModel wraps a 2-D index with z-score standardisation of the feature
// vector and a calibrated decision threshold.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lfat/error.hpp"
#include "lfat/trace.hpp"

namespace lfat::lof {

/// Local reachability density reported when every neighbour coincides with
/// the point (sum of reachability distances is zero).
inline constexpr double kLargeLrd = 1e10;
inline constexpr double kMinMargin = 0.05;
inline constexpr std::size_t kDefaultK = 20;
inline constexpr double kDefaultQuantile = 0.99;

template <std::size_t D>
using Point = std::array<double, D>;

template <std::size_t D>
double euclidean(const Point<D>& a, const Point<D>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct Neighborhood {
  double k_distance = 0.0;
  std::vector<std::size_t> members;  // ascending training indices
};

template <std::size_t D>
class LofIndex {
 public:
  using point_type = Point<D>;

  /// Throws Errc::InsufficientData unless k >= 1 and points.size() >= k + 1.
  LofIndex(std::vector<point_type> points, std::size_t k) : points_(std::move(points)), k_(k) {
    check_sizes();
    const std::size_t n = points_.size();
    neighborhoods_.reserve(n);
    k_distances_.resize(n);
    lrds_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      neighborhoods_.push_back(neighborhood_of(points_[i], i));
      k_distances_[i] = neighborhoods_.back().k_distance;
    }
    for (std::size_t i = 0; i < n; ++i) lrds_[i] = lrd_over(points_[i], neighborhoods_[i]);
  }

  /// Rebuilds an index from persisted precomputed arrays without recomputing
  /// them, so a reloaded model scores bit-identically.
  static LofIndex restore(std::vector<point_type> points, std::size_t k,
                          std::vector<double> k_distances, std::vector<double> lrds) {
    LofIndex idx;
    idx.points_ = std::move(points);
    idx.k_ = k;
    idx.check_sizes();
    if (k_distances.size() != idx.points_.size() || lrds.size() != idx.points_.size()) {
      throw Error(Errc::FormatError, "precomputed arrays do not match the training set size");
    }
    for (double v : lrds) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw Error(Errc::FormatError, "precomputed lrd must be positive and finite");
      }
    }
    idx.k_distances_ = std::move(k_distances);
    idx.lrds_ = std::move(lrds);
    return idx;
  }

  std::size_t k() const { return k_; }
  std::size_t size() const { return points_.size(); }
  const std::vector<point_type>& points() const { return points_; }
  const std::vector<double>& k_distances() const { return k_distances_; }
  const std::vector<double>& lrds() const { return lrds_; }

  Neighborhood neighborhood(const point_type& query) const {
    return neighborhood_of(query, std::nullopt);
  }

  double k_distance(const point_type& query) const { return neighborhood(query).k_distance; }

  double reach_dist(const point_type& a, std::size_t b_index) const {
    return std::max(k_distances_.at(b_index), euclidean<D>(a, points_.at(b_index)));
  }

  double lrd(const point_type& query) const { return lrd_over(query, neighborhood(query)); }

  double score(const point_type& query) const {
    const Neighborhood nb = neighborhood(query);
    return score_over(lrd_over(query, nb), nb);
  }

  /// Leave-self-out LOF of every training point, in index order.
  std::vector<double> training_scores() const {
    std::vector<double> out(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      // Neighbourhoods are only kept after a full fit; a restored index
      // recomputes them on demand.
      const Neighborhood nb =
          neighborhoods_.empty() ? neighborhood_of(points_[i], i) : neighborhoods_[i];
      out[i] = score_over(lrds_[i], nb);
    }
    return out;
  }

 private:
  LofIndex() = default;

  void check_sizes() const {
    if (k_ < 1) throw Error(Errc::InsufficientData, "k must be >= 1");
    if (points_.size() < k_ + 1) {
      throw Error(Errc::InsufficientData, "need at least k+1 = " + std::to_string(k_ + 1) +
                                              " training points, got " +
                                              std::to_string(points_.size()));
    }
  }

  Neighborhood neighborhood_of(const point_type& p, std::optional<std::size_t> self) const {
    const std::size_t n = points_.size();
    std::vector<double> dist(n);
    std::vector<double> scratch;
    scratch.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      dist[j] = euclidean<D>(p, points_[j]);
      if (self != j) scratch.push_back(dist[j]);
    }
    auto kth = scratch.begin() + static_cast<std::ptrdiff_t>(k_ - 1);
    std::nth_element(scratch.begin(), kth, scratch.end());
    Neighborhood nb;
    nb.k_distance = *kth;
    nb.members.reserve(k_ + 4);
    for (std::size_t j = 0; j < n; ++j) {
      if (self != j && dist[j] <= nb.k_distance) nb.members.push_back(j);
    }
    return nb;
  }

  double lrd_over(const point_type& p, const Neighborhood& nb) const {
    double sum = 0.0;
    for (std::size_t o : nb.members) sum += reach_dist(p, o);
    if (sum == 0.0) return kLargeLrd;
    return static_cast<double>(nb.members.size()) / sum;
  }

  double score_over(double own_lrd, const Neighborhood& nb) const {
    double sum = 0.0;
    for (std::size_t o : nb.members) sum += lrds_[o];
    return sum / own_lrd / static_cast<double>(nb.members.size());
  }

  std::vector<point_type> points_;
  std::size_t k_ = 0;
  std::vector<Neighborhood> neighborhoods_;
  std::vector<double> k_distances_;
  std::vector<double> lrds_;
};

/// Nearest-rank quantile: the smallest value v such that at least a q
/// fraction of `values` is <= v. Requires q in (0, 1] and non-empty values.
inline double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty() || !(q > 0.0) || q > 1.0) {
    throw Error(Errc::InvalidArgument, "quantile needs q in (0,1] and a non-empty sample");
  }
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

struct StandardizationStats {
  Point<2> mean{0.0, 0.0};
  Point<2> std{1.0, 1.0};
};

inline Point<2> to_point(const FeatureVector& f) { return {f.mean_ipc, f.mean_cache_accesses}; }

inline Point<2> standardize(const FeatureVector& raw, const StandardizationStats& stats) {
  const Point<2> x = to_point(raw);
  return {(x[0] - stats.mean[0]) / stats.std[0], (x[1] - stats.mean[1]) / stats.std[1]};
}

enum class Decision { Normal, Anomalous };

inline const char* to_string(Decision d) { return d == Decision::Normal ? "Normal" : "Anomalous"; }

struct Verdict {
  Decision decision = Decision::Normal;
  double score = 0.0;
  double threshold_used = 0.0;
};

/// Decision rule shared by every caller: strictly above the threshold is
/// anomalous, equal is normal.
inline Verdict decide(double score, double threshold) {
  return {score > threshold ? Decision::Anomalous : Decision::Normal, score, threshold};
}

class LofModel {
 public:
  /// Fits on normal-only features. A zero-variance dimension gets std 1.0
  /// and sets degenerate(). Throws Errc::InsufficientData when
  /// features.size() < k + 1 and Errc::InvalidArgument for a bad quantile.
  static LofModel fit(std::span<const FeatureVector> features, std::size_t k = kDefaultK,
                      double calibration_quantile = kDefaultQuantile) {
    if (!(calibration_quantile > 0.0) || calibration_quantile > 1.0) {
      throw Error(Errc::InvalidArgument, "calibration quantile must lie in (0, 1]");
    }
    if (k < 1 || features.size() < k + 1) {
      throw Error(Errc::InsufficientData, "need at least k+1 = " + std::to_string(k + 1) +
                                              " normal feature vectors, got " +
                                              std::to_string(features.size()));
    }
    StandardizationStats stats;
    bool degenerate = false;
    const auto n = static_cast<double>(features.size());
    for (std::size_t d = 0; d < 2; ++d) {
      double sum = 0.0;
      for (const auto& f : features) sum += to_point(f)[d];
      const double mean = sum / n;
      double ss = 0.0;
      for (const auto& f : features) {
        const double dev = to_point(f)[d] - mean;
        ss += dev * dev;
      }
      double sd = std::sqrt(ss / n);
      if (!(sd > 0.0) || !std::isfinite(sd)) {
        sd = 1.0;
        degenerate = true;
      }
      stats.mean[d] = mean;
      stats.std[d] = sd;
    }
    std::vector<Point<2>> points;
    points.reserve(features.size());
    for (const auto& f : features) points.push_back(lof::standardize(f, stats));

    LofIndex<2> index(std::move(points), k);
    const double q = nearest_rank_quantile(index.training_scores(), calibration_quantile);
    const double threshold = std::max(1.0 + kMinMargin, q);
    return LofModel(std::move(index), stats, threshold, calibration_quantile, degenerate);
  }

  LofModel(LofIndex<2> index, StandardizationStats stats, double threshold,
           double calibration_quantile, bool degenerate)
      : index_(std::move(index)),
        stats_(stats),
        threshold_(threshold),
        quantile_(calibration_quantile),
        degenerate_(degenerate) {
    if (!(threshold_ >= 1.0) || !std::isfinite(threshold_)) {
      throw Error(Errc::InvalidArgument, "threshold must be finite and >= 1.0");
    }
    for (double s : stats_.std) {
      if (!(s > 0.0)) throw Error(Errc::InvalidArgument, "standardization std must be > 0");
    }
  }

  const LofIndex<2>& index() const { return index_; }
  const StandardizationStats& stats() const { return stats_; }
  double threshold() const { return threshold_; }
  double calibration_quantile() const { return quantile_; }
  bool degenerate() const { return degenerate_; }
  std::size_t k() const { return index_.k(); }

  Point<2> standardize(const FeatureVector& raw) const { return lof::standardize(raw, stats_); }

  double score(const FeatureVector& raw) const { return index_.score(standardize(raw)); }

  Verdict predict(const FeatureVector& raw) const { return decide(score(raw), threshold_); }

  /// Text persistence; see lof_io.cpp for the layout.
  void save(std::ostream& out) const;
  static LofModel load(std::istream& in);
  void save_file(const std::string& path) const;
  static LofModel load_file(const std::string& path);

 private:
  LofIndex<2> index_;
  StandardizationStats stats_;
  double threshold_;
  double quantile_;
  bool degenerate_;
};

}  // namespace lfat::lof

#endif  // LFAT_LOF_HPP_
