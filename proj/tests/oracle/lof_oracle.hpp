#ifndef LFAT_TESTS_LOF_ORACLE_HPP_
#define LFAT_TESTS_LOF_ORACLE_HPP_

// Brute-force LOF written straight from the definitions, for cross-checking.
// Deliberately naive: full sorts, recomputation everywhere, no caching, and
// no dependency on the library.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace oracle {

struct P {
  double x;
  double y;
};

inline double dist(P a, P b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Distances from q to the training points, excluding index `skip` (-1 for none).
inline std::vector<std::pair<double, int>> sorted_distances(const std::vector<P>& train, P q,
                                                            int skip) {
  std::vector<std::pair<double, int>> d;
  for (int i = 0; i < static_cast<int>(train.size()); ++i) {
    if (i == skip) continue;
    d.emplace_back(dist(q, train[i]), i);
  }
  std::sort(d.begin(), d.end());
  return d;
}

inline double k_distance(const std::vector<P>& train, int k, P q, int skip) {
  return sorted_distances(train, q, skip)[k - 1].first;
}

inline std::vector<int> neighbours(const std::vector<P>& train, int k, P q, int skip) {
  const auto d = sorted_distances(train, q, skip);
  const double kd = d[k - 1].first;
  std::vector<int> out;
  for (const auto& [v, i] : d) {
    if (v <= kd) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline double reach(const std::vector<P>& train, int k, P a, int b) {
  return std::max(k_distance(train, k, train[b], b), dist(a, train[b]));
}

inline double lrd(const std::vector<P>& train, int k, P q, int skip) {
  const auto nb = neighbours(train, k, q, skip);
  double s = 0;
  for (int o : nb) s += reach(train, k, q, o);
  if (s == 0) return 1e10;
  return nb.size() / s;
}

// LOF of an unseen query (skip = -1) or of training point `skip` left out.
inline double lof(const std::vector<P>& train, int k, P q, int skip = -1) {
  const auto nb = neighbours(train, k, q, skip);
  const double own = lrd(train, k, q, skip);
  double s = 0;
  for (int o : nb) s += lrd(train, k, train[o], o) / own;
  return s / nb.size();
}

}  // namespace oracle

#endif  // LFAT_TESTS_LOF_ORACLE_HPP_
