#pragma once

// Independent NDCG reference: IDCG is the maximum DCG over every ordering
// of the candidates rather than the sorted order.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace clot::fixture {

inline double brute_dcg(const std::vector<std::size_t>& order, const std::vector<int>& grades) {
  double s = 0.0;
  for (std::size_t pos = 1; pos <= order.size(); ++pos) {
    s += (std::pow(2.0, grades[order[pos - 1]]) - 1.0) / std::log2(static_cast<double>(pos) + 1.0);
  }
  return s;
}

inline double brute_ndcg(const std::vector<std::size_t>& predicted, const std::vector<int>& grades) {
  std::vector<std::size_t> perm(grades.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    best = std::max(best, brute_dcg(perm, grades));
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best == 0.0) return 1.0;
  return brute_dcg(predicted, grades) / best;
}

/// Dense rank from the top: grade = (count - 1) - number of distinct like
/// values strictly greater than this one, floored at zero.
inline std::vector<int> brute_grades(const std::vector<std::int64_t>& likes) {
  std::vector<int> out;
  for (auto l : likes) {
    std::vector<std::int64_t> greater;
    for (auto o : likes) {
      if (o > l && std::find(greater.begin(), greater.end(), o) == greater.end()) greater.push_back(o);
    }
    out.push_back(std::max(0, static_cast<int>(likes.size()) - 1 - static_cast<int>(greater.size())));
  }
  return out;
}

}  // namespace clot::fixture
