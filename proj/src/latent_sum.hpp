#pragma once

// Internal helpers shared by the sampler and the likelihood: log-space
// accumulation and the support window of a concave integer sequence.

#include <algorithm>
#include <cmath>
#include <limits>

namespace mnmix::detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct LogSum {
  double max = kNegInf;
  double scaled = 0.0;
  void add(double x) {
    if (!(x > kNegInf)) return;
    if (x > max) {
      scaled = scaled * std::exp(max - x) + 1.0;
      max = x;
    } else {
      scaled += std::exp(x - max);
    }
  }
  double value() const { return max == kNegInf ? kNegInf : max + std::log(scaled); }
};

struct Window {
  int lo = 0;
  int hi = -1;
};

// Window around the mode of a concave sequence on n >= start: every n in
// [lo, hi] has term(n) >= max - cut and the neighbours outside fall below it.
template <typename Term>
Window concave_window(const Term& term, int start, double cut, int guess) {
  auto rising = [&](int n) { return term(n + 1) > term(n); };
  constexpr long kLimit = std::numeric_limits<int>::max() / 2;
  int mode = start;
  if (rising(start)) {
    int lo = start;
    long step = std::max(1, guess - start);
    int hi = static_cast<int>(std::min<long>(lo + step, kLimit));
    while (rising(hi) && hi < kLimit) {
      lo = hi;
      step *= 2;
      hi = static_cast<int>(std::min<long>(lo + step, kLimit));
    }
    while (hi - lo > 1) {
      const int mid = lo + (hi - lo) / 2;
      if (rising(mid)) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    mode = hi;
  }
  const double top = term(mode);
  Window w{mode, mode};
  if (!(top > kNegInf)) return w;
  while (w.lo > start && term(w.lo - 1) >= top - cut) --w.lo;
  while (term(w.hi + 1) >= top - cut) ++w.hi;
  return w;
}

inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace mnmix::detail
