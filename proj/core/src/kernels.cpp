// Hot softmax kernel for the 1-d mixture score, isolated in its own
// translation unit so it can be compiled with value-unsafe FP optimizations
// (the containing loops vectorize only under -ffast-math). No NaN/Inf
// semantics are relied upon here: inputs are finite and fast_exp saturates.
#include <algorithm>
#include <cmath>

#include "cmlab/mathutil.hpp"

namespace cmlab::detail {

void mixture_score_many_1d(const double* xs, double* out, int mq, const double* c, int n,
                           double m, double sig2) {
  const double inv2s = 1.0 / (2.0 * sig2);
  // terms more than 60 e-folds below the softmax peak cannot move a double
  // accumulator; in center space the keep-set around x/m has squared radius
  // d0^2 + 120 sigma^2 / m^2, where d0 is the distance to the nearest center
  // (the peak itself may sit far outside the data)
  const double half0_sq = 120.0 * sig2 / (m * m);
  const bool windowed = std::sqrt(half0_sq) < (c[n - 1] - c[0]);
  for (int i = 0; i < mq; ++i) {
    const double x = xs[i];
    const double xc = x / m;  // exponent peak location in center space
    // the max exponent is attained at the center nearest to x/m
    int jn = static_cast<int>(std::lower_bound(c, c + n, xc) - c);
    if (jn >= n) jn = n - 1;
    if (jn > 0 && xc - c[jn - 1] < c[jn] - xc) --jn;
    int lo = 0, hi = n;
    if (windowed) {
      const double d0 = xc - c[jn];
      const double half = std::sqrt(d0 * d0 + half0_sq);
      lo = static_cast<int>(std::lower_bound(c, c + n, xc - half) - c);
      hi = static_cast<int>(std::upper_bound(c, c + n, xc + half) - c);
    }
    const double dn = m * c[jn] - x;
    const double best = -dn * dn * inv2s;
    double sum = 0.0, wsum = 0.0;
    for (int j = lo; j < hi; ++j) {
      const double dlt = m * c[j] - x;
      const double w = fast_exp(-dlt * dlt * inv2s - best);
      sum += w;
      wsum += w * c[j];
    }
    out[i] = (m * (wsum / sum) - x) / sig2;
  }
}

}  // namespace cmlab::detail
