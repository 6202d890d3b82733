#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace cmlab {

// exp(x) for x <= 0, accurate to ~1 ulp over the softmax range and cheap
// enough that the compiler can vectorize the mixture-score inner loop.
// Range reduction x = k*ln2 + r, |r| <= ln2/2, then a degree-11 Taylor
// polynomial for e^r and an exponent-field scale by 2^k.
inline double fast_exp(double x) {
  constexpr double inv_ln2 = 1.4426950408889634073599246810019;
  constexpr double ln2_hi = 0.69314718055994528622676398299518;
  constexpr double ln2_lo = 2.3190468138462995584178700867616e-17;
  // branchless clamp + nearbyint rounding (single instruction on x86; safe
  // under reassociating FP modes, unlike the add-subtract bit trick), so the
  // whole function if-converts and the softmax loops vectorize; inputs below
  // -708 saturate to exp(-708) ~ 3e-308, which is indistinguishable from 0
  // in any softmax accumulation
  const double xc = std::fmax(x, -708.0);
  const double kd = std::nearbyint(xc * inv_ln2);
  const double r = (xc - kd * ln2_hi) - kd * ln2_lo;
  // Horner, coefficients 1/i!
  double q = 2.5052108385441718775052108385e-8;
  q = q * r + 2.7557319223985890652557319224e-7;
  q = q * r + 2.7557319223985892510316263971e-6;
  q = q * r + 2.4801587301587301565790088425e-5;
  q = q * r + 1.9841269841269841253310388585e-4;
  q = q * r + 1.3888888888888889418943696721e-3;
  q = q * r + 8.3333333333333332176851016015e-3;
  q = q * r + 4.1666666666666664353702032031e-2;
  q = q * r + 1.6666666666666665741480812812e-1;
  q = q * r + 0.5;
  q = q * r + 1.0;
  q = q * r + 1.0;
  // scale by 2^k through the exponent field; k >= -1022 on the clamped range
  const int64_t k = static_cast<int64_t>(kd);
  const uint64_t bits =
      std::bit_cast<uint64_t>(q) + (static_cast<uint64_t>(k) << 52);
  return std::bit_cast<double>(bits);
}

struct OlsFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

// Ordinary least squares y = a + b x.
inline OlsFit ols(const std::vector<double>& xs, const std::vector<double>& ys) {
  const size_t n = xs.size();
  double sx = 0, sy = 0;
  for (size_t i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  OlsFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    double rss = 0;
    for (size_t i = 0; i < n; ++i) {
      const double e = ys[i] - f.intercept - f.slope * xs[i];
      rss += e * e;
    }
    f.slope_stderr = std::sqrt(rss / (static_cast<double>(n) - 2.0) / sxx);
  }
  return f;
}

struct MeanStderr {
  double mean = 0.0;
  double stddev = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr r;
  const size_t n = v.size();
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(n);
  if (n > 1) {
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / (static_cast<double>(n) - 1.0));
    r.stderr_ = r.stddev / std::sqrt(static_cast<double>(n));
  }
  return r;
}

// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440084436210485); }

// Inverse standard normal CDF (Acklam's rational approximation, ~1e-9
// absolute, refined by one Halley step to near machine precision).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) return std::numeric_limits<double>::quiet_NaN();
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  // one Halley refinement against the forward CDF
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

}  // namespace cmlab
