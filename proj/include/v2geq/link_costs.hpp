#pragma once

#include <algorithm>
#include <cmath>

#include "v2geq/net_model.hpp"

namespace v2geq {

// BPR volume-delay t0 (1 + 0.15 (x/c)^4); negative flow is read as zero.
inline double bpr_time(double t0, double capacity, double flow) {
  const double r = std::max(flow, 0.0) / capacity;
  const double r2 = r * r;
  return t0 * (1.0 + 0.15 * r2 * r2);
}

inline double bpr_slope(double t0, double capacity, double flow) {
  const double r = std::max(flow, 0.0) / capacity;
  return t0 * 0.6 * r * r * r / capacity;
}

// Smoothed station wait. With excess e = x dt - c and eps = 1/dt the added
// delay is t_hat/2 times 0, e^2 or 2 eps e - eps^2 on e <= 0, 0 < e <= eps
// and e > eps.
inline double smoothed_wait(const Station& st, double period_h, double flow) {
  const double eps = 1.0 / period_h;
  const double e = flow * period_h - st.piles;
  double extra = 0.0;
  if (e > eps) {
    extra = 2.0 * eps * e - eps * eps;
  } else if (e > 0.0) {
    extra = e * e;
  }
  return st.base_wait_h + 0.5 * st.congestion_h * extra;
}

inline double smoothed_wait_slope(const Station& st, double period_h,
                                  double flow) {
  const double eps = 1.0 / period_h;
  const double e = flow * period_h - st.piles;
  double de = 0.0;
  if (e > eps) {
    de = 2.0 * eps;
  } else if (e > 0.0) {
    de = 2.0 * e;
  }
  return 0.5 * st.congestion_h * de * period_h;
}

}  // namespace v2geq
