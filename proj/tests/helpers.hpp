#pragma once

#include "subhaz/common.hpp"
#include "subhaz/design.hpp"

#include <cmath>
#include <vector>

namespace testing {

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::abs(b)); }

// Random design with an intercept and p - 1 N(0, 1) columns; the first `pen` non-intercept
// columns form penalty group 0.
inline subhaz::Design random_design(std::uint64_t seed, int n, int p, int pen = 0) {
  subhaz::Rng rng = subhaz::make_rng(seed, 99);
  subhaz::NormalSource z;
  subhaz::Design d;
  d.w.resize(n, p);
  d.y.resize(n);
  d.log_pi.resize(n);
  for (int i = 0; i < n; ++i) {
    d.w(i, 0) = 1.0;
    for (int j = 1; j < p; ++j) d.w(i, j) = z(rng);
    d.y[i] = subhaz::uniform_open(rng) < 0.3 ? 1.0 : 0.0;
    d.log_pi[i] = 0.5 * z(rng);
    d.subject.push_back(i % 10);
    d.t.push_back(static_cast<double>(i));
  }
  for (int j = 0; j < p; ++j) {
    d.names.push_back(j == 0 ? "intercept" : "x" + std::to_string(j));
    d.pen_group.push_back(j >= 1 && j <= pen ? 0 : -1);
  }
  return d;
}

}  // namespace testing
