#pragma once

// Self-contained reference arithmetic for the linear perception model.
// Deliberately independent of the library: constants retyped, everything
// computed with plain loops, so agreement is evidence rather than tautology.

#include <array>

namespace oracle {

// Coefficients on [1, neighbor_dist, radius, pref_speed, group_cohesion].
inline constexpr std::array<double, 5> kEntitativityCoeffs{0.60, -0.42, -0.58, 0.75, 0.73};

// Rows: friendliness, creepiness, comfort, unnerving; same regressor layout.
inline constexpr std::array<std::array<double, 5>, 4> kFeatureCoeffs{{
    {0.32, 0.20, 0.33, -0.23, -0.42},
    {0.56, -0.45, -0.51, 0.73, 0.69},
    {0.34, 0.28, 0.36, -0.49, -0.59},
    {0.57, -0.29, -0.52, 0.68, 0.47},
}};

// First-principal-component loadings over the four feature scales.
inline constexpr std::array<double, 4> kCombineLoadings{-0.31, 0.66, -0.46, 0.51};

struct Params {
  double neighbor_dist, radius, pref_speed, group_cohesion;
};

inline double entitativity(const Params& p) {
  const std::array<double, 5> x{1.0, p.neighbor_dist, p.radius, p.pref_speed,
                                p.group_cohesion};
  double e = 0.0;
  for (int i = 0; i < 5; ++i) e += kEntitativityCoeffs[i] * x[i];
  return e;
}

inline std::array<double, 4> features(const Params& p) {
  const std::array<double, 5> x{1.0, p.neighbor_dist, p.radius, p.pref_speed,
                                p.group_cohesion};
  std::array<double, 4> out{};
  for (int f = 0; f < 4; ++f) {
    for (int i = 0; i < 5; ++i) out[f] += kFeatureCoeffs[f][i] * x[i];
  }
  return out;
}

inline double combine(const std::array<double, 4>& e) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += kCombineLoadings[i] * e[i];
  return s;
}

struct Box {
  // min/max per dimension in the order neighbor_dist, radius, pref_speed,
  // group_cohesion.
  std::array<double, 4> lo, hi;
};

inline constexpr Box kStudyBox{{3.0, 0.8, 1.2, 0.1}, {5.0, 1.7, 1.8, 1.0}};

struct Extremes {
  double min, max;
};

// Brute force over all 16 corners; the affine map attains extremes there.
inline Extremes extremes(const Box& box) {
  Extremes out{1e300, -1e300};
  for (int mask = 0; mask < 16; ++mask) {
    Params p{(mask & 1) ? box.hi[0] : box.lo[0], (mask & 2) ? box.hi[1] : box.lo[1],
             (mask & 4) ? box.hi[2] : box.lo[2], (mask & 8) ? box.hi[3] : box.lo[3]};
    const double e = entitativity(p);
    if (e < out.min) out.min = e;
    if (e > out.max) out.max = e;
  }
  return out;
}

}  // namespace oracle
