#include "entikit/design.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace entikit {

namespace {

std::array<double, 4> as_array(const MotionParams& p) {
  return {p.neighbor_dist, p.radius, p.pref_speed, p.group_cohesion};
}

MotionParams from_array(const std::array<double, 4>& x) {
  MotionParams p;
  p.neighbor_dist = x[0];
  p.radius = x[1];
  p.pref_speed = x[2];
  p.group_cohesion = x[3];
  return p;
}

Eigen::Vector4d feature_residual(const Eigen::Matrix4d& j, const Eigen::Vector4d& x,
                                 const Eigen::Vector4d& t) {
  return j * x - t;
}

}  // namespace

MotionParams design_for_entitativity(double target, const ParamBox& box,
                                     const EntitativityModel& model) {
  if (!std::isfinite(target) || target < 0.0 || target > 1.0)
    throw std::invalid_argument("design_for_entitativity: target must lie in [0,1]");
  if (!box.valid()) throw std::invalid_argument("design_for_entitativity: invalid box");

  const EntitativityRange range = entitativity_extremes(box, model);
  if (!(range.span() > 0.0))
    throw std::domain_error("design_for_entitativity: box admits a single label only");

  // The extreme corners answer the endpoints exactly.
  auto corner = [&](bool maximize) {
    std::array<double, 4> x{};
    for (int d = 0; d < ParamBox::kDims; ++d) {
      const double a = model.entitativity_coeffs[static_cast<std::size_t>(d + 1)];
      const ParamRange& r = box.dim(d);
      x[static_cast<std::size_t>(d)] = ((a >= 0.0) == maximize) ? r.max : r.min;
    }
    return from_array(x);
  };
  if (target >= 1.0 - 1e-12) return corner(true);
  if (target <= 1e-12) return corner(false);

  // Moving from the defaults along d_k = a_k * range_k^2 traces, in
  // range-scaled coordinates, the shortest path across the level sets, so
  // the first point hitting the target is also the closest exact solution.
  // Clipping to the box keeps the label monotone in the path parameter.
  const std::array<double, 4> defaults = as_array(box.defaults());
  std::array<double, 4> dir{};
  double s_lo = 0.0, s_hi = 0.0;
  for (int d = 0; d < ParamBox::kDims; ++d) {
    const ParamRange& r = box.dim(d);
    const double a = model.entitativity_coeffs[static_cast<std::size_t>(d + 1)];
    dir[static_cast<std::size_t>(d)] = a * r.span() * r.span();
    if (dir[static_cast<std::size_t>(d)] == 0.0) continue;
    const double to_hi = ((a >= 0.0 ? r.max : r.min) - defaults[static_cast<std::size_t>(d)]) /
                         dir[static_cast<std::size_t>(d)];
    const double to_lo = ((a >= 0.0 ? r.min : r.max) - defaults[static_cast<std::size_t>(d)]) /
                         dir[static_cast<std::size_t>(d)];
    s_hi = std::max(s_hi, to_hi);
    s_lo = std::min(s_lo, to_lo);
  }

  auto at = [&](double s) {
    std::array<double, 4> x{};
    for (int d = 0; d < ParamBox::kDims; ++d) {
      x[static_cast<std::size_t>(d)] = box.dim(d).clamp(
          defaults[static_cast<std::size_t>(d)] + s * dir[static_cast<std::size_t>(d)]);
    }
    return x;
  };
  auto value = [&](double s) {
    return normalize_entitativity(predict_entitativity(from_array(at(s)), model), range);
  };

  double lo = s_lo, hi = s_hi;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double v = value(mid);
    if (std::abs(v - target) <= 1e-9) return from_array(at(mid));
    (v < target ? lo : hi) = mid;
  }
  return from_array(at(0.5 * (lo + hi)));
}

FeatureDesignResult design_for_features(const FeatureVector& target, const ParamBox& box,
                                        const EntitativityModel& model) {
  if (!target.finite())
    throw std::invalid_argument("design_for_features: target must be finite");
  if (!box.valid()) throw std::invalid_argument("design_for_features: invalid box");

  Eigen::Matrix4d j;
  Eigen::Vector4d t;
  const std::array<double, 4> tgt{target.friendliness, target.creepiness, target.comfort,
                                  target.unnerving};
  for (int f = 0; f < 4; ++f) {
    const auto& row = model.feature_matrix[static_cast<std::size_t>(f)];
    for (int d = 0; d < 4; ++d) j(f, d) = row[static_cast<std::size_t>(d + 1)];
    t(f) = tgt[static_cast<std::size_t>(f)] - row[0];
  }

  Eigen::Vector4d lo, hi, x, scale;
  for (int d = 0; d < 4; ++d) {
    const ParamRange& r = box.dim(d);
    lo(d) = r.min;
    hi(d) = r.max;
    x(d) = r.def;
    scale(d) = r.span() > 0.0 ? r.span() : 1.0;
  }

  // Projected gradient descent in range-scaled coordinates, step 0.1.
  const Eigen::Matrix4d ju = j * scale.asDiagonal();
  Eigen::Vector4d u = (x - lo).cwiseQuotient(scale);
  const Eigen::Vector4d u_hi = (hi - lo).cwiseQuotient(scale);
  for (int iter = 0; iter < 500; ++iter) {
    const Eigen::Vector4d grad = ju.transpose() * (ju * u - (t - j * lo));
    Eigen::Vector4d next = (u - 0.1 * grad).cwiseMax(0.0).cwiseMin(u_hi);
    const double moved = (next - u).norm();
    u = next;
    if (moved < 1e-6) break;
  }
  Eigen::Vector4d best = lo + scale.asDiagonal() * u;
  double best_cost = feature_residual(j, best, t).squaredNorm();

  // The published rows are nearly collinear, so the descent stalls along the
  // flat directions; enumerate active sets for the exact constrained
  // optimum. Free coordinates solve a reduced least squares (minimal-norm
  // about the defaults, which also breaks degenerate ties).
  const Eigen::Vector4d x_def = x;
  for (int pattern = 0; pattern < 81; ++pattern) {
    int code = pattern;
    std::array<int, 4> state{};  // 0 free, 1 at min, 2 at max
    for (int d = 0; d < 4; ++d) {
      state[static_cast<std::size_t>(d)] = code % 3;
      code /= 3;
    }
    Eigen::Vector4d cand = x_def;
    std::vector<int> free_dims;
    for (int d = 0; d < 4; ++d) {
      if (state[static_cast<std::size_t>(d)] == 1) {
        cand(d) = lo(d);
      } else if (state[static_cast<std::size_t>(d)] == 2) {
        cand(d) = hi(d);
      } else {
        free_dims.push_back(d);
      }
    }
    if (!free_dims.empty()) {
      Eigen::MatrixXd jf(4, static_cast<Eigen::Index>(free_dims.size()));
      Eigen::Vector4d rhs = t;
      for (int d = 0; d < 4; ++d) {
        if (state[static_cast<std::size_t>(d)] != 0) rhs -= j.col(d) * cand(d);
      }
      for (std::size_t c = 0; c < free_dims.size(); ++c) {
        jf.col(static_cast<Eigen::Index>(c)) = j.col(free_dims[c]);
        rhs -= j.col(free_dims[c]) * x_def(free_dims[c]);
      }
      // Solve for the offset from the defaults; minimal-norm keeps the
      // solution near the reference stimulus when the system is flat.
      const Eigen::VectorXd delta =
          jf.completeOrthogonalDecomposition().solve(Eigen::VectorXd(rhs));
      bool inside = true;
      for (std::size_t c = 0; c < free_dims.size(); ++c) {
        const int d = free_dims[c];
        const double v = x_def(d) + delta(static_cast<Eigen::Index>(c));
        if (v < lo(d) - 1e-12 || v > hi(d) + 1e-12) {
          inside = false;
          break;
        }
        cand(d) = std::clamp(v, lo(d), hi(d));
      }
      if (!inside) continue;
    }
    const double cost = feature_residual(j, cand, t).squaredNorm();
    if (cost < best_cost - 1e-15) {
      best_cost = cost;
      best = cand;
    }
  }

  FeatureDesignResult out;
  out.params = from_array({best(0), best(1), best(2), best(3)});
  out.achieved = predict_features(out.params, model);
  out.residual = std::sqrt(best_cost);
  return out;
}

std::string preset_level_name(PresetLevel level) {
  switch (level) {
    case PresetLevel::highest:
      return "highest";
    case PresetLevel::high:
      return "high";
    case PresetLevel::medium:
      return "medium";
    default:
      return "low";
  }
}

std::optional<PresetLevel> parse_preset_level(const std::string& name) {
  if (name == "highest") return PresetLevel::highest;
  if (name == "high") return PresetLevel::high;
  if (name == "medium") return PresetLevel::medium;
  if (name == "low") return PresetLevel::low;
  return std::nullopt;
}

MotionParams preset_params(PresetLevel level) {
  MotionParams p;
  switch (level) {
    case PresetLevel::highest:
      p.neighbor_dist = 3.0;
      p.radius = 0.8;
      p.pref_speed = 1.8;
      p.group_cohesion = 1.0;
      break;
    case PresetLevel::high:
      p.neighbor_dist = 3.5;
      p.radius = 1.0;
      p.pref_speed = 1.65;
      p.group_cohesion = 0.8;
      break;
    case PresetLevel::medium:
      p.neighbor_dist = 4.5;
      p.radius = 1.4;
      p.pref_speed = 1.5;
      p.group_cohesion = 0.3;
      break;
    case PresetLevel::low:
      p.neighbor_dist = 5.0;
      p.radius = 1.7;
      p.pref_speed = 1.2;
      p.group_cohesion = 0.1;
      break;
  }
  return p;
}

Scenario design_scenario(const MotionParams& params, int agents, double duration,
                         double fan_angle) {
  if (agents < 1) throw std::invalid_argument("design_scenario: needs at least one agent");
  if (!(duration > 0.0)) throw std::invalid_argument("design_scenario: duration must be positive");
  constexpr double kWalkLength = 20.0;  // m
  const double spacing = 2.0 * params.radius + 0.2;

  Scenario sc;
  sc.timestep = 0.1;
  sc.duration = duration;
  sc.rng_seed = 1;
  const double half = (agents - 1) / 2.0;
  for (int k = 0; k < agents; ++k) {
    const double m = k - half;  // 0 at the center lane
    Agent a;
    a.id = k;
    a.group_id = 0;
    a.params = params;
    a.state.position = {0.0, spacing * m};
    const double angle = half > 0.0 ? fan_angle * (m / half) : 0.0;
    const Vec2 dir{std::cos(angle), std::sin(angle)};
    a.goal = a.state.position + kWalkLength * dir;
    a.state.velocity = params.pref_speed * dir;
    a.state.preferred_velocity = a.state.velocity;
    sc.agents.push_back(a);
  }
  return sc;
}

Scenario preset_scenario(PresetLevel level, int agents, double duration) {
  double fan = 0.0;  // divergence half-angle of the flanking lanes
  if (level == PresetLevel::medium) fan = 20.0 * M_PI / 180.0;
  if (level == PresetLevel::low) fan = 40.0 * M_PI / 180.0;
  return design_scenario(preset_params(level), agents, duration, fan);
}

}  // namespace entikit
