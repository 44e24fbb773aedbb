#pragma once

#include <array>

#include "entikit/vec2.hpp"

namespace entikit {

// Kinematic state of one pedestrian on the 2D ground plane.
struct PedestrianState {
  Vec2 position;            // m
  Vec2 velocity;            // m/s, current
  Vec2 preferred_velocity;  // m/s, goal-seeking velocity absent other agents

  bool finite() const {
    return position.finite() && velocity.finite() && preferred_velocity.finite();
  }
};

// Motion-model parameters of one pedestrian. The analyzed subset
// (neighbor_dist, radius, pref_speed, group_cohesion) drives the
// entitativity model; max_neighbors and planning_horizon only shape
// local collision avoidance.
struct MotionParams {
  double neighbor_dist = 4.0;     // m, how far the agent reacts to neighbors
  int max_neighbors = 10;         // nearest neighbors considered
  double planning_horizon = 2.0;  // s, collision lookahead
  double radius = 1.0;            // m, personal space
  double pref_speed = 1.5;        // m/s
  double group_cohesion = 0.5;    // dimensionless, [0,1]

  bool finite() const {
    return std::isfinite(neighbor_dist) && std::isfinite(planning_horizon) &&
           std::isfinite(radius) && std::isfinite(pref_speed) &&
           std::isfinite(group_cohesion);
  }
};

// Four socio-emotional questionnaire scores attached to a group.
struct FeatureVector {
  double friendliness = 0.0;
  double creepiness = 0.0;
  double comfort = 0.0;
  double unnerving = 0.0;

  bool finite() const {
    return std::isfinite(friendliness) && std::isfinite(creepiness) &&
           std::isfinite(comfort) && std::isfinite(unnerving);
  }
};

struct EntitativityLabel {
  double raw = 0.0;
  double normalized = 0.0;  // min-max over the attainable range of the active box
};

struct ParamRange {
  double min = 0.0;
  double max = 0.0;
  double def = 0.0;

  bool valid() const { return min <= def && def <= max; }
  double span() const { return max - min; }
  double clamp(double v) const { return v < min ? min : (v > max ? max : v); }
  bool contains(double v) const { return v >= min && v <= max; }
};

// Min/default/max ranges for the four analyzed parameters. The linear
// entitativity model is only validated inside this box.
struct ParamBox {
  ParamRange neighbor_dist;
  ParamRange radius;
  ParamRange pref_speed;
  ParamRange group_cohesion;

  // Ranges used in the perception study:
  // neighbor_dist [3,5] def 4, radius [0.8,1.7] def 1.0,
  // pref_speed [1.2,1.8] def 1.5, group_cohesion [0.1,1.0] def 0.5.
  static ParamBox study();

  bool valid() const;
  bool contains(const MotionParams& p) const;
  MotionParams defaults() const;
  MotionParams clamp(const MotionParams& p) const;

  const ParamRange& dim(int i) const;
  ParamRange& dim(int i);
  static constexpr int kDims = 4;
};

// Coefficient sets mapping motion parameters to perception. Defaults are
// the published study fit; a refit bundle can swap in its own values.
struct EntitativityModel {
  // Feature -> scalar label combination (first principal component).
  std::array<double, 4> pca_loadings;
  // [intercept, neighbor_dist, radius, pref_speed, group_cohesion].
  std::array<double, 5> entitativity_coeffs;
  // Rows: friendliness, creepiness, comfort, unnerving; columns as above.
  std::array<std::array<double, 5>, 4> feature_matrix;

  static const EntitativityModel& published();
};

struct EntitativityRange {
  double min = 0.0;
  double max = 0.0;
  double span() const { return max - min; }
};

// Scalar label from the four features. Throws std::invalid_argument on
// non-finite input.
double combine_features(const FeatureVector& e,
                        const EntitativityModel& model = EntitativityModel::published());

// Raw (unnormalized) entitativity of a parameter set.
double predict_entitativity(const MotionParams& gp,
                            const EntitativityModel& model = EntitativityModel::published());

// Per-feature predictions from a parameter set.
FeatureVector predict_features(const MotionParams& gp,
                               const EntitativityModel& model = EntitativityModel::published());

// Extremes of predict_entitativity over the box. The map is affine, so the
// extremes sit at box corners; computed by the per-dimension sign rule.
// Throws std::invalid_argument on a degenerate box (min > max).
EntitativityRange entitativity_extremes(
    const ParamBox& box, const EntitativityModel& model = EntitativityModel::published());

// Absolute disagreement as a fraction of the attainable range over the box.
// Throws std::domain_error when the box's range collapses to a point.
double entitativity_error(double e_ground, double e_pred, const ParamBox& box,
                          const EntitativityModel& model = EntitativityModel::published());

double normalize_entitativity(double raw, const EntitativityRange& range);

struct LabeledEntitativity {
  EntitativityLabel label;
  bool out_of_box = false;  // params outside the box; normalized value clamped
};

// Raw + normalized label for a parameter set. Out-of-box parameters are
// permitted; their normalized labels are clamped to [0,1] and flagged.
LabeledEntitativity label_params(const MotionParams& gp, const ParamBox& box,
                                 const EntitativityModel& model = EntitativityModel::published());

}  // namespace entikit
