#pragma once

#include <optional>
#include <string>

#include "entikit/core_model.hpp"
#include "entikit/sim.hpp"

namespace entikit {

// Exactly one of the two targets is set.
struct DesignTarget {
  std::optional<double> entitativity;  // normalized, in [0,1]
  std::optional<FeatureVector> features;
  ParamBox box = ParamBox::study();

  bool valid() const { return entitativity.has_value() != features.has_value(); }
};

// Parameters hitting a normalized entitativity target to 1e-6. Among the
// exact solutions, picks the one closest to the box defaults in range-scaled
// Euclidean distance: a line search from the defaults along the coefficient
// gradient, clipped to the box. Throws std::invalid_argument outside [0,1].
MotionParams design_for_entitativity(double target, const ParamBox& box = ParamBox::study(),
                                     const EntitativityModel& model = EntitativityModel::published());

struct FeatureDesignResult {
  MotionParams params;
  FeatureVector achieved;
  double residual = 0.0;  // Euclidean distance to the target profile
};

// Box-constrained least squares against the affine feature map: projected
// gradient descent from the defaults, then an exact active-set solve to pin
// the optimum (the published coefficients are near-collinear, which stalls
// plain gradient descent). Always returns a best-effort result.
FeatureDesignResult design_for_features(const FeatureVector& target,
                                        const ParamBox& box = ParamBox::study(),
                                        const EntitativityModel& model = EntitativityModel::published());

enum class PresetLevel { highest, high, medium, low };

// Level name as used by the CLI: "highest", "high", "medium", "low".
std::string preset_level_name(PresetLevel level);
std::optional<PresetLevel> parse_preset_level(const std::string& name);

// Fixed parameter sets spanning the box, strictly ordered in predicted
// entitativity from highest to low.
MotionParams preset_params(PresetLevel level);

// One group walking 20 m: agents start line abreast; flank goals fan out by
// up to +-fan_angle (0 = parallel lanes).
Scenario design_scenario(const MotionParams& params, int agents = 3, double duration = 20.0,
                         double fan_angle = 0.0);

// Three pedestrians walking 20 m as one group: side-by-side lanes for the
// two cohesive levels, goals fanning out by +-20 deg (medium) or +-40 deg
// (low) for the loose ones.
Scenario preset_scenario(PresetLevel level, int agents = 3, double duration = 20.0);

}  // namespace entikit
