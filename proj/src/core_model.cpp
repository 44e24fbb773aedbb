#include "entikit/core_model.hpp"

#include <cmath>
#include <stdexcept>

namespace entikit {

ParamBox ParamBox::study() {
  ParamBox box;
  box.neighbor_dist = {3.0, 5.0, 4.0};
  box.radius = {0.8, 1.7, 1.0};
  box.pref_speed = {1.2, 1.8, 1.5};
  box.group_cohesion = {0.1, 1.0, 0.5};
  return box;
}

bool ParamBox::valid() const {
  return neighbor_dist.valid() && radius.valid() && pref_speed.valid() &&
         group_cohesion.valid();
}

bool ParamBox::contains(const MotionParams& p) const {
  return neighbor_dist.contains(p.neighbor_dist) && radius.contains(p.radius) &&
         pref_speed.contains(p.pref_speed) && group_cohesion.contains(p.group_cohesion);
}

MotionParams ParamBox::defaults() const {
  MotionParams p;
  p.neighbor_dist = neighbor_dist.def;
  p.radius = radius.def;
  p.pref_speed = pref_speed.def;
  p.group_cohesion = group_cohesion.def;
  return p;
}

MotionParams ParamBox::clamp(const MotionParams& p) const {
  MotionParams q = p;
  q.neighbor_dist = neighbor_dist.clamp(p.neighbor_dist);
  q.radius = radius.clamp(p.radius);
  q.pref_speed = pref_speed.clamp(p.pref_speed);
  q.group_cohesion = group_cohesion.clamp(p.group_cohesion);
  return q;
}

const ParamRange& ParamBox::dim(int i) const {
  switch (i) {
    case 0: return neighbor_dist;
    case 1: return radius;
    case 2: return pref_speed;
    default: return group_cohesion;
  }
}

ParamRange& ParamBox::dim(int i) {
  switch (i) {
    case 0: return neighbor_dist;
    case 1: return radius;
    case 2: return pref_speed;
    default: return group_cohesion;
  }
}

const EntitativityModel& EntitativityModel::published() {
  static const EntitativityModel model{
      {-0.31, 0.66, -0.46, 0.51},
      {0.60, -0.42, -0.58, 0.75, 0.73},
      {{{0.32, 0.20, 0.33, -0.23, -0.42},
        {0.56, -0.45, -0.51, 0.73, 0.69},
        {0.34, 0.28, 0.36, -0.49, -0.59},
        {0.57, -0.29, -0.52, 0.68, 0.47}}},
  };
  return model;
}

namespace {

std::array<double, 4> analyzed(const MotionParams& gp) {
  return {gp.neighbor_dist, gp.radius, gp.pref_speed, gp.group_cohesion};
}

double affine_eval(const std::array<double, 5>& coeffs, const std::array<double, 4>& gp) {
  double v = coeffs[0];
  for (int i = 0; i < 4; ++i) v += coeffs[i + 1] * gp[i];
  return v;
}

}  // namespace

double combine_features(const FeatureVector& e, const EntitativityModel& model) {
  if (!e.finite()) throw std::invalid_argument("combine_features: non-finite feature vector");
  const auto& w = model.pca_loadings;
  return w[0] * e.friendliness + w[1] * e.creepiness + w[2] * e.comfort + w[3] * e.unnerving;
}

double predict_entitativity(const MotionParams& gp, const EntitativityModel& model) {
  if (!gp.finite()) throw std::invalid_argument("predict_entitativity: non-finite parameters");
  return affine_eval(model.entitativity_coeffs, analyzed(gp));
}

FeatureVector predict_features(const MotionParams& gp, const EntitativityModel& model) {
  if (!gp.finite()) throw std::invalid_argument("predict_features: non-finite parameters");
  const auto p = analyzed(gp);
  FeatureVector e;
  e.friendliness = affine_eval(model.feature_matrix[0], p);
  e.creepiness = affine_eval(model.feature_matrix[1], p);
  e.comfort = affine_eval(model.feature_matrix[2], p);
  e.unnerving = affine_eval(model.feature_matrix[3], p);
  return e;
}

EntitativityRange entitativity_extremes(const ParamBox& box, const EntitativityModel& model) {
  for (int i = 0; i < ParamBox::kDims; ++i) {
    if (box.dim(i).min > box.dim(i).max)
      throw std::invalid_argument("entitativity_extremes: box has min > max");
  }
  // Affine in each parameter: per-dimension sign rule picks the extreme ends.
  double lo = model.entitativity_coeffs[0];
  double hi = model.entitativity_coeffs[0];
  for (int i = 0; i < ParamBox::kDims; ++i) {
    const double a = model.entitativity_coeffs[i + 1];
    const ParamRange& r = box.dim(i);
    lo += a * (a >= 0.0 ? r.min : r.max);
    hi += a * (a >= 0.0 ? r.max : r.min);
  }
  return {lo, hi};
}

double entitativity_error(double e_ground, double e_pred, const ParamBox& box,
                          const EntitativityModel& model) {
  if (!std::isfinite(e_ground) || !std::isfinite(e_pred))
    throw std::invalid_argument("entitativity_error: non-finite value");
  const EntitativityRange range = entitativity_extremes(box, model);
  if (range.span() <= 0.0)
    throw std::domain_error("entitativity_error: attainable range is degenerate");
  return std::abs(e_ground - e_pred) / range.span();
}

double normalize_entitativity(double raw, const EntitativityRange& range) {
  if (range.span() <= 0.0)
    throw std::domain_error("normalize_entitativity: degenerate range");
  return (raw - range.min) / range.span();
}

LabeledEntitativity label_params(const MotionParams& gp, const ParamBox& box,
                                 const EntitativityModel& model) {
  LabeledEntitativity out;
  out.label.raw = predict_entitativity(gp, model);
  const EntitativityRange range = entitativity_extremes(box, model);
  if (range.span() <= 0.0)
    throw std::domain_error("label_params: attainable range is degenerate");
  double n = normalize_entitativity(out.label.raw, range);
  out.out_of_box = !box.contains(gp);
  if (n < 0.0) n = 0.0;
  if (n > 1.0) n = 1.0;
  out.label.normalized = n;
  return out;
}

}  // namespace entikit
