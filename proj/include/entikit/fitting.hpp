#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "entikit/core_model.hpp"

namespace entikit {

// One questionnaire response: a participant rated one stimulus (a simulated
// group driven by `params`) on the four scales.
struct StudyRow {
  int participant_id = 0;
  int stimulus_id = 0;
  MotionParams params;
  FeatureVector ratings;
};

struct StudyDataset {
  std::vector<StudyRow> rows;
  double scale_min = 1.0;  // questionnaire endpoints, used for reverse-scoring
  double scale_max = 6.0;
};

struct StimulusAverage {
  int stimulus_id = 0;
  MotionParams params;
  FeatureVector mean_ratings;
  int n_raters = 0;
};

// Mean ratings per stimulus, ordered by stimulus id. Rows of one stimulus
// must agree on the motion parameters.
std::vector<StimulusAverage> average_by_stimulus(const StudyDataset& data);

struct PcaResult {
  std::array<double, 4> loadings;  // unit norm, creepiness component positive
  double explained_variance_ratio = 0.0;
};

// First principal component of the four feature columns.
PcaResult pca_first_component(const std::vector<FeatureVector>& rows);

struct OlsFit {
  std::vector<double> coefficients;  // intercept first
  double r_squared = 0.0;
  double f_statistic = 0.0;
  double p_value = 1.0;
};

// Least squares with intercept; rows are regressor tuples (no intercept
// column). Needs more rows than coefficients and a full-rank design.
OlsFit ols_fit(const std::vector<std::vector<double>>& rows, const std::vector<double>& response);

// Upper tail of the F distribution via the regularized incomplete beta
// function (continued-fraction evaluation, |error| < 1e-8).
double f_distribution_tail(double f, double df1, double df2);

// Pearson correlations between the four feature columns.
std::array<std::array<double, 4>, 4> correlation_matrix(const std::vector<FeatureVector>& rows);

// Cronbach's alpha; rows are respondents, columns items.
double cronbach_alpha(const std::vector<std::vector<double>>& item_scores);

// Alpha of the four-scale questionnaire with friendliness and comfort
// reverse-scored against the scale endpoints.
double entitativity_scale_alpha(const std::vector<FeatureVector>& ratings, double scale_min,
                                double scale_max);

class FittingError : public std::runtime_error {
 public:
  FittingError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

constexpr int kMinStimuli = 6;

// Everything a refit produces; can replace the published coefficients.
struct ModelBundle {
  EntitativityModel model;
  ParamBox box;
  EntitativityRange range;  // raw label extremes over the box
  double alpha = 0.0;       // scale consistency of the raw ratings
  double pca_explained = 0.0;
  OlsFit entitativity_fit;
  std::array<OlsFit, 4> feature_fits;
  int n_stimuli = 0;
};

// Full calibration from raw study rows: average per stimulus, extract the
// principal component of the mean ratings, min-max normalize the projected
// labels across stimuli, then regress the labels and each mean feature on
// the four motion parameters. Throws FittingError naming the failing stage.
ModelBundle refit_pipeline(const StudyDataset& data, const ParamBox& box = ParamBox::study());

}  // namespace entikit
