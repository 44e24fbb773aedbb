#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "entikit/fitting.hpp"

using entikit::EntitativityModel;
using entikit::FeatureVector;
using entikit::FittingError;
using entikit::MotionParams;
using entikit::ParamBox;
using entikit::StudyDataset;
using entikit::StudyRow;

namespace {

MotionParams corner_params(int mask) {
  const ParamBox box = ParamBox::study();
  MotionParams p;
  p.neighbor_dist = (mask & 1) ? box.neighbor_dist.max : box.neighbor_dist.min;
  p.radius = (mask & 2) ? box.radius.max : box.radius.min;
  p.pref_speed = (mask & 4) ? box.pref_speed.max : box.pref_speed.min;
  p.group_cohesion = (mask & 8) ? box.group_cohesion.max : box.group_cohesion.min;
  return p;
}

// Noise-free questionnaire: every corner of the box is a stimulus and both
// raters answer with the generator's exact feature predictions.
StudyDataset exact_dataset(const EntitativityModel& generator) {
  StudyDataset data;
  for (int mask = 0; mask < 16; ++mask) {
    const MotionParams p = corner_params(mask);
    const FeatureVector f = entikit::predict_features(p, generator);
    for (int rater = 0; rater < 2; ++rater) {
      data.rows.push_back({100 + rater, mask, p, f});
    }
  }
  return data;
}

}  // namespace

TEST_CASE("stimulus averaging pools raters and orders by stimulus id") {
  StudyDataset data;
  MotionParams pa = corner_params(0);
  MotionParams pb = corner_params(15);
  data.rows.push_back({1, 3, pb, {4.0, 5.0, 2.0, 3.0}});
  data.rows.push_back({2, 1, pa, {1.0, 2.0, 3.0, 4.0}});
  data.rows.push_back({3, 3, pb, {2.0, 3.0, 4.0, 5.0}});

  const auto avg = entikit::average_by_stimulus(data);
  REQUIRE(avg.size() == 2);
  CHECK(avg[0].stimulus_id == 1);
  CHECK(avg[0].n_raters == 1);
  CHECK(avg[1].stimulus_id == 3);
  CHECK(avg[1].n_raters == 2);
  CHECK(avg[1].mean_ratings.friendliness == doctest::Approx(3.0));
  CHECK(avg[1].mean_ratings.creepiness == doctest::Approx(4.0));
  CHECK(avg[1].mean_ratings.comfort == doctest::Approx(3.0));
  CHECK(avg[1].mean_ratings.unnerving == doctest::Approx(4.0));
  CHECK(avg[1].params.neighbor_dist == doctest::Approx(pb.neighbor_dist));
}

TEST_CASE("stimulus averaging rejects inconsistent parameters and empty data") {
  StudyDataset data;
  data.rows.push_back({1, 3, corner_params(0), {}});
  data.rows.push_back({2, 3, corner_params(1), {}});  // same stimulus, other params
  try {
    entikit::average_by_stimulus(data);
    FAIL("expected FittingError");
  } catch (const FittingError& e) {
    CHECK(e.stage() == "average");
  }
  CHECK_THROWS_AS(entikit::average_by_stimulus(StudyDataset{}), FittingError);
}

TEST_CASE("pca recovers a rank-one direction exactly") {
  const std::array<double, 4> d{0.4, -0.5, 0.6, -0.2};
  const double norm = std::sqrt(0.16 + 0.25 + 0.36 + 0.04);
  std::vector<FeatureVector> rows;
  for (const double t : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    rows.push_back({3.0 + t * d[0], 1.0 + t * d[1], 2.0 + t * d[2], 4.0 + t * d[3]});
  }
  const entikit::PcaResult pca = entikit::pca_first_component(rows);
  CHECK(pca.explained_variance_ratio == doctest::Approx(1.0).epsilon(1e-12));
  // Sign convention: the creepiness loading comes out positive, so the
  // recovered axis is -d/|d|.
  CHECK(pca.loadings[0] == doctest::Approx(-d[0] / norm).epsilon(1e-9));
  CHECK(pca.loadings[1] == doctest::Approx(-d[1] / norm).epsilon(1e-9));
  CHECK(pca.loadings[2] == doctest::Approx(-d[2] / norm).epsilon(1e-9));
  CHECK(pca.loadings[3] == doctest::Approx(-d[3] / norm).epsilon(1e-9));
  const double unit = pca.loadings[0] * pca.loadings[0] + pca.loadings[1] * pca.loadings[1] +
                      pca.loadings[2] * pca.loadings[2] + pca.loadings[3] * pca.loadings[3];
  CHECK(unit == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pca rejects degenerate inputs") {
  CHECK_THROWS_AS(entikit::pca_first_component({FeatureVector{}}), FittingError);
  const std::vector<FeatureVector> flat(4, FeatureVector{1.0, 2.0, 3.0, 4.0});
  try {
    entikit::pca_first_component(flat);
    FAIL("expected FittingError");
  } catch (const FittingError& e) {
    CHECK(e.stage() == "pca");
  }
}

TEST_CASE("least squares matches the hand-worked univariate fit") {
  // x = {0,1,2}, y = {1,3,4}: slope 1.5, intercept 7/6, SSE 1/6, SSR 4.5.
  const std::vector<std::vector<double>> rows{{0.0}, {1.0}, {2.0}};
  const std::vector<double> y{1.0, 3.0, 4.0};
  const entikit::OlsFit fit = entikit::ols_fit(rows, y);
  REQUIRE(fit.coefficients.size() == 2);
  CHECK(fit.coefficients[0] == doctest::Approx(7.0 / 6.0).epsilon(1e-12));
  CHECK(fit.coefficients[1] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(fit.r_squared == doctest::Approx(27.0 / 28.0).epsilon(1e-12));
  CHECK(fit.f_statistic == doctest::Approx(27.0).epsilon(1e-9));
  // p = P(F(1,1) > 27) = 1 - (2/pi) atan(sqrt(27)).
  const double p = 1.0 - (2.0 / M_PI) * std::atan(std::sqrt(27.0));
  CHECK(fit.p_value == doctest::Approx(p).epsilon(1e-6));
}

TEST_CASE("least squares reproduces an exact plane") {
  const std::vector<std::vector<double>> rows{
      {0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {2.0, 1.0}};
  std::vector<double> y;
  for (const auto& r : rows) y.push_back(2.0 + r[0] - 0.5 * r[1]);
  const entikit::OlsFit fit = entikit::ols_fit(rows, y);
  REQUIRE(fit.coefficients.size() == 3);
  CHECK(fit.coefficients[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(fit.coefficients[1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(fit.coefficients[2] == doctest::Approx(-0.5).epsilon(1e-10));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("least squares rejects degenerate designs") {
  CHECK_THROWS_AS(entikit::ols_fit({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(entikit::ols_fit({{1.0}, {2.0}}, {1.0, 2.0}),
                  std::invalid_argument);  // n == k+1
  CHECK_THROWS_AS(entikit::ols_fit({{1.0}, {2.0, 3.0}, {4.0}}, {1.0, 2.0, 3.0}),
                  std::invalid_argument);  // ragged
  // Duplicate column: rank deficient.
  CHECK_THROWS_AS(entikit::ols_fit({{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}, {4.0, 4.0}},
                                   {1.0, 2.0, 3.0, 4.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      entikit::ols_fit({{std::nan("")}, {1.0}, {2.0}}, {0.0, 1.0, 2.0}),
      std::invalid_argument);
}

TEST_CASE("f distribution tail matches closed forms") {
  // F(1,1): tail(f) = 1 - (2/pi) atan(sqrt(f)); at f=1 exactly one half.
  CHECK(entikit::f_distribution_tail(1.0, 1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-8));
  // F(2,2): tail(f) = 1/(1+f).
  CHECK(entikit::f_distribution_tail(3.0, 2.0, 2.0) == doctest::Approx(0.25).epsilon(1e-8));
  CHECK(entikit::f_distribution_tail(0.0, 4.0, 7.0) == doctest::Approx(1.0));
  // Reciprocal identity: P(F(a,b) > f) = 1 - P(F(b,a) > 1/f).
  const double lhs = entikit::f_distribution_tail(2.5, 3.0, 5.0);
  const double rhs = 1.0 - entikit::f_distribution_tail(1.0 / 2.5, 5.0, 3.0);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8));
  CHECK_THROWS_AS(entikit::f_distribution_tail(1.0, 0.0, 2.0), std::invalid_argument);
}

TEST_CASE("feature correlations follow the constructed columns") {
  // friendliness = t, creepiness = -t, comfort = 2t, unnerving = t^2;
  // odd/even symmetry makes the quadratic column uncorrelated.
  std::vector<FeatureVector> rows;
  for (const double t : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    rows.push_back({t, -t, 2.0 * t, t * t});
  }
  const auto c = entikit::correlation_matrix(rows);
  for (int i = 0; i < 4; ++i) CHECK(c[i][i] == doctest::Approx(1.0));
  CHECK(c[0][1] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(c[0][2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c[1][2] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(c[0][3] == doctest::Approx(0.0));
  CHECK(c[1][3] == doctest::Approx(0.0));
  CHECK(c[2][3] == doctest::Approx(0.0));
  CHECK(c[3][0] == doctest::Approx(c[0][3]));
  CHECK_THROWS_AS(entikit::correlation_matrix({FeatureVector{}}), std::invalid_argument);
}

TEST_CASE("cronbach alpha matches a hand-computed two-item fixture") {
  // Items {2,4,6} and {1,2,3}: variances 4 and 1, total variance 9,
  // alpha = 2 * (1 - 5/9) = 8/9.
  const std::vector<std::vector<double>> scores{{2.0, 1.0}, {4.0, 2.0}, {6.0, 3.0}};
  CHECK(entikit::cronbach_alpha(scores) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
  CHECK_THROWS_AS(entikit::cronbach_alpha({{1.0, 2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(entikit::cronbach_alpha({{1.0}, {2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(entikit::cronbach_alpha({{1.0, 2.0}, {1.0}}), std::invalid_argument);
}

TEST_CASE("scale alpha reverse-scores friendliness and comfort") {
  // Underlying construct x with friendliness/comfort answered as 7 - x on a
  // 1..6 scale: after reverse-scoring all four items coincide, so the
  // questionnaire is perfectly consistent.
  std::vector<FeatureVector> ratings;
  for (const double x : {2.0, 3.0, 5.0}) {
    ratings.push_back({7.0 - x, x, 7.0 - x, x});
  }
  CHECK(entikit::entitativity_scale_alpha(ratings, 1.0, 6.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(entikit::entitativity_scale_alpha(ratings, 6.0, 1.0), std::invalid_argument);
}

TEST_CASE("refit recovers the generating coefficients from a clean study") {
  // Generate from a deliberately non-default model so the pipeline cannot
  // pass by echoing its built-in constants.
  EntitativityModel generator = EntitativityModel::published();
  generator.feature_matrix[0] = {0.10, 0.30, -0.20, 0.50, 0.25};
  generator.feature_matrix[2] = {-0.40, 0.15, 0.45, -0.30, 0.60};

  const StudyDataset data = exact_dataset(generator);
  const entikit::ModelBundle bundle = entikit::refit_pipeline(data);

  CHECK(bundle.n_stimuli == 16);
  for (int f = 0; f < 4; ++f) {
    REQUIRE(bundle.feature_fits[f].coefficients.size() == 5);
    CHECK(bundle.feature_fits[f].r_squared == doctest::Approx(1.0).epsilon(1e-9));
    for (int j = 0; j < 5; ++j) {
      CHECK(bundle.model.feature_matrix[f][j] ==
            doctest::Approx(generator.feature_matrix[f][j]).epsilon(1e-6));
      CHECK(bundle.feature_fits[f].coefficients[j] ==
            doctest::Approx(generator.feature_matrix[f][j]).epsilon(1e-6));
    }
  }
  // Labels are an affine image of the parameters, so their fit is exact and
  // the min-max normalization puts the box extremes at 0 and 1.
  CHECK(bundle.entitativity_fit.r_squared == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(bundle.range.min == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(bundle.range.max == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(bundle.pca_explained > 0.5);
  CHECK(std::isfinite(bundle.alpha));

  // The refit coefficients reproduce the stimuli labels through the public
  // prediction path.
  double lo = 1e9, hi = -1e9;
  for (int mask = 0; mask < 16; ++mask) {
    const double e = entikit::predict_entitativity(corner_params(mask), bundle.model);
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  CHECK(lo == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("refit names the stage that fails") {
  // Too few stimuli.
  StudyDataset small = exact_dataset(EntitativityModel::published());
  small.rows.erase(std::remove_if(small.rows.begin(), small.rows.end(),
                                  [](const StudyRow& r) { return r.stimulus_id >= 5; }),
                   small.rows.end());
  try {
    entikit::refit_pipeline(small);
    FAIL("expected FittingError");
  } catch (const FittingError& e) {
    CHECK(e.stage() == "average");
  }

  // Ratings identical everywhere: no variance for the pca stage.
  StudyDataset flat = exact_dataset(EntitativityModel::published());
  for (StudyRow& r : flat.rows) r.ratings = {3.0, 3.0, 3.0, 3.0};
  try {
    entikit::refit_pipeline(flat);
    FAIL("expected FittingError");
  } catch (const FittingError& e) {
    CHECK(e.stage() == "pca");
  }

  StudyDataset bad_scale = exact_dataset(EntitativityModel::published());
  bad_scale.scale_min = 9.0;
  try {
    entikit::refit_pipeline(bad_scale);
    FAIL("expected FittingError");
  } catch (const FittingError& e) {
    CHECK(e.stage() == "dataset");
  }
}
