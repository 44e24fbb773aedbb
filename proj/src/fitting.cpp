#include "entikit/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Dense>

namespace entikit {

namespace {

std::array<double, 4> feature_array(const FeatureVector& f) {
  return {f.friendliness, f.creepiness, f.comfort, f.unnerving};
}

std::array<double, 4> analyzed_params(const MotionParams& p) {
  return {p.neighbor_dist, p.radius, p.pref_speed, p.group_cohesion};
}

// Continued-fraction core of the regularized incomplete beta function
// (modified Lentz iteration).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 400;
  constexpr double kEps = 1e-12;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(x))
    throw std::invalid_argument("incomplete beta: invalid arguments");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // Strict comparison: at the exact threshold the mirrored argument would sit
  // on its own threshold again and the reflection would recurse forever.
  if (x > (a + 1.0) / (a + b + 2.0)) {
    return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
  }
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  return std::exp(ln_front) * beta_continued_fraction(a, b, x) / a;
}

double column_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

FittingError::FittingError(std::string stage, const std::string& what)
    : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

std::vector<StimulusAverage> average_by_stimulus(const StudyDataset& data) {
  if (data.rows.empty()) throw FittingError("average", "dataset has no rows");
  std::map<int, StimulusAverage> acc;
  for (const StudyRow& row : data.rows) {
    if (!row.params.finite() || !row.ratings.finite())
      throw FittingError("average",
                         "row for stimulus " + std::to_string(row.stimulus_id) +
                             " has non-finite values");
    auto [it, fresh] = acc.try_emplace(row.stimulus_id);
    StimulusAverage& s = it->second;
    if (fresh) {
      s.stimulus_id = row.stimulus_id;
      s.params = row.params;
    } else {
      const auto a = analyzed_params(s.params);
      const auto b = analyzed_params(row.params);
      for (int k = 0; k < 4; ++k) {
        if (std::abs(a[k] - b[k]) > 1e-9)
          throw FittingError("average", "stimulus " + std::to_string(row.stimulus_id) +
                                            " has inconsistent motion parameters");
      }
    }
    s.mean_ratings.friendliness += row.ratings.friendliness;
    s.mean_ratings.creepiness += row.ratings.creepiness;
    s.mean_ratings.comfort += row.ratings.comfort;
    s.mean_ratings.unnerving += row.ratings.unnerving;
    ++s.n_raters;
  }
  std::vector<StimulusAverage> out;
  out.reserve(acc.size());
  for (auto& [id, s] : acc) {
    const double inv = 1.0 / s.n_raters;
    s.mean_ratings.friendliness *= inv;
    s.mean_ratings.creepiness *= inv;
    s.mean_ratings.comfort *= inv;
    s.mean_ratings.unnerving *= inv;
    out.push_back(std::move(s));
  }
  return out;
}

PcaResult pca_first_component(const std::vector<FeatureVector>& rows) {
  if (rows.size() < 2) throw FittingError("pca", "needs at least two rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto f = feature_array(rows[static_cast<std::size_t>(i)]);
    for (int j = 0; j < 4; ++j) {
      if (!std::isfinite(f[j])) throw FittingError("pca", "non-finite feature value");
      x(i, j) = f[j];
    }
  }
  const Eigen::RowVector4d mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::Matrix4d cov = x.transpose() * x / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(cov);
  if (solver.info() != Eigen::Success)
    throw FittingError("pca", "eigen decomposition failed");
  const Eigen::Vector4d values = solver.eigenvalues();  // ascending
  const double total = values.sum();
  if (!(total > 1e-15)) throw FittingError("pca", "features carry no variance");

  Eigen::Vector4d first = solver.eigenvectors().col(3);
  // Fix the sign so the creepiness loading is positive (unnerving breaks
  // ties when creepiness happens to be orthogonal).
  double pivot = first(1) != 0.0 ? first(1) : first(3);
  if (pivot == 0.0) pivot = first(0) != 0.0 ? -first(0) : 1.0;
  if (pivot < 0.0) first = -first;

  PcaResult out;
  for (int j = 0; j < 4; ++j) out.loadings[static_cast<std::size_t>(j)] = first(j);
  out.explained_variance_ratio = values(3) / total;
  return out;
}

OlsFit ols_fit(const std::vector<std::vector<double>>& rows,
               const std::vector<double>& response) {
  if (rows.empty() || rows.size() != response.size())
    throw std::invalid_argument("ols_fit: rows and response sizes differ or are empty");
  const std::size_t k = rows.front().size();
  if (k == 0) throw std::invalid_argument("ols_fit: rows need at least one regressor");
  const std::size_t n = rows.size();
  const std::size_t p = k + 1;
  if (n <= p)
    throw std::invalid_argument("ols_fit: needs more rows than coefficients (n > " +
                                std::to_string(p) + ")");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != k) throw std::invalid_argument("ols_fit: ragged rows");
    x(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(rows[i][j])) throw std::invalid_argument("ols_fit: non-finite regressor");
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = rows[i][j];
    }
    if (!std::isfinite(response[i])) throw std::invalid_argument("ols_fit: non-finite response");
    y(static_cast<Eigen::Index>(i)) = response[i];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < static_cast<Eigen::Index>(p))
    throw std::invalid_argument("ols_fit: design matrix is rank-deficient");
  const Eigen::VectorXd beta = qr.solve(y);

  const Eigen::VectorXd fitted = x * beta;
  const double ss_res = (y - fitted).squaredNorm();
  const double y_mean = y.mean();
  const double ss_tot = (y.array() - y_mean).square().sum();

  OlsFit out;
  out.coefficients.assign(beta.data(), beta.data() + beta.size());
  if (ss_tot <= 1e-300) {
    out.r_squared = 0.0;
    out.f_statistic = 0.0;
    out.p_value = 1.0;
    return out;
  }
  out.r_squared = 1.0 - ss_res / ss_tot;
  const double df1 = static_cast<double>(p - 1);
  const double df2 = static_cast<double>(n - p);
  const double ss_reg = ss_tot - ss_res;
  if (ss_res <= 1e-300) {
    out.f_statistic = std::numeric_limits<double>::infinity();
    out.p_value = 0.0;
  } else {
    out.f_statistic = (ss_reg / df1) / (ss_res / df2);
    out.p_value = f_distribution_tail(out.f_statistic, df1, df2);
  }
  return out;
}

double f_distribution_tail(double f, double df1, double df2) {
  if (!(df1 > 0.0) || !(df2 > 0.0))
    throw std::invalid_argument("f_distribution_tail: degrees of freedom must be positive");
  if (!std::isfinite(f)) return f > 0.0 ? 0.0 : 1.0;
  if (f <= 0.0) return 1.0;
  const double x = df2 / (df2 + df1 * f);
  return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, x);
}

std::array<std::array<double, 4>, 4> correlation_matrix(const std::vector<FeatureVector>& rows) {
  if (rows.size() < 2) throw std::invalid_argument("correlation_matrix: needs at least two rows");
  std::array<std::vector<double>, 4> cols;
  for (const FeatureVector& f : rows) {
    const auto v = feature_array(f);
    for (int j = 0; j < 4; ++j) cols[static_cast<std::size_t>(j)].push_back(v[j]);
  }
  std::array<double, 4> mean{}, var{};
  for (int j = 0; j < 4; ++j) {
    mean[j] = column_mean(cols[j]);
    for (double v : cols[j]) var[j] += (v - mean[j]) * (v - mean[j]);
  }
  std::array<std::array<double, 4>, 4> out{};
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      if (a == b) {
        out[a][b] = 1.0;
        continue;
      }
      if (var[a] <= 0.0 || var[b] <= 0.0) {
        out[a][b] = 0.0;
        continue;
      }
      double cov = 0.0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        cov += (cols[a][i] - mean[a]) * (cols[b][i] - mean[b]);
      }
      out[a][b] = cov / std::sqrt(var[a] * var[b]);
    }
  }
  return out;
}

double cronbach_alpha(const std::vector<std::vector<double>>& item_scores) {
  if (item_scores.size() < 2)
    throw std::invalid_argument("cronbach_alpha: needs at least two respondents");
  const std::size_t k = item_scores.front().size();
  if (k < 2) throw std::invalid_argument("cronbach_alpha: needs at least two items");
  const std::size_t n = item_scores.size();

  std::vector<double> totals(n, 0.0);
  std::vector<double> item_mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (item_scores[i].size() != k) throw std::invalid_argument("cronbach_alpha: ragged rows");
    for (std::size_t j = 0; j < k; ++j) {
      item_mean[j] += item_scores[i][j];
      totals[i] += item_scores[i][j];
    }
  }
  for (double& m : item_mean) m /= static_cast<double>(n);
  const double total_mean = column_mean(totals);

  double item_var_sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v += (item_scores[i][j] - item_mean[j]) * (item_scores[i][j] - item_mean[j]);
    }
    item_var_sum += v / static_cast<double>(n - 1);
  }
  double total_var = 0.0;
  for (double t : totals) total_var += (t - total_mean) * (t - total_mean);
  total_var /= static_cast<double>(n - 1);
  if (total_var <= 0.0) return 0.0;

  const double kk = static_cast<double>(k);
  return kk / (kk - 1.0) * (1.0 - item_var_sum / total_var);
}

double entitativity_scale_alpha(const std::vector<FeatureVector>& ratings, double scale_min,
                                double scale_max) {
  if (!(scale_min < scale_max))
    throw std::invalid_argument("entitativity_scale_alpha: scale endpoints must be ordered");
  std::vector<std::vector<double>> items;
  items.reserve(ratings.size());
  const double flip = scale_max + scale_min;
  for (const FeatureVector& f : ratings) {
    // Friendliness and comfort run against the other two; reverse them so
    // all four items point the same way.
    items.push_back({flip - f.friendliness, f.creepiness, flip - f.comfort, f.unnerving});
  }
  return cronbach_alpha(items);
}

ModelBundle refit_pipeline(const StudyDataset& data, const ParamBox& box) {
  if (!box.valid()) throw FittingError("dataset", "invalid parameter box");
  if (data.rows.empty()) throw FittingError("dataset", "no rows");
  if (!(data.scale_min < data.scale_max))
    throw FittingError("dataset", "scale endpoints must be ordered");

  const std::vector<StimulusAverage> stimuli = average_by_stimulus(data);
  if (stimuli.size() < static_cast<std::size_t>(kMinStimuli)) {
    throw FittingError("average", "needs at least " + std::to_string(kMinStimuli) +
                                      " distinct stimuli, got " +
                                      std::to_string(stimuli.size()));
  }

  std::vector<FeatureVector> means;
  means.reserve(stimuli.size());
  for (const StimulusAverage& s : stimuli) means.push_back(s.mean_ratings);
  const PcaResult pca = pca_first_component(means);

  std::vector<double> labels;
  labels.reserve(stimuli.size());
  for (const FeatureVector& m : means) {
    const auto f = feature_array(m);
    double v = 0.0;
    for (int j = 0; j < 4; ++j) v += pca.loadings[static_cast<std::size_t>(j)] * f[j];
    labels.push_back(v);
  }
  const auto [lo_it, hi_it] = std::minmax_element(labels.begin(), labels.end());
  // Copy the extremes before the loop rewrites the elements they point into.
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi - lo > 1e-12))
    throw FittingError("normalize", "projected labels are constant across stimuli");
  for (double& v : labels) v = (v - lo) / (hi - lo);

  std::vector<std::vector<double>> design;
  design.reserve(stimuli.size());
  for (const StimulusAverage& s : stimuli) {
    const auto gp = analyzed_params(s.params);
    design.push_back({gp[0], gp[1], gp[2], gp[3]});
  }

  ModelBundle out;
  out.n_stimuli = static_cast<int>(stimuli.size());
  out.pca_explained = pca.explained_variance_ratio;
  out.model.pca_loadings = pca.loadings;
  try {
    out.entitativity_fit = ols_fit(design, labels);
    for (int fdim = 0; fdim < 4; ++fdim) {
      std::vector<double> y;
      y.reserve(means.size());
      for (const FeatureVector& m : means) y.push_back(feature_array(m)[fdim]);
      out.feature_fits[static_cast<std::size_t>(fdim)] = ols_fit(design, y);
    }
  } catch (const std::invalid_argument& e) {
    throw FittingError("regression", e.what());
  }
  for (int j = 0; j < 5; ++j) {
    out.model.entitativity_coeffs[static_cast<std::size_t>(j)] =
        out.entitativity_fit.coefficients[static_cast<std::size_t>(j)];
    for (int fdim = 0; fdim < 4; ++fdim) {
      out.model.feature_matrix[static_cast<std::size_t>(fdim)][static_cast<std::size_t>(j)] =
          out.feature_fits[static_cast<std::size_t>(fdim)].coefficients[static_cast<std::size_t>(j)];
    }
  }

  std::vector<FeatureVector> raw;
  raw.reserve(data.rows.size());
  for (const StudyRow& r : data.rows) raw.push_back(r.ratings);
  try {
    out.alpha = entitativity_scale_alpha(raw, data.scale_min, data.scale_max);
  } catch (const std::invalid_argument& e) {
    throw FittingError("alpha", e.what());
  }

  out.box = box;
  out.range = entitativity_extremes(box, out.model);
  return out;
}

}  // namespace entikit
