#include "entikit/estimation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace entikit {

namespace {

constexpr double kTimeEps = 1e-9;
// Below this speed a filtered velocity carries no usable heading.
constexpr double kStandstillSpeed = 0.05;

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(p * static_cast<double>(v.size() - 1) + 0.5);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

struct DisjointSet {
  std::vector<int> parent;

  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int i) { return parent[i] == i ? i : parent[i] = find(parent[i]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

// One ensemble filter sweep over a track with fixed noise parameters.
// States are (px, py, vx, vy); only positions are observed. Velocity is
// seeded from the first displacement with a matching ensemble spread so the
// update step can correct it quickly.
struct FilterPass {
  std::vector<Vec2> mean_pos;
  std::vector<Vec2> mean_vel;
};

FilterPass run_filter_pass(const std::vector<TrajectorySample>& z, double dt, int ensemble,
                           double qx, double qy, double rx, double ry, std::uint64_t seed,
                           int agent_id) {
  const std::size_t steps = z.size();
  const auto n = static_cast<std::size_t>(ensemble);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  // Initial velocity from a short least-squares slope instead of a single
  // displacement; on noisy input this shrinks the start-up transient that
  // otherwise dominates the velocity error.
  const std::size_t fit_n = std::min<std::size_t>(5, steps);
  double v0x = 0.0, v0y = 0.0, slope_denom = 0.0;
  {
    const double t_bar = 0.5 * static_cast<double>(fit_n - 1) * dt;
    double sxz = 0.0, syz = 0.0;
    for (std::size_t k = 0; k < fit_n; ++k) {
      const double dtk = static_cast<double>(k) * dt - t_bar;
      sxz += dtk * z[k].position.x;
      syz += dtk * z[k].position.y;
      slope_denom += dtk * dtk;
    }
    v0x = sxz / slope_denom;
    v0y = syz / slope_denom;
  }

  std::vector<double> px(n), py(n), vx(n), vy(n);
  const double sx = std::sqrt(rx), sy = std::sqrt(ry);
  const double sv_x = std::sqrt(rx / slope_denom);
  const double sv_y = std::sqrt(ry / slope_denom);
  // Antithetic pairs: exact zero-mean perturbations halve the sampling noise
  // the ensemble injects into the reported means.
  const std::size_t half = n / 2;
  for (std::size_t m = 0; m < half; ++m) {
    const double e1 = unit(rng), e2 = unit(rng), e3 = unit(rng), e4 = unit(rng);
    px[m] = z[0].position.x + sx * e1;
    py[m] = z[0].position.y + sy * e2;
    vx[m] = v0x + sv_x * e3;
    vy[m] = v0y + sv_y * e4;
    px[m + half] = z[0].position.x - sx * e1;
    py[m + half] = z[0].position.y - sy * e2;
    vx[m + half] = v0x - sv_x * e3;
    vy[m + half] = v0y - sv_y * e4;
  }
  if (n % 2 != 0) {
    px[n - 1] = z[0].position.x;
    py[n - 1] = z[0].position.y;
    vx[n - 1] = v0x;
    vy[n - 1] = v0y;
  }

  // Per-axis Cholesky factor of the white-acceleration process covariance
  // [[q dt^3/3, q dt^2/2], [q dt^2/2, q dt]].
  const double l11x = std::sqrt(qx * dt * dt * dt / 3.0);
  const double l21x = std::sqrt(3.0 * qx * dt) / 2.0;
  const double l22x = std::sqrt(qx * dt) / 2.0;
  const double l11y = std::sqrt(qy * dt * dt * dt / 3.0);
  const double l21y = std::sqrt(3.0 * qy * dt) / 2.0;
  const double l22y = std::sqrt(qy * dt) / 2.0;

  FilterPass out;
  out.mean_pos.reserve(steps);
  out.mean_vel.reserve(steps);
  const double inv_n = 1.0 / static_cast<double>(n);
  auto record_mean = [&](std::size_t t) {
    Vec2 p{}, v{};
    for (std::size_t m = 0; m < n; ++m) {
      p += Vec2{px[m], py[m]};
      v += Vec2{vx[m], vy[m]};
    }
    p = p * inv_n;
    v = v * inv_n;
    if (!p.finite() || !v.finite() || p.squared_norm() > 1e18) {
      throw EstimationFailure(agent_id, "filter diverged at step " + std::to_string(t));
    }
    out.mean_pos.push_back(p);
    out.mean_vel.push_back(v);
  };
  record_mean(0);

  // Scratch for antithetic draws: members [0, half) get fresh noise, members
  // [half, 2*half) the mirrored values, a trailing odd member none.
  std::vector<std::array<double, 4>> draws(half);

  for (std::size_t t = 1; t < steps; ++t) {
    for (std::size_t m = 0; m < n; ++m) {
      double flip = 1.0;
      std::array<double, 4> e{};
      if (m < half) {
        e = {unit(rng), unit(rng), unit(rng), unit(rng)};
        draws[m] = e;
      } else if (m < 2 * half) {
        e = draws[m - half];
        flip = -1.0;
      }
      px[m] += vx[m] * dt + flip * l11x * e[0];
      vx[m] += flip * (l21x * e[0] + l22x * e[1]);
      py[m] += vy[m] * dt + flip * l11y * e[2];
      vy[m] += flip * (l21y * e[2] + l22y * e[3]);
    }

    double mpx = 0, mpy = 0, mvx = 0, mvy = 0;
    for (std::size_t m = 0; m < n; ++m) {
      mpx += px[m];
      mpy += py[m];
      mvx += vx[m];
      mvy += vy[m];
    }
    mpx *= inv_n;
    mpy *= inv_n;
    mvx *= inv_n;
    mvy *= inv_n;

    double c_pp_x = 0, c_pp_y = 0, c_pxpy = 0;
    double c_vxpx = 0, c_vxpy = 0, c_vypx = 0, c_vypy = 0;
    for (std::size_t m = 0; m < n; ++m) {
      const double ax = px[m] - mpx, ay = py[m] - mpy;
      const double bx = vx[m] - mvx, by = vy[m] - mvy;
      c_pp_x += ax * ax;
      c_pp_y += ay * ay;
      c_pxpy += ax * ay;
      c_vxpx += bx * ax;
      c_vxpy += bx * ay;
      c_vypx += by * ax;
      c_vypy += by * ay;
    }
    const double inv_nm1 = 1.0 / static_cast<double>(n - 1);
    c_pp_x *= inv_nm1;
    c_pp_y *= inv_nm1;
    c_pxpy *= inv_nm1;
    c_vxpx *= inv_nm1;
    c_vxpy *= inv_nm1;
    c_vypx *= inv_nm1;
    c_vypy *= inv_nm1;

    const double s00 = c_pp_x + rx;
    const double s11 = c_pp_y + ry;
    const double s01 = c_pxpy;
    const double det = s00 * s11 - s01 * s01;
    if (std::isfinite(det) && det > std::numeric_limits<double>::min() && s00 > 0.0 &&
        s11 > 0.0) {
      const double i00 = s11 / det, i01 = -s01 / det, i11 = s00 / det;
      // Kalman gain rows for (px, py, vx, vy) against the two position obs.
      const double k_px0 = c_pp_x * i00 + c_pxpy * i01;
      const double k_px1 = c_pp_x * i01 + c_pxpy * i11;
      const double k_py0 = c_pxpy * i00 + c_pp_y * i01;
      const double k_py1 = c_pxpy * i01 + c_pp_y * i11;
      const double k_vx0 = c_vxpx * i00 + c_vxpy * i01;
      const double k_vx1 = c_vxpx * i01 + c_vxpy * i11;
      const double k_vy0 = c_vypx * i00 + c_vypy * i01;
      const double k_vy1 = c_vypx * i01 + c_vypy * i11;
      for (std::size_t m = 0; m < n; ++m) {
        double ox = 0.0, oy = 0.0;
        if (m < half) {
          ox = unit(rng);
          oy = unit(rng);
          draws[m][0] = ox;
          draws[m][1] = oy;
        } else if (m < 2 * half) {
          ox = -draws[m - half][0];
          oy = -draws[m - half][1];
        }
        const double ex = z[t].position.x + sx * ox - px[m];
        const double ey = z[t].position.y + sy * oy - py[m];
        px[m] += k_px0 * ex + k_px1 * ey;
        py[m] += k_py0 * ex + k_py1 * ey;
        vx[m] += k_vx0 * ex + k_vx1 * ey;
        vy[m] += k_vy0 * ex + k_vy1 * ey;
      }
    }
    record_mean(t);
  }
  return out;
}

// One EM update of (r, q) along one axis of the constant-velocity model.
// Exact Kalman forward pass plus RTS smoothing; the M-step uses smoothed
// means, covariances and lag-one covariances, so successive updates never
// decrease the likelihood (no runaway feedback on curved tracks).
struct AxisNoise {
  double r, q;
};

AxisNoise axis_em_update(const std::vector<double>& z, double dt, double r, double q,
                         double floor) {
  using Eigen::Matrix2d;
  using Eigen::Vector2d;
  const std::size_t n = z.size();

  const Matrix2d f{{1.0, dt}, {0.0, 1.0}};
  const Matrix2d g{{dt * dt * dt / 3.0, dt * dt / 2.0}, {dt * dt / 2.0, dt}};
  const Matrix2d q_mat = q * g;

  std::vector<Vector2d> mean_f(n), mean_p(n);
  std::vector<Matrix2d> cov_f(n), cov_p(n);

  // Two-point start: position from the first sample, velocity from the first
  // displacement (both carry observation noise, hence the cross term).
  mean_f[0] = Vector2d(z[0], (z[1] - z[0]) / dt);
  cov_f[0] = Matrix2d{{r, -r / dt}, {-r / dt, 2.0 * r / (dt * dt)}};
  mean_p[0] = mean_f[0];
  cov_p[0] = cov_f[0];

  for (std::size_t k = 1; k < n; ++k) {
    mean_p[k] = f * mean_f[k - 1];
    cov_p[k] = f * cov_f[k - 1] * f.transpose() + q_mat;
    const double s = cov_p[k](0, 0) + r;
    const Vector2d gain = cov_p[k].col(0) / s;
    mean_f[k] = mean_p[k] + gain * (z[k] - mean_p[k](0));
    cov_f[k] = cov_p[k] - gain * cov_p[k].row(0);
  }

  // RTS smoothing with lag-one covariances P(k+1,k|n) = P(k+1|n) J(k)^T.
  std::vector<Vector2d> mean_s(n);
  std::vector<Matrix2d> cov_s(n), smoother_gain(n);
  mean_s[n - 1] = mean_f[n - 1];
  cov_s[n - 1] = cov_f[n - 1];
  for (std::size_t k = n - 1; k-- > 0;) {
    const Matrix2d j = cov_f[k] * f.transpose() * cov_p[k + 1].inverse();
    smoother_gain[k] = j;
    mean_s[k] = mean_f[k] + j * (mean_s[k + 1] - mean_p[k + 1]);
    cov_s[k] = cov_f[k] + j * (cov_s[k + 1] - cov_p[k + 1]) * j.transpose();
  }

  double r_acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double res = z[k] - mean_s[k](0);
    r_acc += res * res + cov_s[k](0, 0);
  }

  Matrix2d c = Matrix2d::Zero();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const Matrix2d lag = cov_s[k + 1] * smoother_gain[k].transpose();
    const Matrix2d a = cov_s[k + 1] + mean_s[k + 1] * mean_s[k + 1].transpose();
    const Matrix2d b = lag + mean_s[k + 1] * mean_s[k].transpose();
    const Matrix2d d = cov_s[k] + mean_s[k] * mean_s[k].transpose();
    c += a - b * f.transpose() - f * b.transpose() + f * d * f.transpose();
  }
  const double q_new =
      (g.inverse() * c).trace() / (2.0 * static_cast<double>(n - 1));

  return {std::max(floor, r_acc / static_cast<double>(n)),
          std::max(floor, q_new)};
}

StateTrack estimate_single_track(const ObservedTrack& track, double dt,
                                 const EnkfOptions& opt) {
  if (track.samples.size() < 2) {
    throw std::invalid_argument("track " + std::to_string(track.agent_id) +
                                ": needs at least two samples");
  }
  double rx = opt.initial_obs_var, ry = opt.initial_obs_var;
  double qx = opt.initial_proc_var, qy = opt.initial_proc_var;
  const std::uint64_t seed =
      opt.seed ^ mix64(static_cast<std::uint64_t>(static_cast<std::int64_t>(track.agent_id)));

  std::vector<double> zx, zy;
  zx.reserve(track.samples.size());
  zy.reserve(track.samples.size());
  for (const TrajectorySample& s : track.samples) {
    if (!std::isfinite(s.t) || !s.position.finite()) {
      throw EstimationFailure(track.agent_id, "non-finite sample");
    }
    zx.push_back(s.position.x);
    zy.push_back(s.position.y);
  }

  for (int iter = 0; iter < opt.max_em_iterations; ++iter) {
    const AxisNoise nx = axis_em_update(zx, dt, rx, qx, opt.noise_floor);
    const AxisNoise ny = axis_em_update(zy, dt, ry, qy, opt.noise_floor);
    double rel = 0.0;
    for (const auto [nu, old] : {std::pair{nx.r, rx}, {ny.r, ry}, {nx.q, qx},
                                 {ny.q, qy}}) {
      rel = std::max(rel, std::abs(nu - old) / std::max(std::abs(old), opt.noise_floor));
    }
    rx = nx.r;
    ry = ny.r;
    qx = nx.q;
    qy = ny.q;
    if (rel < opt.em_tolerance) break;
  }

  const FilterPass pass = run_filter_pass(track.samples, dt, opt.ensemble_size, qx, qy, rx,
                                          ry, seed, track.agent_id);

  StateTrack st;
  st.agent_id = track.agent_id;
  st.group_hint = track.group_hint;
  st.t0 = track.samples.front().t;
  st.dt = dt;
  st.noise = {rx, ry, qx, qy};

  std::vector<double> speeds;
  speeds.reserve(pass.mean_vel.size());
  for (const Vec2& v : pass.mean_vel) speeds.push_back(v.norm());
  const double pref_speed = std::clamp(percentile(speeds, 0.9), 1.0, 2.0);
  const Vec2 endpoint = pass.mean_pos.back();

  st.states.resize(pass.mean_pos.size());
  Vec2 heading = pass.mean_vel.front().normalized();
  for (std::size_t k = 0; k < st.states.size(); ++k) {
    PedestrianState& s = st.states[k];
    s.position = pass.mean_pos[k];
    s.velocity = pass.mean_vel[k];
    const Vec2 to_end = endpoint - s.position;
    if (to_end.norm() > 0.5) heading = to_end.normalized();
    s.preferred_velocity = pref_speed * heading;
  }
  return st;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

double infer_timestep(const std::vector<ObservedTrack>& tracks) {
  std::vector<double> diffs;
  for (const ObservedTrack& tr : tracks) {
    for (std::size_t k = 0; k + 1 < tr.samples.size(); ++k) {
      const double d = tr.samples[k + 1].t - tr.samples[k].t;
      if (std::isfinite(d) && d > kTimeEps) diffs.push_back(d);
    }
  }
  return diffs.empty() ? 0.1 : median(std::move(diffs));
}

}  // namespace

EstimationFailure::EstimationFailure(int agent_id, const std::string& what)
    : std::runtime_error("track " + std::to_string(agent_id) + ": " + what),
      agent_id_(agent_id) {}

bool track_usable(const ObservedTrack& track) {
  return track.samples.size() >= kMinUsableSamples;
}

ObservedTrack resample(const ObservedTrack& track, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt))
    throw std::invalid_argument("resample: dt must be positive and finite");
  const std::string tag = "track " + std::to_string(track.agent_id);
  if (track.samples.size() < 2) throw std::invalid_argument(tag + ": needs at least two samples");

  std::vector<TrajectorySample> s = track.samples;
  for (const TrajectorySample& sm : s) {
    if (!std::isfinite(sm.t)) throw std::invalid_argument(tag + ": non-finite sample time");
  }
  std::stable_sort(s.begin(), s.end(),
                   [](const TrajectorySample& a, const TrajectorySample& b) { return a.t < b.t; });
  s.erase(std::unique(s.begin(), s.end(),
                      [](const TrajectorySample& a, const TrajectorySample& b) {
                        return std::abs(a.t - b.t) <= kTimeEps;
                      }),
          s.end());
  if (s.size() < 2) throw std::invalid_argument(tag + ": needs two distinct sample times");

  const double t0 = s.front().t;
  const double t1 = s.back().t;
  if (t1 - t0 + kTimeEps < 2.0 * dt) {
    std::ostringstream oss;
    oss << tag << ": spans " << (t1 - t0) << " s, too short for two steps at dt=" << dt;
    throw std::invalid_argument(oss.str());
  }

  ObservedTrack out;
  out.agent_id = track.agent_id;
  out.group_hint = track.group_hint;
  const auto count = static_cast<std::size_t>(std::floor((t1 - t0) / dt + kTimeEps)) + 1;
  out.samples.reserve(count);
  std::size_t idx = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    while (idx + 2 < s.size() && s[idx + 1].t <= t) ++idx;
    const TrajectorySample& a = s[idx];
    const TrajectorySample& b = s[idx + 1];
    const double u = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
    out.samples.push_back({t, a.position + u * (b.position - a.position)});
  }
  return out;
}

EstimatedStates enkf_em_estimate(const std::vector<ObservedTrack>& tracks,
                                 const EnkfOptions& options) {
  if (options.ensemble_size < 2)
    throw std::invalid_argument("enkf_em_estimate: ensemble_size must be >= 2");
  if (options.max_em_iterations < 1)
    throw std::invalid_argument("enkf_em_estimate: max_em_iterations must be >= 1");
  if (!(options.em_tolerance > 0.0) || !(options.initial_obs_var > 0.0) ||
      !(options.initial_proc_var > 0.0) || !(options.noise_floor > 0.0))
    throw std::invalid_argument("enkf_em_estimate: tolerances and variances must be positive");

  EstimatedStates out;
  if (tracks.empty()) return out;

  double dt = 0.0;
  for (const ObservedTrack& tr : tracks) {
    const std::string tag = "track " + std::to_string(tr.agent_id);
    if (tr.samples.size() < 2) throw std::invalid_argument(tag + ": needs at least two samples");
    for (std::size_t k = 0; k + 1 < tr.samples.size(); ++k) {
      const double d = tr.samples[k + 1].t - tr.samples[k].t;
      if (!(d > 0.0) || !std::isfinite(d))
        throw std::invalid_argument(tag + ": sample times must strictly increase");
      if (dt == 0.0) {
        dt = d;
      } else if (std::abs(d - dt) > 1e-6 * dt) {
        throw std::invalid_argument(tag + ": tracks must share one uniform sampling step");
      }
    }
  }
  out.dt = dt;
  out.tracks.reserve(tracks.size());
  for (const ObservedTrack& tr : tracks) {
    out.tracks.push_back(estimate_single_track(tr, dt, options));
  }
  return out;
}

GroupAssignment cluster_groups(const EstimatedStates& states, const ClusterOptions& options) {
  if (!(options.max_distance > 0.0) || !(options.max_direction_diff > 0.0) ||
      !(options.max_speed_diff > 0.0) || !(options.min_overlap_fraction > 0.0) ||
      options.min_overlap_fraction > 1.0)
    throw std::invalid_argument("cluster_groups: thresholds must be positive");

  const auto& trk = states.tracks;
  const auto n = trk.size();
  DisjointSet dsu(n);

  // Gate on headings taken from ~1 s position displacements. Instantaneous
  // filtered velocity swings with every avoidance maneuver, which would tear
  // apart groups that walk in contact.
  std::vector<std::vector<Vec2>> gate_vel(n);
  for (std::size_t i = 0; i < n; ++i) {
    const StateTrack& st = trk[i];
    const auto m = st.states.size();
    gate_vel[i].resize(m);
    if (m == 0 || !(st.dt > 0.0)) continue;
    const auto half = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.5 / st.dt)));
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t lo = k >= half ? k - half : 0;
      const std::size_t hi = std::min(k + half, m - 1);
      gate_vel[i][k] = hi > lo ? (st.states[hi].position - st.states[lo].position) /
                                     (static_cast<double>(hi - lo) * st.dt)
                               : st.states[k].velocity;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const StateTrack& a = trk[i];
      const StateTrack& b = trk[j];
      if (a.states.empty() || b.states.empty() || !(a.dt > 0.0) || !(b.dt > 0.0)) continue;
      const double lo = std::max(a.t0, b.t0);
      const double hi = std::min(a.end_time(), b.end_time());
      if (hi - lo < -kTimeEps) continue;

      const auto ka0 = static_cast<std::size_t>(
          std::max(0.0, std::ceil((lo - a.t0) / a.dt - kTimeEps)));
      const auto ka1 = static_cast<std::size_t>(
          std::max(0.0, std::floor((hi - a.t0) / a.dt + kTimeEps)));
      int total = 0, close = 0;
      for (std::size_t ka = ka0; ka <= ka1 && ka < a.states.size(); ++ka) {
        const double t = a.time_at(ka);
        const auto kb_signed = std::llround((t - b.t0) / b.dt);
        if (kb_signed < 0) continue;
        const auto kb = static_cast<std::size_t>(kb_signed);
        if (kb >= b.states.size()) continue;
        if (std::abs(b.time_at(kb) - t) > 0.5 * b.dt + kTimeEps) continue;
        ++total;

        const PedestrianState& sa = a.states[ka];
        const PedestrianState& sb = b.states[kb];
        if (distance(sa.position, sb.position) >= options.max_distance) continue;
        const Vec2& va = gate_vel[i][ka];
        const Vec2& vb = gate_vel[j][kb];
        const double speed_a = va.norm();
        const double speed_b = vb.norm();
        if (std::abs(speed_a - speed_b) >= options.max_speed_diff) continue;
        const bool moving_a = speed_a > kStandstillSpeed;
        const bool moving_b = speed_b > kStandstillSpeed;
        if (moving_a != moving_b) continue;  // one walks, one stands
        if (moving_a && angle_between(va, vb) >= options.max_direction_diff) continue;
        ++close;
      }
      if (total >= 2 &&
          static_cast<double>(close) >=
              options.min_overlap_fraction * static_cast<double>(total) - kTimeEps) {
        dsu.unite(static_cast<int>(i), static_cast<int>(j));
      }
    }
  }

  std::unordered_map<int, std::vector<int>> by_root;
  for (std::size_t i = 0; i < n; ++i) {
    by_root[dsu.find(static_cast<int>(i))].push_back(trk[i].agent_id);
  }
  std::vector<std::vector<int>> groups;
  groups.reserve(by_root.size());
  for (auto& [root, ids] : by_root) {
    std::sort(ids.begin(), ids.end());
    groups.push_back(std::move(ids));
  }
  std::sort(groups.begin(), groups.end(),
            [](const auto& x, const auto& y) { return x.front() < y.front(); });

  GroupAssignment out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int id : groups[g]) out.group_of[id] = static_cast<int>(g);
    out.members[static_cast<int>(g)] = std::move(groups[g]);
  }
  return out;
}

namespace {

struct MemberObs {
  int agent_id = 0;
  std::vector<Vec2> positions;   // one per step of the common window
  std::vector<Vec2> velocities;  // filtered, same indexing
};

// Re-simulation segment length. Short segments keep the replay anchored to
// the data: the true goals are unknown, and over a long horizon the error of
// aiming at a projected endpoint compounds until it drowns the parameter
// signal. A few seconds is long enough for cohesion and avoidance to act.
constexpr double kResimSegmentSeconds = 2.5;

// Mean per-step position error of a re-simulation under candidate
// parameters. Each member is replayed alone against the others' recorded
// trajectories (a coupled replay would let every avoidance choice feed back
// on the rest of the group, so tiny parameter changes flip the outcome and
// bury the cost surface in noise), in segments restarted from the observed
// state and aimed at the observed segment endpoint (projected forward when
// the member is still walking there, so the replay does not decelerate at an
// arbitrary cut). Mirrors the simulator's per-step policy.
double resim_cost(const std::vector<MemberObs>& obs, const MotionParams& candidate, double dt,
                  std::size_t n_steps) {
  const auto seg_steps =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(kResimSegmentSeconds / dt)));
  const std::size_t n_members = obs.size();
  static const std::vector<Segment> kNoObstacles;

  std::vector<Agent> crowd(n_members);
  for (std::size_t m = 0; m < n_members; ++m) {
    crowd[m].id = obs[m].agent_id;
    crowd[m].group_id = 0;
    crowd[m].params = candidate;
  }

  double err = 0.0;
  std::vector<const Agent*> neighbors;
  auto replay_segment = [&](std::size_t i, std::size_t s0, std::size_t s1) {
    Agent self = crowd[i];
    self.state.position = obs[i].positions[s0];
    self.state.velocity = obs[i].velocities[s0];
    self.goal = obs[i].positions[s1];
    if (obs[i].velocities[s1].norm() > kStandstillSpeed) {
      // Still walking at the segment cut: project the goal well past it so
      // the replay does not decelerate there. Aim along the trailing
      // displacement; the instantaneous velocity swings during avoidance.
      const std::size_t back = s1 - std::min<std::size_t>(s1 - s0, 10);
      Vec2 dir = (obs[i].positions[s1] - obs[i].positions[back]).normalized();
      if (dir.squared_norm() == 0.0) dir = obs[i].velocities[s1].normalized();
      self.goal += 10.0 * dir;
    }
    bool arrived = false;

    for (std::size_t k = s0; k < s1; ++k) {
      for (std::size_t m = 0; m < n_members; ++m) {
        crowd[m].state.position = obs[m].positions[k];
        crowd[m].state.velocity = obs[m].velocities[k];
      }
      crowd[i].state = self.state;

      if (!arrived && distance(self.state.position, self.goal) <= kGoalTolerance)
        arrived = true;
      Vec2 v_new;
      if (!arrived) {
        self.state.preferred_velocity = preferred_velocity(self, crowd);
        neighbors.clear();
        const double reach2 = candidate.neighbor_dist * candidate.neighbor_dist;
        for (std::size_t m = 0; m < n_members; ++m) {
          if (m == i) continue;
          if ((crowd[m].state.position - self.state.position).squared_norm() <= reach2)
            neighbors.push_back(&crowd[m]);
        }
        const auto cap = static_cast<std::size_t>(candidate.max_neighbors);
        if (neighbors.size() > cap) {
          std::partial_sort(
              neighbors.begin(), neighbors.begin() + static_cast<std::ptrdiff_t>(cap),
              neighbors.end(), [&](const Agent* x, const Agent* y) {
                const double dx = (x->state.position - self.state.position).squared_norm();
                const double dy = (y->state.position - self.state.position).squared_norm();
                return dx != dy ? dx < dy : x->id < y->id;
              });
          neighbors.resize(cap);
        }
        v_new = compute_new_velocity(self, neighbors, kNoObstacles, dt);
      }
      self.state = integrate(self.state, v_new, dt);
      err += distance(self.state.position, obs[i].positions[k + 1]);
    }
  };

  // Two segmentations offset by half a segment: a boundary that cuts through
  // an avoidance maneuver in one phase falls mid-segment in the other, so
  // restart artifacts average out instead of steering the fit.
  const std::size_t phase_first[2] = {seg_steps, std::max<std::size_t>(1, seg_steps / 2)};
  for (std::size_t i = 0; i < n_members; ++i) {
    for (const std::size_t first : phase_first) {
      std::size_t s0 = 0;
      while (s0 < n_steps) {
        const std::size_t s1 = std::min(s0 + (s0 == 0 ? first : seg_steps), n_steps);
        replay_segment(i, s0, s1);
        s0 = s1;
      }
    }
  }
  return err / (2.0 * static_cast<double>(n_steps) * static_cast<double>(n_members));
}

MotionParams params_from(const std::array<double, 4>& x) {
  MotionParams p;
  p.neighbor_dist = x[0];
  p.radius = x[1];
  p.pref_speed = x[2];
  p.group_cohesion = x[3];
  return p;
}

}  // namespace

ParamEstimate estimate_params(const EstimatedStates& states, const GroupAssignment& groups,
                              int group_id, const ParamBox& box) {
  if (!box.valid()) throw std::invalid_argument("estimate_params: invalid parameter box");
  const auto git = groups.members.find(group_id);
  if (git == groups.members.end())
    throw std::invalid_argument("estimate_params: unknown group id " + std::to_string(group_id));
  const std::vector<int>& member_ids = git->second;
  const std::string tag = "group " + std::to_string(group_id);
  if (member_ids.size() < 2)
    throw std::invalid_argument("estimate_params: " + tag + " needs at least two members");

  std::vector<const StateTrack*> member_tracks;
  member_tracks.reserve(member_ids.size());
  for (int id : member_ids) {
    const StateTrack* found = nullptr;
    for (const StateTrack& st : states.tracks) {
      if (st.agent_id == id) {
        found = &st;
        break;
      }
    }
    if (!found || found->states.size() < 2)
      throw std::invalid_argument("estimate_params: " + tag + " references missing track " +
                                  std::to_string(id));
    member_tracks.push_back(found);
  }

  const double dt = states.dt > 0.0 ? states.dt : member_tracks.front()->dt;
  double t_lo = -std::numeric_limits<double>::infinity();
  double t_hi = std::numeric_limits<double>::infinity();
  for (const StateTrack* st : member_tracks) {
    t_lo = std::max(t_lo, st->t0);
    t_hi = std::min(t_hi, st->end_time());
  }
  if (t_hi - t_lo < 3.0 - kTimeEps) {
    std::ostringstream oss;
    oss << tag << ": members overlap for " << std::max(0.0, t_hi - t_lo)
        << " s, need at least 3 s";
    throw InsufficientOverlapError(oss.str());
  }

  const auto n_steps = static_cast<std::size_t>(std::floor((t_hi - t_lo) / dt + kTimeEps));
  std::vector<MemberObs> obs;
  obs.reserve(member_tracks.size());
  double speed_sum = 0.0;
  std::size_t speed_count = 0;
  for (const StateTrack* st : member_tracks) {
    MemberObs m;
    m.agent_id = st->agent_id;
    const auto off = static_cast<std::size_t>(
        std::max<std::ptrdiff_t>(0, std::llround((t_lo - st->t0) / dt)));
    m.positions.reserve(n_steps + 1);
    m.velocities.reserve(n_steps + 1);
    for (std::size_t k = 0; k <= n_steps; ++k) {
      const std::size_t idx = std::min(off + k, st->states.size() - 1);
      m.positions.push_back(st->states[idx].position);
      m.velocities.push_back(st->states[idx].velocity);
      // Walking speed only; samples where the agent already stands at its
      // goal would drag the average toward zero.
      const double sp = st->states[idx].velocity.norm();
      if (sp > kStandstillSpeed) {
        speed_sum += sp;
        ++speed_count;
      }
    }
    obs.push_back(std::move(m));
  }

  const double observed_speed =
      speed_count > 0 ? speed_sum / static_cast<double>(speed_count) : 0.0;
  const bool speed_oob = !box.pref_speed.contains(observed_speed);

  // Cohesion and neighbor distance act through their ratio whenever members
  // stay closer than neighbor_dist, so the fit cost can have an exact ridge.
  // A tiny pull toward the box defaults decides such ties; it is far below
  // any real trajectory mismatch and does not move identifiable parameters.
  constexpr double kDefaultsTiebreak = 1e-3;
  auto default_dist2 = [&](const std::array<double, 4>& x) {
    double s = 0.0;
    for (int d = 0; d < ParamBox::kDims; ++d) {
      const ParamRange& r = box.dim(d);
      const double span = std::max(r.max - r.min, 1e-12);
      const double u = (x[static_cast<std::size_t>(d)] - r.def) / span;
      s += u * u;
    }
    return s;
  };

  std::map<std::array<double, 4>, double> cache;
  auto eval = [&](const std::array<double, 4>& x) {
    const auto it = cache.find(x);
    if (it != cache.end()) return it->second;
    const double c =
        resim_cost(obs, params_from(x), dt, n_steps) + kDefaultsTiebreak * default_dist2(x);
    cache.emplace(x, c);
    return c;
  };

  std::array<std::vector<double>, 4> grid;
  for (int d = 0; d < ParamBox::kDims; ++d) {
    const ParamRange& r = box.dim(d);
    grid[d] = {r.min, r.def, r.max};
  }
  grid[2] = {box.pref_speed.min, box.pref_speed.clamp(observed_speed), box.pref_speed.max};
  for (auto& g : grid) {
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end(),
                        [](double a, double b) { return std::abs(a - b) < 1e-12; }),
            g.end());
  }

  std::array<double, 4> best{};
  double best_cost = std::numeric_limits<double>::infinity();
  for (double nd : grid[0]) {
    for (double r : grid[1]) {
      for (double s : grid[2]) {
        for (double gc : grid[3]) {
          const std::array<double, 4> x{nd, r, s, gc};
          const double c = eval(x);
          if (c < best_cost) {
            best_cost = c;
            best = x;
          }
        }
      }
    }
  }

  std::array<double, 4> step{}, min_step{};
  for (int d = 0; d < ParamBox::kDims; ++d) {
    step[d] = box.dim(d).span() / 4.0;
    min_step[d] = box.dim(d).span() / 100.0;
  }
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool improved = false;
    for (int d = 0; d < ParamBox::kDims; ++d) {
      if (!(step[d] > 0.0)) continue;
      for (const double sign : {-1.0, 1.0}) {
        std::array<double, 4> cand = best;
        cand[d] = box.dim(d).clamp(best[d] + sign * step[d]);
        if (std::abs(cand[d] - best[d]) < 1e-15) continue;
        const double c = eval(cand);
        if (c + 1e-12 < best_cost) {
          best_cost = c;
          best = cand;
          improved = true;
        }
      }
    }
    if (!improved) {
      bool any_left = false;
      for (int d = 0; d < ParamBox::kDims; ++d) {
        step[d] *= 0.5;
        if (step[d] >= min_step[d]) any_left = true;
      }
      if (!any_left) break;
    }
  }

  ParamEstimate out;
  out.params = params_from(best);
  // Report the pure trajectory mismatch, without the tie-break term.
  out.mean_position_error = resim_cost(obs, out.params, dt, n_steps);
  out.low_confidence = out.mean_position_error > 5.0;
  out.speed_out_of_box = speed_oob;
  return out;
}

std::vector<GroupReport> classify(const std::vector<ObservedTrack>& tracks,
                                  const ClassifyOptions& options) {
  const double dt = options.dt > 0.0 ? options.dt : infer_timestep(tracks);

  std::vector<ObservedTrack> resampled;
  resampled.reserve(tracks.size());
  for (const ObservedTrack& tr : tracks) {
    if (!track_usable(tr)) continue;
    try {
      resampled.push_back(resample(tr, dt));
    } catch (const std::invalid_argument&) {
      // too short or degenerate at this dt; not usable
    }
  }
  if (resampled.empty()) return {};

  EstimatedStates est;
  est.dt = dt;
  std::vector<std::pair<int, std::string>> broken;
  for (const ObservedTrack& rt : resampled) {
    try {
      EstimatedStates one = enkf_em_estimate({rt}, options.enkf);
      est.tracks.push_back(std::move(one.tracks.front()));
    } catch (const std::exception& e) {
      broken.emplace_back(rt.agent_id, e.what());
    }
  }

  GroupAssignment assignment;
  if (!est.tracks.empty()) assignment = cluster_groups(est, options.cluster);

  std::unordered_map<int, int> hint_of;
  for (const ObservedTrack& rt : resampled) hint_of[rt.agent_id] = rt.group_hint;

  // Reported ids follow the majority input hint per cluster when unique.
  std::set<int> used_ids;
  std::map<int, int> report_id;
  for (const auto& [cg, members] : assignment.members) {
    std::map<int, int> votes;
    for (int id : members) {
      const auto h = hint_of.find(id);
      if (h != hint_of.end() && h->second >= 0) ++votes[h->second];
    }
    int best_hint = -1, best_votes = 0;
    for (const auto& [hint, count] : votes) {
      if (count > best_votes) {
        best_votes = count;
        best_hint = hint;
      }
    }
    if (best_hint >= 0 && !used_ids.count(best_hint)) {
      report_id[cg] = best_hint;
      used_ids.insert(best_hint);
    }
  }
  int next_free = 0;
  auto take_free = [&] {
    while (used_ids.count(next_free)) ++next_free;
    used_ids.insert(next_free);
    return next_free;
  };
  for (const auto& [cg, members] : assignment.members) {
    if (!report_id.count(cg)) report_id[cg] = take_free();
  }

  std::vector<GroupReport> out;
  out.reserve(assignment.members.size() + broken.size());
  for (const auto& [cg, members] : assignment.members) {
    GroupReport r;
    r.group_id = report_id[cg];
    r.members = members;

    bool flag_oob = false, flag_lowconf = false, flag_singleton = false;
    if (members.size() == 1) {
      flag_singleton = true;
      const StateTrack* st = nullptr;
      for (const StateTrack& t : est.tracks) {
        if (t.agent_id == members.front()) st = &t;
      }
      std::vector<double> speeds;
      for (const PedestrianState& s : st->states) speeds.push_back(s.velocity.norm());
      const double speed = percentile(std::move(speeds), 0.9);
      r.params = options.box.defaults();
      r.params.pref_speed = options.box.pref_speed.clamp(speed);
      flag_oob = !options.box.pref_speed.contains(speed);
    } else {
      try {
        const ParamEstimate pe = estimate_params(est, assignment, cg, options.box);
        r.params = pe.params;
        flag_lowconf = pe.low_confidence;
        flag_oob = pe.speed_out_of_box;
      } catch (const std::exception& e) {
        r.error = e.what();
        out.push_back(std::move(r));
        continue;
      }
    }

    r.features = predict_features(r.params, options.model);
    const LabeledEntitativity labeled = label_params(r.params, options.box, options.model);
    r.label = labeled.label;
    if (labeled.out_of_box) flag_oob = true;
    if (flag_oob) r.flags.emplace_back(kFlagOutOfBox);
    if (flag_lowconf) r.flags.emplace_back(kFlagLowConfidence);
    if (flag_singleton) r.flags.emplace_back(kFlagCohesionNotIdentifiable);
    out.push_back(std::move(r));
  }

  for (const auto& [agent_id, message] : broken) {
    GroupReport r;
    r.group_id = take_free();
    r.members = {agent_id};
    r.error = message;
    out.push_back(std::move(r));
  }

  std::sort(out.begin(), out.end(),
            [](const GroupReport& a, const GroupReport& b) { return a.group_id < b.group_id; });
  return out;
}

std::vector<WindowEstimate> sliding_window_estimates(const std::vector<ObservedTrack>& tracks,
                                                     const OnlineOptions& options) {
  if (!(options.window_seconds > 0.0) || !(options.hop_seconds > 0.0))
    throw std::invalid_argument("sliding_window_estimates: window and hop must be positive");
  if (!(options.smoothing_alpha > 0.0) || options.smoothing_alpha > 1.0)
    throw std::invalid_argument("sliding_window_estimates: smoothing_alpha must be in (0,1]");

  const double dt =
      options.classify.dt > 0.0 ? options.classify.dt : infer_timestep(tracks);

  std::vector<ObservedTrack> resampled;
  for (const ObservedTrack& tr : tracks) {
    if (!track_usable(tr)) continue;
    try {
      resampled.push_back(resample(tr, dt));
    } catch (const std::invalid_argument&) {
    }
  }
  if (resampled.empty()) return {};

  EstimatedStates est;
  est.dt = dt;
  for (const ObservedTrack& rt : resampled) {
    try {
      EstimatedStates one = enkf_em_estimate({rt}, options.classify.enkf);
      est.tracks.push_back(std::move(one.tracks.front()));
    } catch (const std::exception&) {
    }
  }
  if (est.tracks.empty()) return {};

  // Group membership is decided once over the full recording; windows only
  // re-estimate the motion parameters.
  const GroupAssignment assignment = cluster_groups(est, options.classify.cluster);

  double t_min = std::numeric_limits<double>::infinity();
  double t_max = -std::numeric_limits<double>::infinity();
  for (const StateTrack& st : est.tracks) {
    t_min = std::min(t_min, st.t0);
    t_max = std::max(t_max, st.end_time());
  }

  std::map<int, MotionParams> smoothed;
  std::vector<WindowEstimate> out;
  const double alpha = options.smoothing_alpha;
  for (double t = t_min; t + options.window_seconds <= t_max + kTimeEps;
       t += options.hop_seconds) {
    const double t_end = t + options.window_seconds;
    EstimatedStates window;
    window.dt = dt;
    for (const StateTrack& st : est.tracks) {
      const auto k0 = static_cast<std::ptrdiff_t>(std::ceil((t - st.t0) / dt - kTimeEps));
      const auto k1 = static_cast<std::ptrdiff_t>(std::floor((t_end - st.t0) / dt + kTimeEps));
      const auto lo = std::max<std::ptrdiff_t>(k0, 0);
      const auto hi = std::min<std::ptrdiff_t>(k1, static_cast<std::ptrdiff_t>(st.states.size()) - 1);
      if (hi - lo + 1 < 2) continue;
      StateTrack slice;
      slice.agent_id = st.agent_id;
      slice.group_hint = st.group_hint;
      slice.t0 = st.t0 + static_cast<double>(lo) * dt;
      slice.dt = dt;
      slice.noise = st.noise;
      slice.states.assign(st.states.begin() + lo, st.states.begin() + hi + 1);
      window.tracks.push_back(std::move(slice));
    }

    std::set<int> present;
    for (const StateTrack& st : window.tracks) present.insert(st.agent_id);

    for (const auto& [gid, members] : assignment.members) {
      std::vector<int> here;
      for (int id : members) {
        if (present.count(id)) here.push_back(id);
      }
      if (here.size() < 2) continue;
      GroupAssignment ga;
      for (int id : here) ga.group_of[id] = gid;
      ga.members[gid] = here;
      ParamEstimate pe;
      try {
        pe = estimate_params(window, ga, gid, options.classify.box);
      } catch (const std::exception&) {
        continue;  // not enough overlap inside this window
      }

      auto [it, first_window] = smoothed.try_emplace(gid, pe.params);
      if (!first_window) {
        MotionParams& s = it->second;
        s.neighbor_dist = alpha * pe.params.neighbor_dist + (1.0 - alpha) * s.neighbor_dist;
        s.radius = alpha * pe.params.radius + (1.0 - alpha) * s.radius;
        s.pref_speed = alpha * pe.params.pref_speed + (1.0 - alpha) * s.pref_speed;
        s.group_cohesion =
            alpha * pe.params.group_cohesion + (1.0 - alpha) * s.group_cohesion;
      }
      out.push_back({t, t_end, gid, it->second});
    }
  }
  return out;
}

}  // namespace entikit
