#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "entikit/core_model.hpp"
#include "entikit/sim.hpp"

namespace entikit {

// Pre-extracted 2D trajectory of one pedestrian, possibly irregular in time.
struct ObservedTrack {
  int agent_id = 0;
  int group_hint = -1;  // group id carried by the input file, -1 when unknown
  std::vector<TrajectorySample> samples;
};

constexpr std::size_t kMinUsableSamples = 5;

bool track_usable(const ObservedTrack& track);

// Linear interpolation onto a uniform grid spanning the track's time range.
// Throws std::invalid_argument when the track spans less than two steps.
ObservedTrack resample(const ObservedTrack& track, double dt);

struct NoiseEstimate {
  double obs_var_x = 0.0;   // observation noise variance, m^2
  double obs_var_y = 0.0;
  double proc_var_x = 0.0;  // white-acceleration density, m^2/s^3
  double proc_var_y = 0.0;
};

struct StateTrack {
  int agent_id = 0;
  int group_hint = -1;
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<PedestrianState> states;
  NoiseEstimate noise;

  double time_at(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
  double end_time() const { return states.empty() ? t0 : time_at(states.size() - 1); }
};

struct EstimatedStates {
  double dt = 0.0;
  std::vector<StateTrack> tracks;
};

struct EnkfOptions {
  int ensemble_size = 50;
  int max_em_iterations = 20;
  double em_tolerance = 1e-3;     // relative change of noise parameters
  double initial_obs_var = 0.01;  // (0.1 m)^2
  double initial_proc_var = 0.1;
  double noise_floor = 1e-12;
  std::uint64_t seed = 0x9e3779b97f4a7c15ull;
};

class EstimationFailure : public std::runtime_error {
 public:
  EstimationFailure(int agent_id, const std::string& what);
  int agent_id() const { return agent_id_; }

 private:
  int agent_id_;
};

// Ensemble Kalman filter with a constant-velocity process model and
// position-only observations; expectation-maximization re-estimates the
// per-axis process/observation noise between filter passes. Tracks must
// already be resampled to a common dt. Preferred velocity is estimated as
// the direction toward the track's endpoint at the 90th-percentile filtered
// speed, clamped to [1.0, 2.0] m/s.
// Throws EstimationFailure when a filter diverges.
EstimatedStates enkf_em_estimate(const std::vector<ObservedTrack>& tracks,
                                 const EnkfOptions& options = {});

struct ClusterOptions {
  // Two pedestrians pair when, over at least min_overlap_fraction of their
  // temporal overlap, they are closer than max_distance, heading within
  // max_direction_diff of each other, and within max_speed_diff in speed.
  // Groups are the transitive closure of the pairing relation.
  double max_distance = 4.0;                     // m
  double max_direction_diff = 30.0 * M_PI / 180.0;  // rad
  double max_speed_diff = 0.5;                   // m/s
  double min_overlap_fraction = 0.7;
};

struct GroupAssignment {
  std::map<int, int> group_of;              // agent_id -> group_id
  std::map<int, std::vector<int>> members;  // group_id -> sorted agent ids
};

// Every agent is assigned; singletons allowed. Group ids are consecutive,
// ordered by each group's smallest agent id.
GroupAssignment cluster_groups(const EstimatedStates& states,
                               const ClusterOptions& options = {});

struct ParamEstimate {
  MotionParams params;          // inside the box
  double mean_position_error = 0.0;  // m, re-simulation vs observation
  bool low_confidence = false;  // nothing simulated within 5 m of the data
  bool speed_out_of_box = false;  // observed speed fell outside the box
};

class InsufficientOverlapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Recovers the group's motion parameters by re-simulating the group from its
// initial estimated states and minimizing the mean per-step position error
// against the observations. Search: 81-candidate coarse grid (3 points per
// dimension, pref_speed seeded from the observed mean speed) followed by
// coordinate descent with step halving down to 1% of each range.
// Requires >= 2 members with >= 3 s of common overlap.
ParamEstimate estimate_params(const EstimatedStates& states, const GroupAssignment& groups,
                              int group_id, const ParamBox& box = ParamBox::study());

struct GroupReport {
  int group_id = -1;
  std::vector<int> members;
  MotionParams params;
  FeatureVector features;
  EntitativityLabel label;
  std::vector<std::string> flags;  // "out_of_box", "low_confidence", ...
  std::string error;               // non-empty when this group failed

  bool ok() const { return error.empty(); }
};

// Flag strings used in reports.
inline constexpr const char* kFlagOutOfBox = "out_of_box";
inline constexpr const char* kFlagLowConfidence = "low_confidence";
inline constexpr const char* kFlagCohesionNotIdentifiable = "cohesion_not_identifiable";

struct ClassifyOptions {
  double dt = 0.0;  // resampling step; 0 = infer from the data
  ParamBox box = ParamBox::study();
  ClusterOptions cluster;
  EnkfOptions enkf;
  EntitativityModel model = EntitativityModel::published();
};

// Full pipeline: resample -> filter -> cluster -> fit parameters -> predict.
// Groups that fail carry their error; other groups are unaffected. Reported
// group ids follow the majority of the members' input group hints when
// present. Singleton groups keep the box-default cohesion and are flagged.
std::vector<GroupReport> classify(const std::vector<ObservedTrack>& tracks,
                                  const ClassifyOptions& options = {});

struct WindowEstimate {
  double t_start = 0.0;
  double t_end = 0.0;
  int group_id = -1;
  MotionParams params;  // exponentially smoothed across windows
};

struct OnlineOptions {
  double window_seconds = 4.0;
  double hop_seconds = 1.0;
  double smoothing_alpha = 0.5;  // weight of the newest window
  ClassifyOptions classify;
};

// Sliding-window parameter estimation over a growing recording; per-window
// estimates are exponentially smoothed per group.
std::vector<WindowEstimate> sliding_window_estimates(const std::vector<ObservedTrack>& tracks,
                                                     const OnlineOptions& options = {});

}  // namespace entikit
