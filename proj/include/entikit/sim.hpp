#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "entikit/core_model.hpp"
#include "entikit/vec2.hpp"

namespace entikit {

struct Agent {
  int id = 0;
  PedestrianState state;
  MotionParams params;
  Vec2 goal;
  int group_id = -1;  // -1 = ungrouped
};

// Static obstacle, a wall from a to b.
struct Segment {
  Vec2 a;
  Vec2 b;
};

struct Scenario {
  std::vector<Agent> agents;
  std::vector<Segment> obstacles;
  double timestep = 0.1;   // s
  double duration = 20.0;  // s
  std::uint64_t rng_seed = 1;
  // Seed-dependent goal offset amplitude; breaks mirror symmetries. Replays
  // of observed runs set it to zero so goals stay exactly where given.
  double goal_dither = 0.1;  // m
};

struct TrajectorySample {
  double t = 0.0;
  Vec2 position;
};

struct Track {
  int agent_id = 0;
  int group_id = -1;
  std::vector<TrajectorySample> samples;  // uniform spacing, strictly increasing t
};

struct TrajectorySet {
  double dt = 0.0;
  std::vector<Track> tracks;
};

// All violations found, empty when the scenario is valid.
std::vector<std::string> validate_scenario(const Scenario& scenario);

class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

// Goal-seeking velocity blended with a pull toward the group centroid.
// The blend weight grows the farther the agent strays from its group and
// fades out over the last 2 m of the approach (otherwise stragglers orbit
// the goal instead of stopping):
//   w = group_cohesion * clamp(d_centroid / neighbor_dist, 0, 1)
//                      * clamp(d_goal / 2, 0, 1).
// Zero within the arrival tolerance of the goal.
Vec2 preferred_velocity(const Agent& agent, const std::vector<Agent>& crowd);

// Reciprocal velocity-obstacle step: the velocity closest to the agent's
// preferred velocity that keeps the time to collision with every considered
// neighbor and obstacle above the planning horizon, with avoidance effort
// split evenly between the two agents of each pair. Candidates are the
// preferred velocity plus a deterministic golden-angle disk pattern capped at
// 1.2x pref_speed. When nothing is feasible, returns the candidate
// maximizing the minimum time to collision.
Vec2 compute_new_velocity(const Agent& agent, const std::vector<const Agent*>& neighbors,
                          const std::vector<Segment>& obstacles, double dt);

// Euler step; preferred velocity is left untouched.
PedestrianState integrate(const PedestrianState& state, const Vec2& v_new, double dt);

constexpr double kGoalTolerance = 0.1;   // m
constexpr double kSpeedCapFactor = 1.2;  // of pref_speed

// Runs the scenario to completion. Deterministic given the scenario seed.
// Throws ScenarioError when validation fails.
TrajectorySet simulate(const Scenario& scenario);

class Simulator {
 public:
  // enforce_start_separation = false skips the initial-overlap check; used
  // when replaying observed data where candidate radii may exceed the
  // recorded spacing. The avoidance step itself handles overlap gracefully.
  explicit Simulator(Scenario scenario, bool enforce_start_separation = true);

  void step();
  TrajectorySet run();

  const std::vector<Agent>& agents() const { return agents_; }
  double time() const { return time_; }
  bool arrived(std::size_t index) const { return arrived_[index]; }

 private:
  Scenario scenario_;
  std::vector<Agent> agents_;
  std::vector<bool> arrived_;
  double time_ = 0.0;
};

struct GroupSpec {
  int group_id = 0;
  int size = 3;
  Vec2 start;
  Vec2 goal;
  MotionParams params;
};

// Places each group's members in a line abreast (spacing 2*radius + 0.2 m),
// centered on the group's start point and facing its goal. Throws
// ScenarioError when resulting start positions overlap.
Scenario spawn(const Scenario& scenario_template, const std::vector<GroupSpec>& groups);

}  // namespace entikit
