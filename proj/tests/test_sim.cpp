#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "entikit/sim.hpp"

using entikit::Agent;
using entikit::GroupSpec;
using entikit::Scenario;
using entikit::ScenarioError;
using entikit::Simulator;
using entikit::TrajectorySet;
using entikit::Vec2;

namespace {

Agent walker(int id, Vec2 start, Vec2 goal, int group = -1) {
  Agent a;
  a.id = id;
  a.group_id = group;
  a.state.position = start;
  a.goal = goal;
  return a;
}

double min_pair_distance(const TrajectorySet& t, std::size_t i, std::size_t j) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < t.tracks[i].samples.size(); ++k) {
    best = std::min(best, distance(t.tracks[i].samples[k].position,
                                   t.tracks[j].samples[k].position));
  }
  return best;
}

}  // namespace

TEST_CASE("a solo agent reaches its goal and stays put") {
  Scenario sc;
  sc.goal_dither = 0.0;
  sc.duration = 12.0;
  sc.agents.push_back(walker(0, {0.0, 0.0}, {10.0, 0.0}));

  const TrajectorySet t = entikit::simulate(sc);
  const auto& samples = t.tracks[0].samples;
  REQUIRE(samples.size() == 121);
  CHECK(distance(samples.back().position, Vec2{10.0, 0.0}) <=
        entikit::kGoalTolerance + 1e-9);
  // Arrival latches: the last steps do not move.
  CHECK(samples[120].position == samples[119].position);
  CHECK(samples[119].position == samples[118].position);
  // The walk itself is a straight line at preferred speed.
  CHECK(samples[10].position.x == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(samples[10].position.y == doctest::Approx(0.0));
}

TEST_CASE("trajectory sampling covers t=0 through duration on the step grid") {
  Scenario sc;
  sc.goal_dither = 0.0;
  sc.timestep = 0.3;
  sc.duration = 1.0;  // rounds to 3 steps
  sc.agents.push_back(walker(0, {0.0, 0.0}, {10.0, 0.0}));
  const TrajectorySet t = entikit::simulate(sc);
  REQUIRE(t.tracks.size() == 1);
  REQUIRE(t.tracks[0].samples.size() == 4);
  CHECK(t.dt == doctest::Approx(0.3));
  for (int k = 0; k < 4; ++k) CHECK(t.tracks[0].samples[k].t == doctest::Approx(0.3 * k));
}

TEST_CASE("preferred velocity blends goal direction with a centroid pull") {
  std::vector<Agent> crowd;
  crowd.push_back(walker(0, {0.0, 5.0}, {30.0, 5.0}, 0));
  crowd.push_back(walker(1, {0.0, 0.0}, {30.0, 0.0}, 0));

  // Flanker at (0,5): centroid (0,2.5), distance 2.5, neighbor_dist 4,
  // goal 30 m out (fade saturated). w = 0.5 * (2.5/4) = 0.3125.
  const Vec2 v = entikit::preferred_velocity(crowd[0], crowd);
  const double w = 0.5 * (2.5 / 4.0);
  const Vec2 expected = 1.5 * (((1.0 - w) * Vec2{1.0, 0.0} + w * Vec2{0.0, -1.0}).normalized());
  CHECK(v.x == doctest::Approx(expected.x).epsilon(1e-12));
  CHECK(v.y == doctest::Approx(expected.y).epsilon(1e-12));
  CHECK(v.norm() == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(v.y < 0.0);  // pulled toward the group

  // Stronger cohesion pulls harder inward.
  std::vector<Agent> eager = crowd;
  for (Agent& a : eager) a.params.group_cohesion = 1.0;
  CHECK(entikit::preferred_velocity(eager[0], eager).y < v.y);

  // Ungrouped agents head straight for the goal.
  std::vector<Agent> solo{walker(0, {0.0, 5.0}, {30.0, 5.0})};
  const Vec2 straight = entikit::preferred_velocity(solo[0], solo);
  CHECK(straight.x == doctest::Approx(1.5));
  CHECK(straight.y == doctest::Approx(0.0));
}

TEST_CASE("preferred velocity fades near the goal and vanishes at it") {
  std::vector<Agent> crowd;
  crowd.push_back(walker(0, {0.0, 1.0}, {1.0, 1.0}, 0));  // 1 m from goal
  crowd.push_back(walker(1, {0.0, 0.0}, {1.0, 0.0}, 0));

  // Fade at 1 m from goal halves the pull relative to a saturated approach.
  const double w = 0.5 * std::clamp(0.5 / 4.0, 0.0, 1.0) * std::clamp(1.0 / 2.0, 0.0, 1.0);
  const Vec2 expected = 1.5 * (((1.0 - w) * Vec2{1.0, 0.0} + w * Vec2{0.0, -1.0}).normalized());
  const Vec2 v = entikit::preferred_velocity(crowd[0], crowd);
  CHECK(v.x == doctest::Approx(expected.x).epsilon(1e-12));
  CHECK(v.y == doctest::Approx(expected.y).epsilon(1e-12));

  // Inside the arrival tolerance there is nothing left to do.
  std::vector<Agent> done{walker(0, {0.0, 0.0}, {0.05, 0.0}, 0)};
  const Vec2 zero = entikit::preferred_velocity(done[0], done);
  CHECK(zero.x == doctest::Approx(0.0));
  CHECK(zero.y == doctest::Approx(0.0));
}

TEST_CASE("free space returns the preferred velocity, capped at 1.2x the preferred speed") {
  Agent a = walker(0, {0.0, 0.0}, {10.0, 0.0});
  a.state.preferred_velocity = {1.5, 0.0};
  const std::vector<const Agent*> nobody;
  const std::vector<entikit::Segment> nothing;
  Vec2 v = entikit::compute_new_velocity(a, nobody, nothing, 0.1);
  CHECK(v.x == doctest::Approx(1.5));
  CHECK(v.y == doctest::Approx(0.0));

  a.state.preferred_velocity = {3.0, 0.0};  // above the cap
  v = entikit::compute_new_velocity(a, nobody, nothing, 0.1);
  CHECK(v.norm() == doctest::Approx(entikit::kSpeedCapFactor * 1.5).epsilon(1e-12));
}

TEST_CASE("euler integration moves the state and rejects bad steps") {
  entikit::PedestrianState s;
  s.position = {1.0, 2.0};
  s.velocity = {0.5, 0.0};
  const entikit::PedestrianState next = entikit::integrate(s, {0.0, 2.0}, 0.25);
  CHECK(next.position.x == doctest::Approx(1.0));
  CHECK(next.position.y == doctest::Approx(2.5));
  CHECK(next.velocity.x == doctest::Approx(0.0));
  CHECK(next.velocity.y == doctest::Approx(2.0));
  CHECK_THROWS_AS(entikit::integrate(s, {0.0, 0.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(entikit::integrate(s, {0.0, 0.0}, -0.1), std::invalid_argument);
}

TEST_CASE("head-on walkers pass without touching and both arrive") {
  Scenario sc;
  sc.duration = 14.0;
  Agent a = walker(0, {0.0, 0.0}, {12.0, 0.0});
  Agent b = walker(1, {12.0, 0.0}, {0.0, 0.0});
  a.params.radius = b.params.radius = 0.4;
  sc.agents = {a, b};

  const TrajectorySet t = entikit::simulate(sc);
  CHECK(min_pair_distance(t, 0, 1) >= 0.9 * (0.4 + 0.4));
  CHECK(distance(t.tracks[0].samples.back().position, sc.agents[0].goal) < 0.5);
  CHECK(distance(t.tracks[1].samples.back().position, sc.agents[1].goal) < 0.5);
}

TEST_CASE("no step exceeds the speed cap even while avoiding") {
  Scenario sc;
  sc.duration = 14.0;
  Agent a = walker(0, {0.0, 0.0}, {12.0, 0.0});
  Agent b = walker(1, {12.0, 0.2}, {0.0, 0.2});
  a.params.radius = b.params.radius = 0.4;
  sc.agents = {a, b};

  const TrajectorySet t = entikit::simulate(sc);
  for (const auto& track : t.tracks) {
    for (std::size_t k = 1; k < track.samples.size(); ++k) {
      const double step = distance(track.samples[k].position, track.samples[k - 1].position);
      CHECK(step <= entikit::kSpeedCapFactor * 1.5 * sc.timestep + 1e-9);
    }
  }
}

TEST_CASE("runs are reproducible for a seed and the goal dither responds to it") {
  Scenario sc;
  sc.duration = 6.0;
  sc.rng_seed = 11;
  sc.agents.push_back(walker(0, {0.0, 0.0}, {9.0, 0.0}));
  sc.agents.push_back(walker(1, {9.0, 0.1}, {0.0, 0.1}));
  for (Agent& a : sc.agents) a.params.radius = 0.4;

  const TrajectorySet t1 = entikit::simulate(sc);
  const TrajectorySet t2 = entikit::simulate(sc);
  REQUIRE(t1.tracks.size() == t2.tracks.size());
  for (std::size_t i = 0; i < t1.tracks.size(); ++i) {
    REQUIRE(t1.tracks[i].samples.size() == t2.tracks[i].samples.size());
    for (std::size_t k = 0; k < t1.tracks[i].samples.size(); ++k) {
      CHECK(t1.tracks[i].samples[k].position == t2.tracks[i].samples[k].position);
    }
  }

  sc.rng_seed = 12;
  const TrajectorySet t3 = entikit::simulate(sc);
  bool differs = false;
  for (std::size_t k = 0; k < t1.tracks[0].samples.size() && !differs; ++k) {
    differs = !(t1.tracks[0].samples[k].position == t3.tracks[0].samples[k].position);
  }
  CHECK(differs);
}

TEST_CASE("scenario validation names each violation") {
  Scenario sc;
  sc.timestep = 0.0;
  sc.duration = -1.0;
  sc.goal_dither = -0.5;
  Agent a = walker(3, {0.0, 0.0}, {5.0, 0.0});
  a.params.group_cohesion = 1.5;
  a.params.max_neighbors = 0;
  Agent b = walker(3, {0.1, 0.0}, {5.0, 1.0});  // duplicate id, overlapping start
  sc.agents = {a, b};

  const auto violations = entikit::validate_scenario(sc);
  auto mentions = [&](const std::string& needle) {
    return std::any_of(violations.begin(), violations.end(), [&](const std::string& v) {
      return v.find(needle) != std::string::npos;
    });
  };
  CHECK(mentions("timestep"));
  CHECK(mentions("duration"));
  CHECK(mentions("goal_dither"));
  CHECK(mentions("duplicate id"));
  CHECK(mentions("group_cohesion"));
  CHECK(mentions("max_neighbors"));
  CHECK(mentions("start positions overlap"));

  CHECK_THROWS_AS(Simulator{sc}, ScenarioError);
  try {
    Simulator sim{sc};
  } catch (const ScenarioError& e) {
    CHECK(e.violations().size() == violations.size());
    CHECK(std::string(e.what()).find("violation") != std::string::npos);
  }
}

TEST_CASE("overlapping starts are rejected unless separation enforcement is off") {
  Scenario sc;
  sc.goal_dither = 0.0;
  sc.duration = 2.0;
  Agent a = walker(0, {0.0, 0.0}, {6.0, 0.0});
  Agent b = walker(1, {0.5, 0.0}, {-5.5, 0.0});
  a.params.radius = b.params.radius = 0.4;  // need 0.8 m, have 0.5
  sc.agents = {a, b};

  CHECK_THROWS_AS(Simulator{sc}, ScenarioError);

  Simulator sim(sc, /*enforce_start_separation=*/false);
  for (int k = 0; k < 10; ++k) sim.step();
  const double d = distance(sim.agents()[0].state.position, sim.agents()[1].state.position);
  CHECK(d > 0.8);  // the pair pushes apart instead of sticking
}

TEST_CASE("simulator tracks time and arrivals") {
  Scenario sc;
  sc.goal_dither = 0.0;
  sc.duration = 5.0;
  sc.agents.push_back(walker(0, {0.0, 0.0}, {1.0, 0.0}));
  Simulator sim(sc);
  CHECK(sim.time() == doctest::Approx(0.0));
  CHECK_FALSE(sim.arrived(0));
  for (int k = 0; k < 10; ++k) sim.step();
  CHECK(sim.time() == doctest::Approx(1.0));
  CHECK(sim.arrived(0));  // 1 m at 1.5 m/s takes ~0.67 s
  const Vec2 parked = sim.agents()[0].state.position;
  sim.step();
  CHECK(sim.agents()[0].state.position == parked);
}

TEST_CASE("spawn lays groups out line abreast facing the goal") {
  Scenario tpl;
  tpl.goal_dither = 0.0;
  Agent existing = walker(5, {50.0, 50.0}, {60.0, 50.0});
  tpl.agents.push_back(existing);

  GroupSpec g;
  g.group_id = 7;
  g.size = 3;
  g.start = {0.0, 0.0};
  g.goal = {10.0, 0.0};
  g.params.radius = 0.3;

  const Scenario out = entikit::spawn(tpl, {g});
  REQUIRE(out.agents.size() == 4);
  // Fresh ids continue after the template's agents.
  CHECK(out.agents[1].id == 6);
  CHECK(out.agents[2].id == 7);
  CHECK(out.agents[3].id == 8);
  // Shoulder-to-shoulder spacing of 2r + 0.2 across the facing direction.
  CHECK(out.agents[1].state.position.y == doctest::Approx(-0.8));
  CHECK(out.agents[2].state.position.y == doctest::Approx(0.0));
  CHECK(out.agents[3].state.position.y == doctest::Approx(0.8));
  for (int i = 1; i <= 3; ++i) {
    const Agent& a = out.agents[i];
    CHECK(a.group_id == 7);
    CHECK(a.state.position.x == doctest::Approx(0.0));
    CHECK(a.goal.x == doctest::Approx(10.0));
    CHECK(a.goal.y == doctest::Approx(a.state.position.y));  // parallel lanes
    CHECK(a.state.velocity.x == doctest::Approx(a.params.pref_speed));
    CHECK(a.state.velocity.y == doctest::Approx(0.0));
  }

  GroupSpec bad = g;
  bad.size = 0;
  CHECK_THROWS_AS(entikit::spawn(tpl, {bad}), ScenarioError);
  // Two groups dropped on the same spot collide at t=0.
  CHECK_THROWS_AS(entikit::spawn(tpl, std::vector<GroupSpec>{g, g}), ScenarioError);
}

TEST_CASE("stronger cohesion keeps a walking group tighter") {
  auto spread_after_walk = [](double cohesion) {
    Scenario tpl;
    tpl.goal_dither = 0.0;
    tpl.duration = 16.0;
    GroupSpec g;
    g.group_id = 0;
    g.size = 3;
    g.start = {0.0, 0.0};
    g.goal = {24.0, 0.0};
    g.params.radius = 0.3;
    g.params.group_cohesion = cohesion;
    Scenario sc = entikit::spawn(tpl, {g});
    // Pull the flankers wide so the centroid pull has work to do.
    sc.agents[0].state.position.y *= 4.0;
    sc.agents[2].state.position.y *= 4.0;
    const TrajectorySet t = entikit::simulate(sc);
    const std::size_t last = t.tracks[0].samples.size() - 1;
    const std::size_t mid = last / 2;
    double spread = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = i + 1; j < 3; ++j) {
        spread += distance(t.tracks[i].samples[mid].position, t.tracks[j].samples[mid].position);
      }
    }
    return spread / 3.0;
  };
  CHECK(spread_after_walk(1.0) < spread_after_walk(0.1) - 0.5);
}
