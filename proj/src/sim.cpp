#include "entikit/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>

namespace entikit {

namespace {

constexpr double kGoldenAngle = 2.399963229728653;  // rad
constexpr int kCandidateCount = 256;
constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Unit-disk candidate pattern, densest near the rim where preferred
// velocities live; scaled by the per-agent speed cap at query time.
const std::array<Vec2, kCandidateCount>& candidate_pattern() {
  static const std::array<Vec2, kCandidateCount> pattern = [] {
    std::array<Vec2, kCandidateCount> p{};
    for (int k = 0; k < kCandidateCount; ++k) {
      const double r = std::sqrt((k + 0.5) / kCandidateCount);
      const double a = k * kGoldenAngle;
      p[k] = {r * std::cos(a), r * std::sin(a)};
    }
    return p;
  }();
  return pattern;
}

// First time >= 0 at which a point moving with velocity v, starting at the
// origin, comes within r of a point at p. Infinity when it never does.
// Discs that already overlap yield a large negative value ordered by the
// separation rate, so such a pair can never look feasible and the candidate
// scan resolves the overlap as fast as possible instead of ignoring it.
constexpr double kOverlapPenalty = 1e6;

double time_to_collision_disc(const Vec2& p, const Vec2& v, double r) {
  const double c = p.squared_norm() - r * r;
  if (c <= 0.0) {
    const double d = p.norm();
    const double escape_rate = d > 1e-12 ? -dot(p, v) / d : 0.0;
    return escape_rate - kOverlapPenalty;
  }
  const double b = dot(p, v);
  if (b <= 0.0) return kInfinity;  // receding
  const double a = v.squared_norm();
  const double disc = b * b - a * c;
  if (disc < 0.0 || a <= 0.0) return kInfinity;
  return (b - std::sqrt(disc)) / a;
}

double point_segment_distance(const Vec2& p, const Segment& s) {
  const Vec2 d = s.b - s.a;
  const double len2 = d.squared_norm();
  if (len2 <= 0.0) return distance(p, s.a);
  double u = dot(p - s.a, d) / len2;
  u = std::clamp(u, 0.0, 1.0);
  return distance(p, s.a + u * d);
}

// First time >= 0 at which a disc of radius r centered at pos, moving with
// velocity v, touches the segment.
double time_to_collision_segment(const Vec2& pos, const Vec2& v, const Segment& seg, double r) {
  if (point_segment_distance(pos, seg) <= r) {
    // Already inside the wall margin: order candidates by retreat speed.
    const Vec2 d = seg.b - seg.a;
    const double len2 = d.squared_norm();
    const double u = len2 > 0.0 ? std::clamp(dot(pos - seg.a, d) / len2, 0.0, 1.0) : 0.0;
    const Vec2 away = pos - (seg.a + u * d);
    const double dist = away.norm();
    const double escape_rate = dist > 1e-12 ? dot(v, away / dist) : 0.0;
    return escape_rate - kOverlapPenalty;
  }
  double best = std::min(time_to_collision_disc(seg.a - pos, v, r),
                         time_to_collision_disc(seg.b - pos, v, r));
  const Vec2 d = seg.b - seg.a;
  const double len = d.norm();
  if (len > 0.0) {
    const Vec2 dir = d / len;
    const Vec2 n{-dir.y, dir.x};
    const double vn = dot(v, n);
    const double s0 = dot(pos - seg.a, n);
    if (vn != 0.0) {
      for (const double side : {r, -r}) {
        const double t = (side - s0) / vn;
        if (t < 0.0 || t >= best) continue;
        const double u = dot((pos + t * v) - seg.a, dir);
        if (u >= 0.0 && u <= len) best = t;
      }
    }
  }
  return best;
}

// Minimum time to collision of a candidate velocity against all constraints.
// Neighbor constraints use the reciprocal test velocity 2*v - v_self - v_nb,
// splitting the avoidance effort evenly between the pair. Once the minimum
// falls to or below `cutoff` the exact value cannot matter to the caller
// anymore, so the scan stops early.
double min_time_to_collision(const Agent& agent, const Vec2& v_cand,
                             const std::vector<const Agent*>& neighbors,
                             const std::vector<Segment>& obstacles,
                             double cutoff = -kInfinity) {
  double worst = kInfinity;
  const Vec2& pos = agent.state.position;
  const Vec2& v_self = agent.state.velocity;
  for (const Agent* nb : neighbors) {
    const Vec2 v_test = 2.0 * v_cand - v_self - nb->state.velocity;
    const double ttc = time_to_collision_disc(nb->state.position - pos, v_test,
                                              agent.params.radius + nb->params.radius);
    worst = std::min(worst, ttc);
    if (worst <= cutoff) return worst;
  }
  for (const Segment& seg : obstacles) {
    worst = std::min(worst, time_to_collision_segment(pos, v_cand, seg, agent.params.radius));
    if (worst <= cutoff) return worst;
  }
  return worst;
}

// Within this distance of the goal the centroid pull fades out linearly.
// Without the fade a straggler's preferred direction settles into a balance
// between goal and centroid just outside the arrival tolerance and the agent
// orbits its goal instead of stopping.
constexpr double kCohesionFadeRadius = 2.0;  // m

Vec2 blend_toward_centroid(const Agent& agent, const Vec2& centroid) {
  const Vec2 to_goal = agent.goal - agent.state.position;
  const double goal_dist = to_goal.norm();
  if (goal_dist <= kGoalTolerance) return {};
  const Vec2 goal_dir = to_goal / goal_dist;
  Vec2 dir = goal_dir;
  if (agent.group_id >= 0) {
    const Vec2 to_centroid = centroid - agent.state.position;
    const double d = to_centroid.norm();
    if (d > 1e-9 && agent.params.neighbor_dist > 0.0) {
      const double w = agent.params.group_cohesion *
                       std::clamp(d / agent.params.neighbor_dist, 0.0, 1.0) *
                       std::clamp(goal_dist / kCohesionFadeRadius, 0.0, 1.0);
      const Vec2 blended = (1.0 - w) * goal_dir + w * (to_centroid / d);
      if (blended.squared_norm() > 1e-18) dir = blended.normalized();
    }
  }
  return agent.params.pref_speed * dir;
}

Vec2 group_centroid(const Agent& agent, const std::vector<Agent>& crowd) {
  if (agent.group_id < 0) return agent.state.position;
  Vec2 sum;
  int count = 0;
  for (const Agent& other : crowd) {
    if (other.group_id == agent.group_id) {
      sum += other.state.position;
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : agent.state.position;
}

}  // namespace

ScenarioError::ScenarioError(std::vector<std::string> violations)
    : std::runtime_error([&violations] {
        std::ostringstream oss;
        oss << "invalid scenario (" << violations.size() << " violation(s)):";
        for (const auto& v : violations) oss << "\n  - " << v;
        return oss.str();
      }()),
      violations_(std::move(violations)) {}

std::vector<std::string> validate_scenario(const Scenario& scenario) {
  std::vector<std::string> out;
  if (!(scenario.timestep > 0.0) || !std::isfinite(scenario.timestep))
    out.push_back("timestep must be positive and finite");
  if (!(scenario.duration >= scenario.timestep) || !std::isfinite(scenario.duration))
    out.push_back("duration must be at least one timestep");
  if (!(scenario.goal_dither >= 0.0) || !std::isfinite(scenario.goal_dither))
    out.push_back("goal_dither must be non-negative and finite");
  std::unordered_map<int, int> seen_ids;
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    const Agent& a = scenario.agents[i];
    const std::string tag = "agent " + std::to_string(a.id);
    if (++seen_ids[a.id] == 2) out.push_back(tag + ": duplicate id");
    if (!a.state.finite()) out.push_back(tag + ": state has non-finite components");
    if (!a.goal.finite()) out.push_back(tag + ": goal has non-finite components");
    if (!a.params.finite()) out.push_back(tag + ": params have non-finite components");
    if (!(a.params.radius > 0.0)) out.push_back(tag + ": radius must be positive");
    if (!(a.params.pref_speed > 0.0)) out.push_back(tag + ": pref_speed must be positive");
    if (!(a.params.planning_horizon > 0.0))
      out.push_back(tag + ": planning_horizon must be positive");
    if (a.params.max_neighbors < 1) out.push_back(tag + ": max_neighbors must be >= 1");
    if (!(a.params.neighbor_dist >= 0.0)) out.push_back(tag + ": neighbor_dist must be >= 0");
    if (!(a.params.group_cohesion >= 0.0 && a.params.group_cohesion <= 1.0))
      out.push_back(tag + ": group_cohesion must lie in [0,1]");
  }
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    for (std::size_t j = i + 1; j < scenario.agents.size(); ++j) {
      const Agent& a = scenario.agents[i];
      const Agent& b = scenario.agents[j];
      if (!a.state.position.finite() || !b.state.position.finite()) continue;
      const double min_dist = a.params.radius + b.params.radius;
      if (distance(a.state.position, b.state.position) < min_dist) {
        out.push_back("agents " + std::to_string(a.id) + " and " + std::to_string(b.id) +
                      ": start positions overlap (need distance >= " +
                      std::to_string(min_dist) + ")");
      }
    }
  }
  for (std::size_t i = 0; i < scenario.obstacles.size(); ++i) {
    const Segment& s = scenario.obstacles[i];
    if (!s.a.finite() || !s.b.finite())
      out.push_back("obstacle " + std::to_string(i) + ": non-finite endpoint");
  }
  return out;
}

Vec2 preferred_velocity(const Agent& agent, const std::vector<Agent>& crowd) {
  return blend_toward_centroid(agent, group_centroid(agent, crowd));
}

Vec2 compute_new_velocity(const Agent& agent, const std::vector<const Agent*>& neighbors,
                          const std::vector<Segment>& obstacles, double /*dt*/) {
  const double horizon = agent.params.planning_horizon;
  const double max_speed = kSpeedCapFactor * agent.params.pref_speed;
  Vec2 v_pref = agent.state.preferred_velocity;
  const double pref_norm = v_pref.norm();
  if (pref_norm > max_speed) v_pref = v_pref * (max_speed / pref_norm);

  if (neighbors.empty() && obstacles.empty()) return v_pref;
  const double pref_ttc = min_time_to_collision(agent, v_pref, neighbors, obstacles);
  if (pref_ttc > horizon) return v_pref;

  // Scan disk candidates outward from v_pref; the first feasible one is the
  // nearest feasible by construction.
  const auto& pattern = candidate_pattern();
  std::array<int, kCandidateCount> order;
  std::array<double, kCandidateCount> dist2;
  for (int k = 0; k < kCandidateCount; ++k) {
    order[k] = k;
    dist2[k] = (max_speed * pattern[k] - v_pref).squared_norm();
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) { return dist2[a] < dist2[b]; });

  Vec2 best_fallback = v_pref;
  double best_ttc = pref_ttc;
  for (int k = 0; k < kCandidateCount; ++k) {
    const Vec2 cand = max_speed * pattern[order[k]];
    // A candidate whose minimum drops to best_ttc or below can neither pass
    // the horizon test nor improve the fallback, so the scan may stop there.
    const double ttc = min_time_to_collision(agent, cand, neighbors, obstacles, best_ttc);
    if (ttc > horizon) return cand;
    if (ttc > best_ttc) {
      best_ttc = ttc;
      best_fallback = cand;
    }
  }
  return best_fallback;  // nothing feasible; least-imminent collision wins
}

PedestrianState integrate(const PedestrianState& state, const Vec2& v_new, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate: dt must be positive");
  PedestrianState next = state;
  next.position += v_new * dt;
  next.velocity = v_new;
  return next;
}

Simulator::Simulator(Scenario scenario, bool enforce_start_separation)
    : scenario_(std::move(scenario)) {
  auto violations = validate_scenario(scenario_);
  if (!enforce_start_separation) {
    std::erase_if(violations, [](const std::string& v) {
      return v.find("start positions overlap") != std::string::npos;
    });
  }
  if (!violations.empty()) throw ScenarioError(std::move(violations));
  agents_ = scenario_.agents;
  arrived_.assign(agents_.size(), false);

  // Per-seed goal dither; breaks mirror symmetries that would otherwise
  // deadlock head-on encounters.
  if (scenario_.goal_dither > 0.0) {
    std::mt19937_64 rng(scenario_.rng_seed);
    std::uniform_real_distribution<double> dither(-scenario_.goal_dither,
                                                  scenario_.goal_dither);
    for (Agent& a : agents_) {
      a.goal += Vec2{dither(rng), dither(rng)};
    }
  }
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    arrived_[i] = distance(agents_[i].state.position, agents_[i].goal) <= kGoalTolerance;
    agents_[i].state.preferred_velocity = preferred_velocity(agents_[i], agents_);
  }
}

void Simulator::step() {
  const std::size_t n = agents_.size();
  const double dt = scenario_.timestep;

  std::unordered_map<int, Vec2> centroid_sum;
  std::unordered_map<int, int> centroid_count;
  for (const Agent& a : agents_) {
    if (a.group_id >= 0) {
      centroid_sum[a.group_id] += a.state.position;
      ++centroid_count[a.group_id];
    }
  }

  std::vector<Vec2> new_velocity(n);
  std::vector<const Agent*> neighbors;
  for (std::size_t i = 0; i < n; ++i) {
    Agent& a = agents_[i];
    if (!arrived_[i] && distance(a.state.position, a.goal) <= kGoalTolerance)
      arrived_[i] = true;
    if (arrived_[i]) {
      a.state.preferred_velocity = {};
      new_velocity[i] = {};
      continue;
    }
    Vec2 centroid = a.state.position;
    if (a.group_id >= 0) {
      centroid = centroid_sum[a.group_id] / static_cast<double>(centroid_count[a.group_id]);
    }
    a.state.preferred_velocity = blend_toward_centroid(a, centroid);

    neighbors.clear();
    const double reach2 = a.params.neighbor_dist * a.params.neighbor_dist;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if ((agents_[j].state.position - a.state.position).squared_norm() <= reach2)
        neighbors.push_back(&agents_[j]);
    }
    const std::size_t cap = static_cast<std::size_t>(a.params.max_neighbors);
    if (neighbors.size() > cap) {
      std::partial_sort(neighbors.begin(), neighbors.begin() + cap, neighbors.end(),
                        [&](const Agent* x, const Agent* y) {
                          const double dx = (x->state.position - a.state.position).squared_norm();
                          const double dy = (y->state.position - a.state.position).squared_norm();
                          return dx != dy ? dx < dy : x->id < y->id;
                        });
      neighbors.resize(cap);
    }
    new_velocity[i] = compute_new_velocity(a, neighbors, scenario_.obstacles, dt);
  }

  for (std::size_t i = 0; i < n; ++i) {
    agents_[i].state = integrate(agents_[i].state, new_velocity[i], dt);
  }
  time_ += dt;
}

TrajectorySet Simulator::run() {
  const double dt = scenario_.timestep;
  const long long steps = std::llround(scenario_.duration / dt);

  TrajectorySet out;
  out.dt = dt;
  out.tracks.resize(agents_.size());
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    out.tracks[i].agent_id = agents_[i].id;
    out.tracks[i].group_id = agents_[i].group_id;
    out.tracks[i].samples.reserve(static_cast<std::size_t>(steps) + 1);
    out.tracks[i].samples.push_back({0.0, agents_[i].state.position});
  }
  for (long long k = 0; k < steps; ++k) {
    step();
    const double t = (k + 1) * dt;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      out.tracks[i].samples.push_back({t, agents_[i].state.position});
    }
  }
  return out;
}

TrajectorySet simulate(const Scenario& scenario) { return Simulator(scenario).run(); }

Scenario spawn(const Scenario& scenario_template, const std::vector<GroupSpec>& groups) {
  Scenario out = scenario_template;
  std::vector<std::string> violations;
  int next_id = 0;
  for (const Agent& a : out.agents) next_id = std::max(next_id, a.id + 1);

  for (const GroupSpec& g : groups) {
    if (g.size < 1) {
      violations.push_back("group " + std::to_string(g.group_id) + ": size must be >= 1");
      continue;
    }
    Vec2 facing = (g.goal - g.start).normalized();
    if (facing.squared_norm() == 0.0) facing = {1.0, 0.0};
    const Vec2 lateral{-facing.y, facing.x};
    const double spacing = 2.0 * g.params.radius + 0.2;
    for (int k = 0; k < g.size; ++k) {
      const double offset = (k - (g.size - 1) / 2.0) * spacing;
      Agent a;
      a.id = next_id++;
      a.group_id = g.group_id;
      a.params = g.params;
      a.state.position = g.start + offset * lateral;
      a.goal = g.goal + offset * lateral;  // parallel lanes
      a.state.velocity = g.params.pref_speed * facing;
      a.state.preferred_velocity = a.state.velocity;
      out.agents.push_back(a);
    }
  }

  auto checks = validate_scenario(out);
  violations.insert(violations.end(), checks.begin(), checks.end());
  if (!violations.empty()) throw ScenarioError(std::move(violations));
  return out;
}

}  // namespace entikit
