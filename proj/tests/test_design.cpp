#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "entikit/design.hpp"

using entikit::FeatureVector;
using entikit::MotionParams;
using entikit::ParamBox;
using entikit::PresetLevel;

namespace {

double normalized_label(const MotionParams& p, const ParamBox& box) {
  return entikit::label_params(p, box).label.normalized;
}

}  // namespace

TEST_CASE("entitativity design hits its target across the whole range") {
  const ParamBox box = ParamBox::study();
  for (const double target : {0.0, 0.1, 0.25, 0.5, 0.54, 0.75, 0.9, 1.0}) {
    const MotionParams p = entikit::design_for_entitativity(target, box);
    CHECK(box.contains(p));
    CHECK(normalized_label(p, box) == doctest::Approx(target).epsilon(1e-6));
  }
}

TEST_CASE("designing for the defaults' own label returns the defaults") {
  const ParamBox box = ParamBox::study();
  const double target = normalized_label(box.defaults(), box);
  const MotionParams p = entikit::design_for_entitativity(target, box);
  CHECK(p.neighbor_dist == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(p.radius == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p.pref_speed == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(p.group_cohesion == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("the extreme targets land on the extreme corners") {
  const ParamBox box = ParamBox::study();
  // Normalized 0 and 1 are attained only at the sign-rule corners.
  const MotionParams lo = entikit::design_for_entitativity(0.0, box);
  CHECK(lo.neighbor_dist == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(lo.radius == doctest::Approx(1.7).epsilon(1e-9));
  CHECK(lo.pref_speed == doctest::Approx(1.2).epsilon(1e-9));
  CHECK(lo.group_cohesion == doctest::Approx(0.1).epsilon(1e-9));
  const MotionParams hi = entikit::design_for_entitativity(1.0, box);
  CHECK(hi.neighbor_dist == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(hi.radius == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(hi.pref_speed == doctest::Approx(1.8).epsilon(1e-9));
  CHECK(hi.group_cohesion == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("targets outside the unit interval are rejected") {
  CHECK_THROWS_AS(entikit::design_for_entitativity(-0.01), std::invalid_argument);
  CHECK_THROWS_AS(entikit::design_for_entitativity(1.01), std::invalid_argument);
  CHECK_THROWS_AS(entikit::design_for_entitativity(std::nan("")), std::invalid_argument);
}

TEST_CASE("feature design reproduces reachable profiles exactly") {
  const ParamBox box = ParamBox::study();
  std::vector<MotionParams> sources{box.defaults()};
  MotionParams off = box.defaults();
  off.neighbor_dist = 3.4;
  off.radius = 1.5;
  off.pref_speed = 1.7;
  off.group_cohesion = 0.85;
  sources.push_back(off);

  for (const MotionParams& truth : sources) {
    const FeatureVector target = entikit::predict_features(truth);
    const entikit::FeatureDesignResult r = entikit::design_for_features(target, box);
    CHECK(box.contains(r.params));
    CHECK(r.residual == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(r.achieved.friendliness == doctest::Approx(target.friendliness).epsilon(1e-5));
    CHECK(r.achieved.creepiness == doctest::Approx(target.creepiness).epsilon(1e-5));
    CHECK(r.achieved.comfort == doctest::Approx(target.comfort).epsilon(1e-5));
    CHECK(r.achieved.unnerving == doctest::Approx(target.unnerving).epsilon(1e-5));
  }
}

TEST_CASE("feature design is no worse than a dense grid on unreachable profiles") {
  const ParamBox box = ParamBox::study();
  // A profile no in-box group can produce: friendly yet maximally creepy.
  const FeatureVector target{6.0, 6.0, 6.0, 6.0};
  const entikit::FeatureDesignResult r = entikit::design_for_features(target, box);
  CHECK(box.contains(r.params));
  CHECK(r.residual > 0.1);

  // The reported residual is consistent with the reported point.
  const FeatureVector at = entikit::predict_features(r.params);
  const double dx = at.friendliness - target.friendliness;
  const double dc = at.creepiness - target.creepiness;
  const double dco = at.comfort - target.comfort;
  const double du = at.unnerving - target.unnerving;
  CHECK(std::sqrt(dx * dx + dc * dc + dco * dco + du * du) ==
        doctest::Approx(r.residual).epsilon(1e-9));

  // No grid point beats the optimizer.
  double grid_best = 1e18;
  const int n = 9;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < n; ++c) {
        for (int d = 0; d < n; ++d) {
          MotionParams p;
          p.neighbor_dist = box.neighbor_dist.min + box.neighbor_dist.span() * a / (n - 1);
          p.radius = box.radius.min + box.radius.span() * b / (n - 1);
          p.pref_speed = box.pref_speed.min + box.pref_speed.span() * c / (n - 1);
          p.group_cohesion = box.group_cohesion.min + box.group_cohesion.span() * d / (n - 1);
          const FeatureVector f = entikit::predict_features(p);
          const double e1 = f.friendliness - target.friendliness;
          const double e2 = f.creepiness - target.creepiness;
          const double e3 = f.comfort - target.comfort;
          const double e4 = f.unnerving - target.unnerving;
          grid_best = std::min(grid_best, std::sqrt(e1 * e1 + e2 * e2 + e3 * e3 + e4 * e4));
        }
      }
    }
  }
  CHECK(r.residual <= grid_best + 1e-9);
}

TEST_CASE("preset levels are strictly ordered in predicted entitativity") {
  const ParamBox box = ParamBox::study();
  const double highest = entikit::predict_entitativity(entikit::preset_params(PresetLevel::highest));
  const double high = entikit::predict_entitativity(entikit::preset_params(PresetLevel::high));
  const double medium = entikit::predict_entitativity(entikit::preset_params(PresetLevel::medium));
  const double low = entikit::predict_entitativity(entikit::preset_params(PresetLevel::low));
  CHECK(highest > high);
  CHECK(high > medium);
  CHECK(medium > low);
  for (const PresetLevel level :
       {PresetLevel::highest, PresetLevel::high, PresetLevel::medium, PresetLevel::low}) {
    CHECK(box.contains(entikit::preset_params(level)));
  }
}

TEST_CASE("preset names round-trip and bad names are rejected") {
  for (const PresetLevel level :
       {PresetLevel::highest, PresetLevel::high, PresetLevel::medium, PresetLevel::low}) {
    const auto parsed = entikit::parse_preset_level(entikit::preset_level_name(level));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == level);
  }
  CHECK(entikit::preset_level_name(PresetLevel::medium) == "medium");
  CHECK_FALSE(entikit::parse_preset_level("extreme").has_value());
  CHECK_FALSE(entikit::parse_preset_level("").has_value());
}

TEST_CASE("designed walks start line abreast and fan their flank goals") {
  MotionParams p;
  p.radius = 0.4;  // spacing 1.0
  const entikit::Scenario straight = entikit::design_scenario(p, 3, 15.0, 0.0);
  REQUIRE(straight.agents.size() == 3);
  CHECK(straight.duration == doctest::Approx(15.0));
  for (int k = 0; k < 3; ++k) {
    const entikit::Agent& a = straight.agents[k];
    CHECK(a.id == k);
    CHECK(a.group_id == 0);
    CHECK(a.state.position.x == doctest::Approx(0.0));
    CHECK(a.state.position.y == doctest::Approx(1.0 * (k - 1)));
    CHECK(a.goal.x == doctest::Approx(20.0));  // parallel 20 m lanes
    CHECK(a.goal.y == doctest::Approx(a.state.position.y));
  }

  const double fan = 30.0 * M_PI / 180.0;
  const entikit::Scenario fanned = entikit::design_scenario(p, 3, 15.0, fan);
  // Center lane stays straight; flanks rotate by +-fan.
  CHECK(fanned.agents[1].goal.x == doctest::Approx(20.0));
  CHECK(fanned.agents[1].goal.y == doctest::Approx(0.0));
  CHECK(fanned.agents[0].goal.x == doctest::Approx(20.0 * std::cos(fan)));
  CHECK(fanned.agents[0].goal.y == doctest::Approx(-1.0 - 20.0 * std::sin(fan)));
  CHECK(fanned.agents[2].goal.y == doctest::Approx(1.0 + 20.0 * std::sin(fan)));
  // Everyone sets off toward their own goal at preferred speed.
  for (const entikit::Agent& a : fanned.agents) {
    CHECK(a.state.velocity.norm() == doctest::Approx(a.params.pref_speed));
    const entikit::Vec2 dir = (a.goal - a.state.position).normalized();
    CHECK(a.state.velocity.x == doctest::Approx(a.params.pref_speed * dir.x));
    CHECK(a.state.velocity.y == doctest::Approx(a.params.pref_speed * dir.y));
  }

  CHECK_THROWS_AS(entikit::design_scenario(p, 0), std::invalid_argument);
  CHECK_THROWS_AS(entikit::design_scenario(p, 3, 0.0), std::invalid_argument);
}

TEST_CASE("preset scenarios widen their fans as cohesion drops") {
  const entikit::Scenario tight = entikit::preset_scenario(PresetLevel::highest);
  const entikit::Scenario medium = entikit::preset_scenario(PresetLevel::medium);
  const entikit::Scenario loose = entikit::preset_scenario(PresetLevel::low);
  auto flank_spread = [](const entikit::Scenario& sc) {
    return sc.agents.back().goal.y - sc.agents.front().goal.y;
  };
  CHECK(flank_spread(tight) < flank_spread(medium));
  CHECK(flank_spread(medium) < flank_spread(loose));
  // Cohesive levels keep parallel lanes: goal spread equals start spread.
  const double start_spread =
      tight.agents.back().state.position.y - tight.agents.front().state.position.y;
  CHECK(flank_spread(tight) == doctest::Approx(start_spread));
  for (const entikit::Agent& a : medium.agents) {
    CHECK(a.params.group_cohesion == doctest::Approx(0.3));
  }
}
