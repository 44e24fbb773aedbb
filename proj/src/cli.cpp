#include "entikit/cli.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "entikit/core_model.hpp"
#include "entikit/design.hpp"
#include "entikit/estimation.hpp"
#include "entikit/fitting.hpp"
#include "entikit/io.hpp"
#include "entikit/sim.hpp"

namespace entikit {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInputError = 2;
constexpr int kExitEmpty = 3;
constexpr const char* kVersion = "1.0.0";

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("ENTIKIT_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  const char* end = s + std::string_view(s).size();
  const auto res = std::from_chars(s, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw std::invalid_argument("ENTIKIT_SEED must be an unsigned integer");
  return v;
}

struct ActiveModel {
  EntitativityModel model = EntitativityModel::published();
  ParamBox box = ParamBox::study();
};

ActiveModel load_active_model(const std::string& bundle_path) {
  ActiveModel am;
  if (!bundle_path.empty()) {
    const ModelBundle b = read_bundle_json(bundle_path);
    am.model = b.model;
    am.box = b.box;
  }
  return am;
}

// Forward predictions for the groups a scenario configures.
std::vector<GroupReport> scenario_report(const Scenario& sc, const ActiveModel& am) {
  std::map<int, std::vector<const Agent*>> groups;
  for (const Agent& a : sc.agents) {
    if (a.group_id >= 0) groups[a.group_id].push_back(&a);
  }
  std::vector<GroupReport> out;
  out.reserve(groups.size());
  for (auto& [gid, members] : groups) {
    std::sort(members.begin(), members.end(),
              [](const Agent* a, const Agent* b) { return a->id < b->id; });
    GroupReport r;
    r.group_id = gid;
    for (const Agent* a : members) r.members.push_back(a->id);
    r.params = members.front()->params;
    r.features = predict_features(r.params, am.model);
    const LabeledEntitativity lab = label_params(r.params, am.box, am.model);
    r.label = lab.label;
    if (lab.out_of_box) r.flags.emplace_back(kFlagOutOfBox);
    out.push_back(std::move(r));
  }
  return out;
}

void print_report_summary(const std::vector<GroupReport>& reports) {
  for (const GroupReport& r : reports) {
    if (!r.ok()) {
      std::printf("group %d: error: %s\n", r.group_id, r.error.c_str());
      continue;
    }
    std::printf("group %d: entitativity raw %.4f normalized %.4f", r.group_id, r.label.raw,
                r.label.normalized);
    for (const std::string& f : r.flags) std::printf(" [%s]", f.c_str());
    std::printf("\n");
  }
}

struct SimulateArgs {
  std::string scenario, level, out_trajectories, out_report, bundle;
  int agents = 3;
  double duration = 20.0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_simulate(const SimulateArgs& a) {
  Scenario sc;
  if (!a.scenario.empty() && !a.level.empty()) {
    std::cerr << "error: choose either --scenario or --level, not both\n";
    return kExitInputError;
  }
  if (!a.scenario.empty()) {
    sc = read_scenario_json(a.scenario);
  } else if (!a.level.empty()) {
    const auto lv = parse_preset_level(a.level);
    if (!lv) {
      std::cerr << "error: unknown level '" << a.level
                << "' (expected highest|high|medium|low)\n";
      return kExitInputError;
    }
    sc = preset_scenario(*lv, a.agents, a.duration);
  } else {
    std::cerr << "error: simulate needs --scenario or --level\n";
    return kExitInputError;
  }
  if (a.seed_given) sc.rng_seed = a.seed;
  if (const auto es = env_seed()) sc.rng_seed = *es;

  const ActiveModel am = load_active_model(a.bundle);
  const auto violations = validate_scenario(sc);
  if (!violations.empty()) {
    for (const std::string& v : violations) std::cerr << "scenario: " << v << "\n";
    return kExitInputError;
  }

  const TrajectorySet ts = simulate(sc);
  write_trajectory_csv(a.out_trajectories, ts);
  const auto reports = scenario_report(sc, am);
  write_report_json(a.out_report, reports);
  print_report_summary(reports);
  return kExitOk;
}

struct ClassifyArgs {
  std::string trajectories, out_report, bundle;
  double dt = 0.0;
  double cluster_distance = 0.0;
};

int run_classify(const ClassifyArgs& a) {
  const auto tracks = read_trajectory_csv(a.trajectories);
  const ActiveModel am = load_active_model(a.bundle);
  ClassifyOptions opt;
  opt.box = am.box;
  opt.model = am.model;
  if (a.dt > 0.0) opt.dt = a.dt;
  if (a.cluster_distance > 0.0) opt.cluster.max_distance = a.cluster_distance;

  const auto reports = classify(tracks, opt);
  if (reports.empty()) {
    std::cerr << "no usable tracks\n";
    return kExitEmpty;
  }
  write_report_json(a.out_report, reports);
  print_report_summary(reports);
  return kExitOk;
}

struct FitArgs {
  std::string study, out_bundle;
};

int run_fit(const FitArgs& a) {
  const StudyDataset data = read_study_csv(a.study);
  const ModelBundle bundle = refit_pipeline(data);
  write_bundle_json(a.out_bundle, bundle);
  std::printf("stimuli: %d\n", bundle.n_stimuli);
  std::printf("alpha: %.4f\n", bundle.alpha);
  std::printf("pca explained: %.4f\n", bundle.pca_explained);
  std::printf("entitativity fit r_squared: %.4f\n", bundle.entitativity_fit.r_squared);
  return kExitOk;
}

struct DesignArgs {
  std::string level, out_scenario, bundle;
  std::optional<double> target;
  std::vector<double> features;
  int agents = 3;
  double duration = 20.0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_design(const DesignArgs& a) {
  const int modes = (a.target.has_value() ? 1 : 0) + (a.features.empty() ? 0 : 1) +
                    (a.level.empty() ? 0 : 1);
  if (modes != 1) {
    std::cerr << "error: design needs exactly one of --target, --features, --level\n";
    return kExitInputError;
  }
  const ActiveModel am = load_active_model(a.bundle);

  MotionParams params;
  Scenario sc;
  std::optional<double> residual;
  if (!a.level.empty()) {
    const auto lv = parse_preset_level(a.level);
    if (!lv) {
      std::cerr << "error: unknown level '" << a.level
                << "' (expected highest|high|medium|low)\n";
      return kExitInputError;
    }
    params = preset_params(*lv);
    sc = preset_scenario(*lv, a.agents, a.duration);
  } else if (a.target.has_value()) {
    params = design_for_entitativity(*a.target, am.box, am.model);
    sc = design_scenario(params, a.agents, a.duration);
  } else {
    if (a.features.size() != 4) {
      std::cerr << "error: --features needs 4 values\n";
      return kExitInputError;
    }
    const FeatureVector target{a.features[0], a.features[1], a.features[2], a.features[3]};
    const FeatureDesignResult res = design_for_features(target, am.box, am.model);
    params = res.params;
    residual = res.residual;
    sc = design_scenario(params, a.agents, a.duration);
  }
  if (a.seed_given) sc.rng_seed = a.seed;
  if (const auto es = env_seed()) sc.rng_seed = *es;

  write_scenario_json(a.out_scenario, sc);
  const LabeledEntitativity lab = label_params(params, am.box, am.model);
  std::printf("params: neighbor_dist %.4f radius %.4f pref_speed %.4f group_cohesion %.4f\n",
              params.neighbor_dist, params.radius, params.pref_speed, params.group_cohesion);
  std::printf("achieved entitativity: raw %.6f normalized %.6f\n", lab.label.raw,
              lab.label.normalized);
  if (residual) std::printf("feature residual: %.6f\n", *residual);
  return kExitOk;
}

struct ValidateArgs {
  std::string trajectories, labels;
};

int run_validate(const ValidateArgs& a) {
  const auto tracks = read_trajectory_csv(a.trajectories);
  const auto labels = read_labels_csv(a.labels);
  const auto reports = classify(tracks, {});
  if (reports.empty()) {
    std::cerr << "no usable tracks\n";
    return kExitEmpty;
  }
  for (const GroupReport& r : reports) {
    if (!r.ok()) {
      std::cerr << "error: group " << r.group_id << " failed to classify: " << r.error << "\n";
      return kExitInputError;
    }
    if (!labels.count(r.group_id)) {
      std::cerr << "error: missing label for group " << r.group_id << "\n";
      return kExitInputError;
    }
  }
  for (const auto& [gid, value] : labels) {
    const bool known = std::any_of(reports.begin(), reports.end(),
                                   [gid](const GroupReport& r) { return r.group_id == gid; });
    if (!known) {
      std::cerr << "error: label references unknown group " << gid << "\n";
      return kExitInputError;
    }
  }

  double total = 0.0;
  for (const GroupReport& r : reports) {
    const double err = std::abs(r.label.normalized - labels.at(r.group_id));
    std::printf("group %d: error %.6f\n", r.group_id, err);
    total += err;
  }
  std::printf("mean error: %.6f\n", total / static_cast<double>(reports.size()));
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"entikit: simulate, classify, fit, and design pedestrian-group entitativity"};
  app.set_version_flag("--version", std::string("entikit ") + kVersion + " (format_version " +
                                        std::to_string(kFormatVersion) + ")");
  app.require_subcommand(0, 1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Run a scenario; write trajectories and a report");
  c_sim->add_option("--scenario", sim.scenario, "Scenario file to run");
  c_sim->add_option("--level", sim.level, "Preset level (highest|high|medium|low)");
  c_sim->add_option("--agents", sim.agents, "Group size for --level presets")
      ->check(CLI::PositiveNumber);
  c_sim->add_option("--duration", sim.duration, "Duration override for --level presets (s)")
      ->check(CLI::PositiveNumber);
  auto* sim_seed = c_sim->add_option("--seed", sim.seed, "Scenario seed override");
  c_sim->add_option("--out-trajectories", sim.out_trajectories, "Trajectory CSV to write")
      ->required();
  c_sim->add_option("--out-report", sim.out_report, "Report file to write")->required();
  c_sim->add_option("--bundle", sim.bundle, "Refit coefficient bundle to use");

  ClassifyArgs cls;
  auto* c_cls = app.add_subcommand("classify", "Recover group parameters from trajectories");
  c_cls->add_option("--trajectories", cls.trajectories, "Trajectory CSV to read")->required();
  c_cls->add_option("--out-report", cls.out_report, "Report file to write")->required();
  c_cls->add_option("--bundle", cls.bundle, "Refit coefficient bundle to use");
  c_cls->add_option("--dt", cls.dt, "Resampling step (s); default: inferred")
      ->check(CLI::PositiveNumber);
  c_cls->add_option("--cluster-distance", cls.cluster_distance,
                    "Pairing distance threshold (m)")
      ->check(CLI::PositiveNumber);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Refit the perception model from a study CSV");
  c_fit->add_option("--study", fit.study, "Study CSV to read")->required();
  c_fit->add_option("--out", fit.out_bundle, "Bundle file to write")->required();

  DesignArgs des;
  auto* c_des = app.add_subcommand("design", "Choose parameters for a target perception");
  double des_target = 0.0;
  auto* des_target_opt =
      c_des->add_option("--target", des_target, "Normalized entitativity target in [0,1]");
  c_des->add_option("--features", des.features,
                    "Feature targets: friendliness creepiness comfort unnerving")
      ->expected(4);
  c_des->add_option("--level", des.level, "Preset level (highest|high|medium|low)");
  c_des->add_option("--agents", des.agents, "Group size")->check(CLI::PositiveNumber);
  c_des->add_option("--duration", des.duration, "Scenario duration (s)")
      ->check(CLI::PositiveNumber);
  auto* des_seed = c_des->add_option("--seed", des.seed, "Scenario seed");
  c_des->add_option("--out", des.out_scenario, "Scenario file to write")->required();
  c_des->add_option("--bundle", des.bundle, "Refit coefficient bundle to use");

  ValidateArgs val;
  auto* c_val = app.add_subcommand("validate", "Score classified groups against known labels");
  c_val->add_option("--trajectories", val.trajectories, "Trajectory CSV to read")->required();
  c_val->add_option("--labels", val.labels, "Ground-truth labels CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInputError;
  }

  try {
    if (c_sim->parsed()) {
      sim.seed_given = sim_seed->count() > 0;
      return run_simulate(sim);
    }
    if (c_cls->parsed()) return run_classify(cls);
    if (c_fit->parsed()) return run_fit(fit);
    if (c_des->parsed()) {
      if (des_target_opt->count() > 0) des.target = des_target;
      des.seed_given = des_seed->count() > 0;
      return run_design(des);
    }
    if (c_val->parsed()) return run_validate(val);
    std::cerr << app.help();
    return kExitInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInputError;
  }
}

}  // namespace entikit
