#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "entikit/estimation.hpp"
#include "entikit/fitting.hpp"
#include "entikit/sim.hpp"

namespace entikit {

// Version stamp carried by every structured file this tool writes.
constexpr int kFormatVersion = 1;

class IoError : public std::runtime_error {
 public:
  IoError(std::string path, const std::string& what);
  IoError(std::string path, std::size_t line, const std::string& what);  // 1-based line

  const std::string& path() const { return path_; }
  std::size_t line() const { return line_; }  // 0 when not row-scoped

 private:
  std::string path_;
  std::size_t line_ = 0;
};

std::string read_text_file(const std::string& path);

// Writes to a temp file in the same directory, then renames into place, so
// interrupted runs never leave a truncated file behind.
void atomic_write_text(const std::string& path, const std::string& content);

// Trajectory CSV: header `agent_id,group_id,frame,t,x,y`; t with 6 decimals,
// x/y with 4; LF endings; group_id -1 when unknown.
std::string trajectory_csv_string(const TrajectorySet& set);
void write_trajectory_csv(const std::string& path, const TrajectorySet& set);
std::vector<ObservedTrack> parse_trajectory_csv(const std::string& text,
                                                const std::string& path_for_errors);
std::vector<ObservedTrack> read_trajectory_csv(const std::string& path);

void write_scenario_json(const std::string& path, const Scenario& scenario);
Scenario read_scenario_json(const std::string& path);

void write_report_json(const std::string& path, const std::vector<GroupReport>& groups);
std::vector<GroupReport> read_report_json(const std::string& path);

// Study CSV header:
// participant_id,stimulus_id,neighbor_dist,radius,pref_speed,group_cohesion,
// friendliness,creepiness,comfort,unnerving
void write_study_csv(const std::string& path, const StudyDataset& data);
StudyDataset read_study_csv(const std::string& path);

void write_bundle_json(const std::string& path, const ModelBundle& bundle);
ModelBundle read_bundle_json(const std::string& path);

// Ground-truth labels: header `group_id,entitativity`, one row per group.
void write_labels_csv(const std::string& path, const std::map<int, double>& labels);
std::map<int, double> read_labels_csv(const std::string& path);

}  // namespace entikit
