#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crowdemp/empowerment.hpp"
#include "crowdemp/occupancy.hpp"
#include "crowdemp/policy.hpp"
#include "crowdemp/sac.hpp"
#include "crowdemp/sim.hpp"
#include "crowdemp/stats.hpp"

namespace crowdemp::harness {

enum class PolicyKind { kLinear, kOrca, kSac, kNoisyOrca };

std::string to_string(PolicyKind p);
// Accepts linear, orca, sac, noisy_orca (case-insensitive).
PolicyKind parse_policy(const std::string& name);

struct ExperimentConfig {
  sim::ScenarioConfig scenario;
  sim::EpisodeConfig episode;
  policy::OrcaConfig human_orca;
  policy::OrcaConfig robot_orca;
  double noisy_orca_sigma = 0.1;

  std::vector<PolicyKind> roster{PolicyKind::kLinear, PolicyKind::kOrca, PolicyKind::kSac};
  int trials = 100;
  // Trial i of every policy uses scenario seed seed_base + i.
  std::uint64_t seed_base = 0;
  // Seeds estimator training and Monte-Carlo estimation.
  std::uint64_t seed = 0;

  occupancy::GridSpec grid;
  int maps = 1;  // k: ego maps per human state
  bool include_parked = false;

  empowerment::EmpowermentConfig estimator;
  // Estimator data: episodes with scenario seeds estimator_seed_base + i.
  int estimator_episodes = 100;
  std::uint64_t estimator_seed_base = 2000000;
  // One estimator fitted on the pooled traces of all policies.
  bool shared_estimator = false;

  // Density sweep; empty disables it. One estimator per policy is fitted on
  // traces pooled over all sizes so values are comparable across sizes.
  std::vector<int> crowd_sizes{2, 5, 10};
  int density_trials = 50;

  // Trial whose series goes into the empowerment-vs-discomfort file.
  std::uint64_t report_seed = 0;

  std::string sac_checkpoint;
  sac::TrainConfig sac_train;
};

void validate(const ExperimentConfig& cfg);

// bracketed [section] headers with key = value lines; `#` and `;` start
// comments. Unknown sections or keys are validation errors.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
// Every setting in a fixed order with round-trip precision; parse_config
// reads it back to an identical config.
std::string canonical_text(const ExperimentConfig& cfg);
// 16 hex digits of FNV-1a over canonical_text.
std::string config_hash(const ExperimentConfig& cfg);

// SAC training setup: the [sac] settings on top of the shared scenario,
// episode and human model.
sac::TrainConfig sac_training_config(const ExperimentConfig& cfg);

// Robot policy; SAC needs nets.
sim::Policy robot_policy(PolicyKind kind, const ExperimentConfig& cfg, const sac::SacNets* nets);
sim::Policy human_policy(const ExperimentConfig& cfg);

sim::EpisodeTrace run_trial(const ExperimentConfig& cfg, int n_humans, std::uint64_t scenario_seed,
                            const sim::Policy& robot);

// Pooled (z, a, z') triples from estimator episodes at each crowd size.
empowerment::Dataset estimator_dataset(const ExperimentConfig& cfg, const sim::Policy& robot,
                                       const std::vector<int>& sizes);

struct TrialSummary {
  std::uint64_t seed = 0;
  std::string policy;
  double mean_empowerment = 0.0;
  bool success = false;
  sim::Termination termination = sim::Termination::kRunning;
  int steps = 0;
  int collisions = 0;
  // Fraction of (human, step) pairs over the human's active steps flagged.
  double discomfort_fraction = 0.0;
};

TrialSummary summarize(const sim::EpisodeTrace& trace, const empowerment::Record& rec, const std::string& policy,
                       bool include_parked);

struct DensityRow {
  std::string policy;
  int n_humans = 0;
  int trials = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct SuiteResult {
  std::vector<TrialSummary> trials;  // policy-major, then seed
  std::vector<DensityRow> density;
  std::optional<stats::TestResult> kruskal;
};

// Writes into out_dir: trials.csv, empowerment.csv, discomfort.csv,
// success_rates.csv, estimator_<policy>.csv, density.csv, shapiro.csv,
// kruskal.csv, dunn.csv and metadata.csv. When sac_nets is null and SAC is
// in the roster, the checkpoint named in the config is loaded.
SuiteResult run_suite(const ExperimentConfig& cfg, const std::string& out_dir,
                      const sac::SacNets* sac_nets = nullptr);

// Statistics files from an existing trials.csv in dir.
std::optional<stats::TestResult> run_statistics(const std::string& dir, const std::string& config_hash);

// Plot data from run_suite artifacts in dir: emp_vs_time.csv,
// emp_vs_density.csv, violin.csv and emp_vs_discomfort.csv.
void report(const std::string& dir, std::uint64_t report_seed);

// Writes the `# config_hash=` provenance line.
void write_provenance(std::ostream& out, const std::string& hash);

}  // namespace crowdemp::harness
