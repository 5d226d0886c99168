#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "crowdemp/nn.hpp"
#include "crowdemp/occupancy.hpp"
#include "crowdemp/sim.hpp"

namespace crowdemp::empowerment {

using nn::MatrixXd;
using nn::RowVectorXd;
using nn::VectorXd;

inline constexpr int kActionDim = 2;

struct EmpowermentConfig {
  int hidden = 64;
  double learning_rate = 1e-3;
  int batch_size = 128;
  double lambda = 0.01;
  // +1 adds lambda * mean(-H(q)) to the planning loss, which rewards entropy.
  // -1 reproduces the literal "+ lambda * H" form, which penalizes it.
  double entropy_sign = 1.0;
  // Condition the planning network on (z, z') instead of z' alone.
  bool planning_on_state = false;
  // Perturb the transition point estimate by its residual standard deviation
  // when sampling z'. Off means z' is the bare point estimate.
  bool transition_noise = true;
  double noise_ema = 0.02;
  // Also ascend the bound with respect to the source parameters.
  bool joint_ascent = false;
  double joint_weight = 1.0;
  // Planning network replaced by the source network at the current state.
  bool shared_planning = false;
  int max_steps = 8000;
  int min_steps = 2000;
  int window = 200;
  // Stop when consecutive window means of the total loss differ by less than
  // tolerance * (1 + |mean|).
  double tolerance = 2e-3;
  int n_samples = 32;
  double source_log_std_init = 0.0;
  double planning_log_std_init = 0.0;
};

void validate(const EmpowermentConfig& cfg);

// One (z_t, a_t, z_{t+1}) triple per column.
struct Dataset {
  MatrixXd z;       // state_dim x N
  MatrixXd a;       // 2 x N
  MatrixXd z_next;  // state_dim x N

  Eigen::Index size() const { return z.cols(); }
  Eigen::Index state_dim() const { return z.rows(); }
  Dataset subset(const std::vector<Eigen::Index>& columns) const;
  void append(const Dataset& other);
};

struct EmpowermentNets {
  nn::Mlp source;      // z -> [mean(2), log_std(2)]
  nn::Mlp transition;  // [z, a] -> z' point estimate
  nn::Mlp planning;    // z' (or [z, z']) -> [mean(2), log_std(2)]
  VectorXd transition_std;  // per-dimension residual std, zero when unused
  bool planning_on_state = false;
  bool shared_planning = false;

  int state_dim() const { return source.input_size(); }
};

EmpowermentNets make_nets(int state_dim, const EmpowermentConfig& cfg, std::uint64_t seed);

struct LossGrad {
  double loss = 0.0;
  VectorXd grad;
};

// -mean log omega(a | z).
LossGrad source_loss(const Dataset& batch, const EmpowermentNets& nets);
// mean ||z' - T(z, a)||^2.
LossGrad transition_loss(const Dataset& batch, const EmpowermentNets& nets);

MatrixXd planning_input(const EmpowermentNets& nets, const MatrixXd& z, const MatrixXd& z_next);

// Source-sampled actions and the transition's sampled next states, both
// reparameterized by fixed noise.
struct Rollout {
  nn::Mlp::Tape source_tape, transition_tape;
  nn::GaussianHead source_head;
  MatrixXd eps_a;
  MatrixXd a;
  MatrixXd z_next;
};
Rollout rollout(const MatrixXd& z, const EmpowermentNets& nets, const MatrixXd& eps_a, const MatrixXd& eps_z);

struct PlanningLoss {
  double loss = 0.0;
  double nll = 0.0;      // -mean log q(a_s | z'_s)
  double entropy = 0.0;  // mean H(q)
  VectorXd grad;         // planning parameters
  // Joint ascent only: gradient of -joint_weight * bound w.r.t. the source.
  VectorXd source_grad;
};
// L = -mean log q(a_s | z'_s) + entropy_sign * lambda * mean(-H(q)). Sampled
// actions and next states are constants for the planning gradient.
PlanningLoss planning_loss(const MatrixXd& z, const EmpowermentNets& nets, const EmpowermentConfig& cfg,
                           const MatrixXd& eps_a, const MatrixXd& eps_z);

// Per-column bound log q(a_s | z'_s) - log omega(a_s | z) for given noise.
RowVectorXd bound_terms(const MatrixXd& z, const EmpowermentNets& nets, const MatrixXd& eps_a, const MatrixXd& eps_z);

// Monte-Carlo estimate at one state; deterministic given the seed.
double estimate_empowerment(const VectorXd& z, const EmpowermentNets& nets, int n_samples, std::uint64_t seed);
// One estimate per column with seeds derive_seed(seed, {column}).
RowVectorXd estimate_many(const MatrixXd& z, const EmpowermentNets& nets, int n_samples, std::uint64_t seed);

struct TrainLog {
  std::vector<double> source, transition, planning, total;
  int steps = 0;
  bool converged = false;
};

struct TrainResult {
  EmpowermentNets nets;
  TrainLog log;
};

// Algorithm loop: per step one minibatch, one Adam update per network.
TrainResult train_empowerment(const Dataset& data, const EmpowermentConfig& cfg, std::uint64_t seed);

// Residual std of the transition network over a dataset.
VectorXd residual_std(const Dataset& data, const EmpowermentNets& nets);

// Snapshot indices at which human h is active: it has not yet arrived and an
// action follows. With include_parked every acted step counts.
std::vector<int> active_steps(const sim::EpisodeTrace& trace, std::size_t human, bool include_parked);

// (z_t, human action at t, z_{t+1}) over every human's active steps.
Dataset trace_dataset(const sim::EpisodeTrace& trace, const occupancy::GridSpec& spec, int k, bool include_parked);

// Linear-Gaussian channel: a ~ N(0, sigma_a^2 I), z = 0, z'_1 = a_1 + noise,
// remaining z' dimensions pure noise. I(a; z') = 0.5 ln(1 + sigma_a^2 / sigma^2).
Dataset gaussian_channel_dataset(int n, int state_dim, double sigma_a, double sigma, std::uint64_t seed);

struct Record {
  std::vector<std::vector<int>> steps;          // [human] active snapshot indices
  std::vector<std::vector<double>> per_step;    // [human] estimate per active step
  std::vector<double> per_human;                // trajectory averages (NaN without active steps)
  double mean = 0.0;                            // Mean Empowerment
};

// Humans without any active step are left out of the mean.
double mean_of_trajectories(const std::vector<double>& per_human);

Record mean_empowerment(const sim::EpisodeTrace& trace, const EmpowermentNets& nets, const occupancy::GridSpec& spec,
                        int k, int n_samples, std::uint64_t seed, bool include_parked);

}  // namespace crowdemp::empowerment
