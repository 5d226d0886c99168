#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "crowdemp/nn.hpp"
#include "crowdemp/policy.hpp"
#include "crowdemp/rng.hpp"
#include "crowdemp/sim.hpp"
#include "crowdemp/vec2.hpp"

namespace crowdemp::sac {

using nn::MatrixXd;
using nn::RowVectorXd;
using nn::VectorXd;

struct SacConfig {
  double gamma = 0.99;
  double tau = 0.005;
  double target_entropy = -2.0;
  int batch_size = 256;
  std::size_t buffer_capacity = 100000;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double initial_log_alpha = -3.0;
  int hidden = 64;
  int observed_humans = 5;
  double log_std_init = -0.5;
  // Rewards are multiplied by this before entering any critic target.
  double reward_scale = 0.05;
};

void validate(const SacConfig& cfg);

// Observations and policy actions live in the robot's goal frame: x points
// from the robot to its goal.
struct GoalFrame {
  double c = 1.0;
  double s = 0.0;
  Vec2 to_local(Vec2 w) const { return {c * w.x + s * w.y, -s * w.x + c * w.y}; }
  Vec2 to_world(Vec2 l) const { return {c * l.x - s * l.y, s * l.x + c * l.y}; }
};
// Falls back to the heading when the robot sits exactly on its goal.
GoalFrame goal_frame(const sim::AgentState& self);
// Goal-frame policy output to a world command, clamped to the action box.
sim::Action to_world_action(const sim::AgentState& self, const sim::Action& local);
sim::Action to_local_action(const sim::AgentState& self, const sim::Action& world);

// Robot block: goal distance, velocity (2), radius, v_ref, cos/sin of heading
// relative to the goal direction. Then per observed human, nearest first:
// offset (2), velocity (2), surface gap, presence flag. Missing humans are all
// zeros. Vectors are in the goal frame.
inline constexpr int kRobotFeatures = 7;
inline constexpr int kHumanFeatures = 6;
int observation_size(int observed_humans);
VectorXd encode_observation(const sim::Observation& obs, int observed_humans);

struct Transition {
  VectorXd o;
  sim::Action a;  // goal-frame action
  double r = 0.0;
  VectorXd o_next;
  bool done = false;
  sim::Action a_next;  // behavior policy's action at o_next (expert data only)
};

// Column-major minibatch: one transition per column.
struct Batch {
  MatrixXd o;       // obs_dim x B
  MatrixXd a;       // 2 x B
  RowVectorXd r;    // 1 x B
  MatrixXd o_next;  // obs_dim x B
  RowVectorXd done; // 1 x B, 1.0 when terminal
  MatrixXd a_next;  // 2 x B

  Eigen::Index size() const { return o.cols(); }
};

Batch make_batch(const std::vector<Transition>& transitions);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return data_[i]; }
  // Uniform sampling with replacement.
  Batch sample(int batch_size, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

struct SacNets {
  nn::Mlp actor;  // obs -> [mean(2), log_std(2)], tanh-squashed at sampling
  nn::Mlp q1, q2;
  nn::Mlp q1_target, q2_target;
  double log_alpha = 0.0;

  double alpha() const;
  int observation_size() const { return actor.input_size(); }
};

SacNets make_nets(int obs_dim, const SacConfig& cfg, std::uint64_t seed);

// Reparameterized squashed-Gaussian sample a = tanh(mean + std * eps).
struct ActorSample {
  nn::Mlp::Tape tape;
  nn::GaussianHead head;
  MatrixXd eps;
  MatrixXd u;
  MatrixXd action;
  RowVectorXd log_prob;
};
ActorSample sample_actor(const nn::Mlp& actor, const MatrixXd& obs, const MatrixXd& eps);
// Accumulates into grad the actor-parameter gradient of a loss with partials
// d_action (2 x B) and d_log_prob (1 x B) at the sample.
void actor_backward(const nn::Mlp& actor, const ActorSample& s, const MatrixXd& d_action,
                    const RowVectorXd& d_log_prob, VectorXd& grad);

MatrixXd critic_input(const MatrixXd& obs, const MatrixXd& action);

// y = r + gamma * (1 - done) * (min_j Qtarget_j(o', a~') - alpha * log pi(a~'|o')),
// with a~' drawn from the actor using eps_next.
RowVectorXd critic_target(const Batch& batch, const SacNets& nets, double gamma, const MatrixXd& eps_next);

struct CriticLoss {
  double loss1 = 0.0;
  double loss2 = 0.0;
  VectorXd grad1;
  VectorXd grad2;
};
// Mean squared error of each online critic at (o, a) against fixed targets.
CriticLoss critic_loss(const Batch& batch, const SacNets& nets, const RowVectorXd& targets);

struct ActorLoss {
  double loss = 0.0;  // mean(alpha * log pi - min_j Q_j), the negated objective
  VectorXd grad;
  RowVectorXd log_prob;
};
ActorLoss actor_loss(const Batch& batch, const SacNets& nets, double alpha, const MatrixXd& eps);

struct TemperatureLoss {
  double loss = 0.0;
  double grad = 0.0;     // d loss / d log_alpha
  double entropy = 0.0;  // mean(-log pi)
};
TemperatureLoss temperature_loss(double log_alpha, const RowVectorXd& log_prob, double target_entropy);

// target <- (1 - tau) * target + tau * online.
void soft_update(const nn::Mlp& online, nn::Mlp& target, double tau);

struct ImitationLoss {
  double loss = 0.0;
  VectorXd grad;
};
// mean ||tanh(mean(o_e)) - a_e||^2.
ImitationLoss imitation_actor_loss(const Batch& expert, const nn::Mlp& actor);
// Bellman error with y = r_e + gamma * (1 - done) * min_j Qtarget_j(o_e', a_e'), no entropy term.
CriticLoss imitation_critic_loss(const Batch& expert, const SacNets& nets, double gamma);

// ORCA-driven robot episodes among ORCA humans; scenario seeds seed_base + i.
ReplayBuffer collect_expert_demonstrations(int n_episodes, const sim::ScenarioConfig& scenario,
                                           const sim::EpisodeConfig& episode, const policy::OrcaConfig& robot_orca,
                                           const policy::OrcaConfig& human_orca, std::uint64_t seed_base,
                                           int observed_humans);

// Owns optimizer state and the noise stream for updates.
class SacLearner {
 public:
  SacLearner(SacNets nets, SacConfig cfg, std::uint64_t seed);

  struct Stats {
    double critic1 = 0.0, critic2 = 0.0, actor = 0.0, temperature = 0.0, entropy = 0.0;
  };
  Stats update(const Batch& batch);
  Stats imitation_update(const Batch& expert);

  const SacNets& nets() const { return nets_; }
  SacNets& nets() { return nets_; }
  Rng& rng() { return rng_; }

 private:
  void critic_step(const CriticLoss& cl);
  void soft_update_targets();

  SacNets nets_;
  SacConfig cfg_;
  Rng rng_;
  nn::Adam actor_opt_, q1_opt_, q2_opt_, alpha_opt_;
};

// Goal-frame actions.
sim::Action sample_action(const SacNets& nets, const VectorXd& obs, Rng& rng);
sim::Action deterministic_action(const SacNets& nets, const VectorXd& obs);
// Deterministic evaluation policy tanh(mean), mapped to the world frame.
sim::Policy make_sac_policy(SacNets nets, int observed_humans);

struct TrainConfig {
  SacConfig sac;
  sim::ScenarioConfig scenario;
  sim::EpisodeConfig episode;
  policy::OrcaConfig human_orca;
  // A small margin keeps the demonstrator from grazing humans that ignore it.
  policy::OrcaConfig expert_orca{.time_horizon = 5.0, .safety_space = 0.1};
  int episodes = 200;
  int warmup_steps = 1000;
  bool pretrain = true;
  int demo_episodes = 100;
  int pretrain_steps = 10000;
  std::uint64_t seed = 0;
  // Training scenarios use seeds scenario_seed_base + episode; demos use the
  // range just past them. Keep both away from evaluation seeds.
  std::uint64_t scenario_seed_base = 1000000;
  int success_streak = 10;
  // Whether a collision ends a training episode. Evaluation always ends on one.
  bool collisions_end_episode = false;
  // End training as soon as the streak is first reached.
  bool stop_at_streak = false;
};

void validate(const TrainConfig& cfg);

struct EpisodeLog {
  int episode = 0;
  double ret = 0.0;
  bool success = false;
  int steps = 0;
  double alpha = 0.0;
  long env_steps = 0;  // cumulative interaction steps after this episode
  // Means over this episode's updates (0 when none ran).
  double critic_loss = 0.0;
  double entropy = 0.0;
};

struct TrainResult {
  SacNets nets;
  std::vector<EpisodeLog> log;
  // Interaction steps when the first run of success_streak consecutive
  // successful episodes completed, or -1 if it never did.
  long steps_to_streak = -1;
  double pretrain_initial_loss = 0.0;
  double pretrain_final_loss = 0.0;
};

TrainResult train(const TrainConfig& cfg);

void write_training_log_csv(std::ostream& out, const std::vector<EpisodeLog>& log);

struct CheckpointInfo {
  std::string config_hash;
  std::uint64_t training_seed = 0;
  int episodes = 0;
  int observed_humans = 5;
  std::uint64_t scenario_seed_base = 0;
};

// Directory with actor/q1/q2/q1_target/q2_target .bin files and manifest.txt.
void save_checkpoint(const std::string& dir, const SacNets& nets, const CheckpointInfo& info);
SacNets load_checkpoint(const std::string& dir, CheckpointInfo* info = nullptr);

}  // namespace crowdemp::sac
