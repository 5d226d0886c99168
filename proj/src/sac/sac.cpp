#include "crowdemp/sac.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "crowdemp/error.hpp"

namespace crowdemp::sac {

namespace fs = std::filesystem;

void validate(const SacConfig& cfg) {
  if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw ValidationError("sac gamma must lie in (0, 1)");
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw ValidationError("sac tau must lie in (0, 1]");
  if (cfg.batch_size < 1) throw ValidationError("sac batch_size must be positive");
  if (cfg.buffer_capacity < 1) throw ValidationError("sac buffer_capacity must be positive");
  if (!(cfg.actor_lr > 0.0 && cfg.critic_lr > 0.0 && cfg.alpha_lr > 0.0))
    throw ValidationError("sac learning rates must be positive");
  if (cfg.hidden < 1) throw ValidationError("sac hidden width must be positive");
  if (cfg.observed_humans < 0) throw ValidationError("sac observed_humans must be non-negative");
  if (!(cfg.reward_scale > 0.0)) throw ValidationError("sac reward_scale must be positive");
}

GoalFrame goal_frame(const sim::AgentState& self) {
  const Vec2 d = self.goal - self.p;
  const double angle = (d.x == 0.0 && d.y == 0.0) ? self.heading : std::atan2(d.y, d.x);
  return {std::cos(angle), std::sin(angle)};
}

sim::Action to_world_action(const sim::AgentState& self, const sim::Action& local) {
  return sim::clamp_to_box(goal_frame(self).to_world(local.velocity()));
}

sim::Action to_local_action(const sim::AgentState& self, const sim::Action& world) {
  const Vec2 l = goal_frame(self).to_local(world.velocity());
  return {l.x, l.y};
}

int observation_size(int observed_humans) { return kRobotFeatures + kHumanFeatures * observed_humans; }

VectorXd encode_observation(const sim::Observation& obs, int observed_humans) {
  const sim::AgentState& s = obs.self;
  const GoalFrame f = goal_frame(s);
  const Vec2 v = f.to_local(s.v);
  const Vec2 h = f.to_local({std::cos(s.heading), std::sin(s.heading)});
  VectorXd o = VectorXd::Zero(observation_size(observed_humans));
  o.head(kRobotFeatures) << s.goal_distance(), v.x, v.y, s.radius, s.v_ref, h.x, h.y;

  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(obs.others.size());
  for (std::size_t i = 0; i < obs.others.size(); ++i) order.emplace_back(norm(obs.others[i].p - s.p), i);
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t shown = std::min(order.size(), static_cast<std::size_t>(observed_humans));
  for (std::size_t k = 0; k < shown; ++k) {
    const auto& other = obs.others[order[k].second];
    const Eigen::Index base = kRobotFeatures + static_cast<Eigen::Index>(k) * kHumanFeatures;
    const Vec2 rel = f.to_local(other.p - s.p);
    const Vec2 hv = f.to_local(other.v);
    o.segment(base, kHumanFeatures) << rel.x, rel.y, hv.x, hv.y, order[k].first - s.radius - other.radius, 1.0;
  }
  return o;
}

Batch make_batch(const std::vector<Transition>& ts) {
  if (ts.empty()) throw ValidationError("make_batch: no transitions");
  const Eigen::Index d = ts.front().o.size();
  const Eigen::Index b = static_cast<Eigen::Index>(ts.size());
  Batch out;
  out.o.resize(d, b);
  out.o_next.resize(d, b);
  out.a.resize(2, b);
  out.a_next.resize(2, b);
  out.r.resize(b);
  out.done.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Transition& t = ts[static_cast<std::size_t>(i)];
    if (t.o.size() != d || t.o_next.size() != d) throw ValidationError("make_batch: observation size mismatch");
    out.o.col(i) = t.o;
    out.o_next.col(i) = t.o_next;
    out.a.col(i) << t.a.vx, t.a.vy;
    out.a_next.col(i) << t.a_next.vx, t.a_next.vy;
    out.r[i] = t.r;
    out.done[i] = t.done ? 1.0 : 0.0;
  }
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ValidationError("replay buffer capacity must be positive");
}

void ReplayBuffer::add(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

Batch ReplayBuffer::sample(int batch_size, Rng& rng) const {
  if (data_.empty()) throw ValidationError("cannot sample from an empty replay buffer");
  std::vector<Transition> picked;
  picked.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) picked.push_back(data_[rng() % data_.size()]);
  return make_batch(picked);
}

double SacNets::alpha() const { return std::exp(log_alpha); }

SacNets make_nets(int obs_dim, const SacConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  SacNets n;
  n.actor = nn::Mlp({obs_dim, cfg.hidden, cfg.hidden, 4}, nn::Activation::kTanh, derive_seed(seed, {1}));
  nn::init_log_std_bias(n.actor, 2, cfg.log_std_init);
  n.q1 = nn::Mlp({obs_dim + 2, cfg.hidden, cfg.hidden, 1}, nn::Activation::kTanh, derive_seed(seed, {2}));
  n.q2 = nn::Mlp({obs_dim + 2, cfg.hidden, cfg.hidden, 1}, nn::Activation::kTanh, derive_seed(seed, {3}));
  n.q1_target = n.q1;
  n.q2_target = n.q2;
  n.log_alpha = cfg.initial_log_alpha;
  return n;
}

ActorSample sample_actor(const nn::Mlp& actor, const MatrixXd& obs, const MatrixXd& eps) {
  ActorSample s;
  const MatrixXd out = actor.forward(obs, s.tape);
  s.head = nn::split_gaussian_head(out, 2);
  if (eps.rows() != 2 || eps.cols() != obs.cols()) throw ValidationError("sample_actor: noise shape mismatch");
  s.eps = eps;
  s.u = s.head.mean.array() + s.head.log_std.array().exp() * eps.array();
  s.action = s.u.array().tanh();
  s.log_prob = nn::gaussian_log_prob(s.head.mean, s.head.log_std, s.u);
  for (Eigen::Index c = 0; c < s.u.cols(); ++c)
    for (Eigen::Index r = 0; r < 2; ++r) s.log_prob[c] -= nn::log1m_tanh_sq(s.u(r, c));
  return s;
}

void actor_backward(const nn::Mlp& actor, const ActorSample& s, const MatrixXd& d_action,
                    const RowVectorXd& d_log_prob, VectorXd& grad) {
  // log pi = sum(-eps^2/2 - log_std - c) - sum(log(1 - tanh(u)^2)) with eps held
  // fixed, so d log pi / du = 2 tanh(u) and d log pi / d log_std has an extra -1.
  const Eigen::ArrayXXd a = s.action.array();
  const Eigen::ArrayXXd lp = d_log_prob.replicate(2, 1).array();
  const Eigen::ArrayXXd du = d_action.array() * (1.0 - a.square()) + lp * 2.0 * a;
  MatrixXd upstream(4, s.u.cols());
  upstream.topRows(2) = du.matrix();
  upstream.bottomRows(2) =
      ((du * s.head.log_std.array().exp() * s.eps.array() - lp) * s.head.clamp_active.array()).matrix();
  actor.backward(s.tape, upstream, grad);
}

MatrixXd critic_input(const MatrixXd& obs, const MatrixXd& action) {
  MatrixXd x(obs.rows() + action.rows(), obs.cols());
  x.topRows(obs.rows()) = obs;
  x.bottomRows(action.rows()) = action;
  return x;
}

RowVectorXd critic_target(const Batch& batch, const SacNets& nets, double gamma, const MatrixXd& eps_next) {
  const ActorSample s = sample_actor(nets.actor, batch.o_next, eps_next);
  const MatrixXd x = critic_input(batch.o_next, s.action);
  const RowVectorXd q = nets.q1_target.forward(x).cwiseMin(nets.q2_target.forward(x));
  const RowVectorXd soft = q - nets.alpha() * s.log_prob;
  return batch.r.array() + gamma * (1.0 - batch.done.array()) * soft.array();
}

CriticLoss critic_loss(const Batch& batch, const SacNets& nets, const RowVectorXd& targets) {
  const MatrixXd x = critic_input(batch.o, batch.a);
  const double b = static_cast<double>(batch.size());
  CriticLoss out;
  auto one = [&](const nn::Mlp& q, double& loss, VectorXd& grad) {
    nn::Mlp::Tape tape;
    const RowVectorXd resid = q.forward(x, tape) - targets;
    loss = resid.squaredNorm() / b;
    grad = VectorXd::Zero(static_cast<Eigen::Index>(q.parameter_count()));
    q.backward(tape, (2.0 / b) * resid, grad);
  };
  one(nets.q1, out.loss1, out.grad1);
  one(nets.q2, out.loss2, out.grad2);
  return out;
}

ActorLoss actor_loss(const Batch& batch, const SacNets& nets, double alpha, const MatrixXd& eps) {
  const ActorSample s = sample_actor(nets.actor, batch.o, eps);
  const MatrixXd x = critic_input(batch.o, s.action);
  nn::Mlp::Tape t1, t2;
  const RowVectorXd q1 = nets.q1.forward(x, t1);
  const RowVectorXd q2 = nets.q2.forward(x, t2);
  const Eigen::Index n = batch.size();
  const double b = static_cast<double>(n);

  RowVectorXd up1 = RowVectorXd::Zero(n), up2 = RowVectorXd::Zero(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool first = q1[i] <= q2[i];
    (first ? up1 : up2)[i] = -1.0 / b;
    total += alpha * s.log_prob[i] - (first ? q1[i] : q2[i]);
  }
  VectorXd scratch1 = VectorXd::Zero(static_cast<Eigen::Index>(nets.q1.parameter_count()));
  VectorXd scratch2 = VectorXd::Zero(static_cast<Eigen::Index>(nets.q2.parameter_count()));
  const MatrixXd gx = nets.q1.backward(t1, up1, scratch1) + nets.q2.backward(t2, up2, scratch2);
  const MatrixXd d_action = gx.bottomRows(2);

  ActorLoss out;
  out.loss = total / b;
  out.log_prob = s.log_prob;
  out.grad = VectorXd::Zero(static_cast<Eigen::Index>(nets.actor.parameter_count()));
  actor_backward(nets.actor, s, d_action, RowVectorXd::Constant(n, alpha / b), out.grad);
  return out;
}

TemperatureLoss temperature_loss(double log_alpha, const RowVectorXd& log_prob, double target_entropy) {
  if (log_prob.size() == 0) throw ValidationError("temperature_loss: empty batch");
  TemperatureLoss out;
  const double alpha = std::exp(log_alpha);
  out.entropy = -log_prob.mean();
  out.loss = alpha * (out.entropy - target_entropy);
  out.grad = out.loss;
  return out;
}

void soft_update(const nn::Mlp& online, nn::Mlp& target, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("soft_update: tau must lie in (0, 1]");
  if (online.sizes() != target.sizes()) throw ValidationError("soft_update: network shapes differ");
  target.params() = (1.0 - tau) * target.params() + tau * online.params();
}

ImitationLoss imitation_actor_loss(const Batch& expert, const nn::Mlp& actor) {
  nn::Mlp::Tape tape;
  const MatrixXd out = actor.forward(expert.o, tape);
  const double b = static_cast<double>(expert.size());
  const Eigen::ArrayXXd t = out.topRows(2).array().tanh();
  const Eigen::ArrayXXd diff = t - expert.a.array();
  ImitationLoss res;
  res.loss = diff.square().sum() / b;
  MatrixXd upstream = MatrixXd::Zero(4, expert.size());
  upstream.topRows(2) = ((2.0 / b) * diff * (1.0 - t.square())).matrix();
  res.grad = VectorXd::Zero(static_cast<Eigen::Index>(actor.parameter_count()));
  actor.backward(tape, upstream, res.grad);
  return res;
}

CriticLoss imitation_critic_loss(const Batch& expert, const SacNets& nets, double gamma) {
  const MatrixXd x = critic_input(expert.o_next, expert.a_next);
  const RowVectorXd q = nets.q1_target.forward(x).cwiseMin(nets.q2_target.forward(x));
  const RowVectorXd y = expert.r.array() + gamma * (1.0 - expert.done.array()) * q.array();
  return critic_loss(expert, nets, y);
}

ReplayBuffer collect_expert_demonstrations(int n_episodes, const sim::ScenarioConfig& scenario,
                                           const sim::EpisodeConfig& episode, const policy::OrcaConfig& robot_orca,
                                           const policy::OrcaConfig& human_orca, std::uint64_t seed_base,
                                           int observed_humans) {
  if (n_episodes < 1) throw ValidationError("collect_expert_demonstrations: need at least one episode");
  const auto humans = policy::make_orca_policy(human_orca);
  std::vector<Transition> all;
  for (int e = 0; e < n_episodes; ++e) {
    const std::uint64_t seed = seed_base + static_cast<std::uint64_t>(e);
    sim::EpisodeConfig ec = episode;
    ec.seed = seed;
    sim::Simulator sim(sim::spawn_circle_crossing(scenario, seed), humans, ec);
    sim::Observation obs = sim.observe(0);
    sim::Action a = policy::orca_policy(obs, robot_orca);
    while (!sim.done()) {
      Transition t;
      t.o = encode_observation(obs, observed_humans);
      t.a = to_local_action(obs.self, a);
      sim.step(a);
      t.r = sim.trace().rewards.back();
      obs = sim.observe(0);
      t.o_next = encode_observation(obs, observed_humans);
      const auto term = sim.trace().termination;
      t.done = term == sim::Termination::kSuccess || term == sim::Termination::kCollision;
      // Timeouts bootstrap, so they still need the expert's next action.
      if (!t.done) a = policy::orca_policy(obs, robot_orca);
      t.a_next = t.done ? sim::Action{} : to_local_action(obs.self, a);
      all.push_back(std::move(t));
    }
  }
  ReplayBuffer buf(std::max<std::size_t>(all.size(), 1));
  for (auto& t : all) buf.add(std::move(t));
  return buf;
}

SacLearner::SacLearner(SacNets nets, SacConfig cfg, std::uint64_t seed)
    : nets_(std::move(nets)), cfg_(cfg), rng_(seed) {
  validate(cfg_);
  nn::AdamConfig a;
  a.learning_rate = cfg_.actor_lr;
  actor_opt_ = nn::Adam(nets_.actor.parameter_count(), a);
  a.learning_rate = cfg_.critic_lr;
  q1_opt_ = nn::Adam(nets_.q1.parameter_count(), a);
  q2_opt_ = nn::Adam(nets_.q2.parameter_count(), a);
  a.learning_rate = cfg_.alpha_lr;
  alpha_opt_ = nn::Adam(1, a);
}

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw RuntimeFailure(std::string("SAC training diverged: non-finite ") + what);
}

}  // namespace

void SacLearner::critic_step(const CriticLoss& cl) {
  require_finite(cl.loss1, "critic loss");
  require_finite(cl.loss2, "critic loss");
  q1_opt_.step(nets_.q1.params(), cl.grad1);
  q2_opt_.step(nets_.q2.params(), cl.grad2);
}

void SacLearner::soft_update_targets() {
  soft_update(nets_.q1, nets_.q1_target, cfg_.tau);
  soft_update(nets_.q2, nets_.q2_target, cfg_.tau);
}

SacLearner::Stats SacLearner::update(const Batch& raw) {
  Batch batch = raw;
  batch.r *= cfg_.reward_scale;
  const int b = static_cast<int>(batch.size());
  Stats st;
  const MatrixXd eps_next = nn::standard_normal_matrix(2, b, rng_);
  const RowVectorXd y = critic_target(batch, nets_, cfg_.gamma, eps_next);
  const CriticLoss cl = critic_loss(batch, nets_, y);
  critic_step(cl);
  st.critic1 = cl.loss1;
  st.critic2 = cl.loss2;

  const MatrixXd eps = nn::standard_normal_matrix(2, b, rng_);
  const ActorLoss al = actor_loss(batch, nets_, nets_.alpha(), eps);
  require_finite(al.loss, "actor loss");
  actor_opt_.step(nets_.actor.params(), al.grad);
  st.actor = al.loss;

  const TemperatureLoss tl = temperature_loss(nets_.log_alpha, al.log_prob, cfg_.target_entropy);
  require_finite(tl.loss, "temperature loss");
  VectorXd la = VectorXd::Constant(1, nets_.log_alpha);
  alpha_opt_.step(la, VectorXd::Constant(1, tl.grad));
  nets_.log_alpha = la[0];
  st.temperature = tl.loss;
  st.entropy = tl.entropy;

  soft_update_targets();
  return st;
}

SacLearner::Stats SacLearner::imitation_update(const Batch& raw) {
  Batch expert = raw;
  expert.r *= cfg_.reward_scale;
  Stats st;
  const ImitationLoss il = imitation_actor_loss(expert, nets_.actor);
  require_finite(il.loss, "imitation actor loss");
  actor_opt_.step(nets_.actor.params(), il.grad);
  st.actor = il.loss;
  const CriticLoss cl = imitation_critic_loss(expert, nets_, cfg_.gamma);
  critic_step(cl);
  st.critic1 = cl.loss1;
  st.critic2 = cl.loss2;
  soft_update_targets();
  return st;
}

sim::Action sample_action(const SacNets& nets, const VectorXd& obs, Rng& rng) {
  const MatrixXd eps = nn::standard_normal_matrix(2, 1, rng);
  const ActorSample s = sample_actor(nets.actor, obs, eps);
  return {s.action(0, 0), s.action(1, 0)};
}

sim::Action deterministic_action(const SacNets& nets, const VectorXd& obs) {
  const VectorXd out = nets.actor.forward(obs);
  return {std::tanh(out[0]), std::tanh(out[1])};
}

sim::Policy make_sac_policy(SacNets nets, int observed_humans) {
  if (nets.observation_size() != observation_size(observed_humans))
    throw ValidationError("SAC network input does not match the observation layout");
  auto shared = std::make_shared<const SacNets>(std::move(nets));
  return [shared, observed_humans](const sim::Observation& obs) {
    return to_world_action(obs.self, deterministic_action(*shared, encode_observation(obs, observed_humans)));
  };
}

void validate(const TrainConfig& cfg) {
  validate(cfg.sac);
  if (cfg.episodes < 1) throw ValidationError("train: episodes must be positive");
  if (cfg.warmup_steps < 0) throw ValidationError("train: warmup_steps must be non-negative");
  if (cfg.pretrain && (cfg.demo_episodes < 1 || cfg.pretrain_steps < 0))
    throw ValidationError("train: pretraining needs demo_episodes >= 1 and pretrain_steps >= 0");
}

TrainResult train(const TrainConfig& cfg) {
  validate(cfg);
  const int m = cfg.sac.observed_humans;
  SacLearner learner(make_nets(observation_size(m), cfg.sac, derive_seed(cfg.seed, {0x5ac, 1})), cfg.sac,
                     derive_seed(cfg.seed, {0x5ac, 2}));
  TrainResult res;

  if (cfg.pretrain) {
    const ReplayBuffer expert =
        collect_expert_demonstrations(cfg.demo_episodes, cfg.scenario, cfg.episode, cfg.expert_orca, cfg.human_orca,
                                      cfg.scenario_seed_base + 500000, m);
    for (int k = 0; k < cfg.pretrain_steps; ++k) {
      const auto st = learner.imitation_update(expert.sample(cfg.sac.batch_size, learner.rng()));
      if (k == 0) res.pretrain_initial_loss = st.actor;
      res.pretrain_final_loss = st.actor;
    }
  }

  const auto humans = policy::make_orca_policy(cfg.human_orca);
  ReplayBuffer replay(cfg.sac.buffer_capacity);
  Rng explore(derive_seed(cfg.seed, {0x5ac, 3}));
  long env_steps = 0;
  int streak = 0;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const std::uint64_t seed = cfg.scenario_seed_base + static_cast<std::uint64_t>(ep);
    sim::EpisodeConfig ec = cfg.episode;
    ec.seed = seed;
    ec.terminate_on_collision = cfg.collisions_end_episode;
    sim::Simulator sim(sim::spawn_circle_crossing(cfg.scenario, seed), humans, ec);
    VectorXd o = encode_observation(sim.observe(0), m);
    double ret = 0.0, critic_sum = 0.0, entropy_sum = 0.0;
    int updates = 0;
    bool hit = false;
    while (!sim.done()) {
      sim::Action a;
      if (env_steps < cfg.warmup_steps && !cfg.pretrain)
        a = {uniform(explore, -1.0, 1.0), uniform(explore, -1.0, 1.0)};
      else
        a = sample_action(learner.nets(), o, explore);
      sim.step(to_world_action(sim.world().robot, a));
      const double r = sim.trace().rewards.back();
      for (const auto& c : sim.trace().collisions.back()) hit = hit || c.a == 0;
      VectorXd o_next = encode_observation(sim.observe(0), m);
      const auto term = sim.trace().termination;
      replay.add({o, a, r, o_next, term == sim::Termination::kSuccess || term == sim::Termination::kCollision, {}});
      ++env_steps;
      if (env_steps >= cfg.warmup_steps && replay.size() >= static_cast<std::size_t>(cfg.sac.batch_size)) {
        const auto st = learner.update(replay.sample(cfg.sac.batch_size, learner.rng()));
        critic_sum += 0.5 * (st.critic1 + st.critic2);
        entropy_sum += st.entropy;
        ++updates;
      }
      o = std::move(o_next);
      ret += r;
    }
    EpisodeLog row;
    row.episode = ep;
    row.ret = ret;
    row.success = sim.trace().termination == sim::Termination::kSuccess && !hit;
    row.steps = sim.trace().steps();
    row.alpha = learner.nets().alpha();
    row.env_steps = env_steps;
    if (updates > 0) {
      row.critic_loss = critic_sum / updates;
      row.entropy = entropy_sum / updates;
    }
    res.log.push_back(row);
    streak = row.success ? streak + 1 : 0;
    if (streak >= cfg.success_streak && res.steps_to_streak < 0) {
      res.steps_to_streak = env_steps;
      if (cfg.stop_at_streak) break;
    }
  }
  res.nets = learner.nets();
  return res;
}

void write_training_log_csv(std::ostream& out, const std::vector<EpisodeLog>& log) {
  out << "episode,return,success,steps,alpha\n" << std::setprecision(9);
  for (const auto& row : log)
    out << row.episode << ',' << row.ret << ',' << (row.success ? 1 : 0) << ',' << row.steps << ',' << row.alpha
        << '\n';
}

void save_checkpoint(const std::string& dir, const SacNets& nets, const CheckpointInfo& info) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create checkpoint directory " + dir + ": " + ec.message());
  const fs::path d(dir);
  nn::save_mlp((d / "actor.bin").string(), nets.actor);
  nn::save_mlp((d / "q1.bin").string(), nets.q1);
  nn::save_mlp((d / "q2.bin").string(), nets.q2);
  nn::save_mlp((d / "q1_target.bin").string(), nets.q1_target);
  nn::save_mlp((d / "q2_target.bin").string(), nets.q2_target);
  std::ofstream m(d / "manifest.txt");
  if (!m) throw RuntimeFailure("cannot write " + (d / "manifest.txt").string());
  m << "format = crowdemp-sac-1\n"
    << "config_hash = " << info.config_hash << '\n'
    << "training_seed = " << info.training_seed << '\n'
    << "episodes = " << info.episodes << '\n'
    << "observed_humans = " << info.observed_humans << '\n'
    << "scenario_seed_base = " << info.scenario_seed_base << '\n'
    << "log_alpha = " << std::setprecision(17) << nets.log_alpha << '\n';
}

SacNets load_checkpoint(const std::string& dir, CheckpointInfo* info) {
  const fs::path d(dir);
  std::ifstream m(d / "manifest.txt");
  if (!m) throw RuntimeFailure("SAC checkpoint manifest missing in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(m, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (kv["format"] != "crowdemp-sac-1") throw RuntimeFailure("unrecognized SAC checkpoint format in " + dir);
  SacNets nets;
  nets.actor = nn::load_mlp((d / "actor.bin").string());
  nets.q1 = nn::load_mlp((d / "q1.bin").string());
  nets.q2 = nn::load_mlp((d / "q2.bin").string());
  nets.q1_target = nn::load_mlp((d / "q1_target.bin").string());
  nets.q2_target = nn::load_mlp((d / "q2_target.bin").string());
  try {
    nets.log_alpha = std::stod(kv.at("log_alpha"));
    if (info) {
      info->config_hash = kv.at("config_hash");
      info->training_seed = std::stoull(kv.at("training_seed"));
      info->episodes = std::stoi(kv.at("episodes"));
      info->observed_humans = std::stoi(kv.at("observed_humans"));
      info->scenario_seed_base = std::stoull(kv.at("scenario_seed_base"));
    }
  } catch (const std::exception&) {
    throw RuntimeFailure("SAC checkpoint manifest in " + dir + " is incomplete");
  }
  return nets;
}

}  // namespace crowdemp::sac
