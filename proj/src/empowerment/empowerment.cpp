#include "crowdemp/empowerment.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "crowdemp/error.hpp"

namespace crowdemp::empowerment {

namespace {

constexpr double kEntropyConst = nn::kHalfLog2Pi + 0.5;

MatrixXd stack(const MatrixXd& top, const MatrixXd& bottom) {
  MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

// Upstream for -mean log N(x; mean, exp(log_std)) scaled by 1/B, masked where
// the log-std clamp is active.
MatrixXd nll_upstream(const nn::GaussianHead& h, const MatrixXd& x) {
  const double inv_b = 1.0 / static_cast<double>(x.cols());
  const MatrixXd inv_var = (-2.0 * h.log_std.array()).exp().matrix();
  const MatrixXd diff = x - h.mean;
  MatrixXd up(2 * kActionDim, x.cols());
  up.topRows(kActionDim) = -(diff.array() * inv_var.array()).matrix() * inv_b;
  up.bottomRows(kActionDim) =
      ((1.0 - diff.array().square() * inv_var.array()) * h.clamp_active.array()).matrix() * inv_b;
  return up;
}

void require_finite(double v, const char* what, int step) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "empowerment training diverged: non-finite " << what << " loss at step " << step;
    throw RuntimeFailure(os.str());
  }
}

MatrixXd transition_noise(const EmpowermentNets& nets, const MatrixXd& eps_z) {
  if (nets.transition_std.size() == 0) return MatrixXd::Zero(eps_z.rows(), eps_z.cols());
  return nets.transition_std.asDiagonal() * eps_z;
}

}  // namespace

void validate(const EmpowermentConfig& cfg) {
  if (cfg.hidden < 1) throw ValidationError("empowerment hidden width must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("empowerment learning_rate must be positive");
  if (cfg.batch_size < 1) throw ValidationError("empowerment batch_size must be positive");
  if (!(cfg.lambda >= 0.0)) throw ValidationError("empowerment lambda must be non-negative");
  if (cfg.entropy_sign != 1.0 && cfg.entropy_sign != -1.0)
    throw ValidationError("empowerment entropy_sign must be +1 or -1");
  if (!(cfg.noise_ema > 0.0 && cfg.noise_ema <= 1.0)) throw ValidationError("empowerment noise_ema must lie in (0, 1]");
  if (cfg.max_steps < 1 || cfg.min_steps < 0 || cfg.window < 1)
    throw ValidationError("empowerment step budget and window must be positive");
  if (!(cfg.tolerance >= 0.0)) throw ValidationError("empowerment tolerance must be non-negative");
  if (cfg.n_samples < 1) throw ValidationError("empowerment n_samples must be at least 1");
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& columns) const {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(columns.size());
  d.z.resize(z.rows(), n);
  d.a.resize(a.rows(), n);
  d.z_next.resize(z_next.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index c = columns[static_cast<std::size_t>(i)];
    d.z.col(i) = z.col(c);
    d.a.col(i) = a.col(c);
    d.z_next.col(i) = z_next.col(c);
  }
  return d;
}

void Dataset::append(const Dataset& other) {
  if (other.size() == 0) return;
  if (size() == 0) {
    *this = other;
    return;
  }
  if (other.state_dim() != state_dim()) throw ValidationError("dataset append: state dimension mismatch");
  auto grow = [](MatrixXd& m, const MatrixXd& extra) {
    MatrixXd out(m.rows(), m.cols() + extra.cols());
    out << m, extra;
    m = std::move(out);
  };
  grow(z, other.z);
  grow(a, other.a);
  grow(z_next, other.z_next);
}

EmpowermentNets make_nets(int state_dim, const EmpowermentConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (state_dim < 1) throw ValidationError("empowerment state dimension must be positive");
  EmpowermentNets n;
  n.source = nn::Mlp({state_dim, cfg.hidden, cfg.hidden, 2 * kActionDim}, nn::Activation::kTanh, derive_seed(seed, {1}));
  nn::init_log_std_bias(n.source, kActionDim, cfg.source_log_std_init);
  n.transition = nn::Mlp({state_dim + kActionDim, cfg.hidden, cfg.hidden, state_dim}, nn::Activation::kTanh,
                         derive_seed(seed, {2}));
  const int q_in = cfg.planning_on_state ? 2 * state_dim : state_dim;
  n.planning = nn::Mlp({q_in, cfg.hidden, cfg.hidden, 2 * kActionDim}, nn::Activation::kTanh, derive_seed(seed, {3}));
  nn::init_log_std_bias(n.planning, kActionDim, cfg.planning_log_std_init);
  n.transition_std = VectorXd::Zero(state_dim);
  n.planning_on_state = cfg.planning_on_state;
  n.shared_planning = cfg.shared_planning;
  return n;
}

LossGrad source_loss(const Dataset& batch, const EmpowermentNets& nets) {
  if (batch.size() == 0) throw ValidationError("source_loss: empty batch");
  nn::Mlp::Tape tape;
  const auto head = nn::split_gaussian_head(nets.source.forward(batch.z, tape), kActionDim);
  LossGrad out;
  out.loss = -nn::gaussian_log_prob(head.mean, head.log_std, batch.a).mean();
  out.grad = VectorXd::Zero(nets.source.params().size());
  nets.source.backward(tape, nll_upstream(head, batch.a), out.grad);
  return out;
}

LossGrad transition_loss(const Dataset& batch, const EmpowermentNets& nets) {
  if (batch.size() == 0) throw ValidationError("transition_loss: empty batch");
  nn::Mlp::Tape tape;
  const MatrixXd pred = nets.transition.forward(stack(batch.z, batch.a), tape);
  const MatrixXd diff = pred - batch.z_next;
  const double b = static_cast<double>(batch.size());
  LossGrad out;
  out.loss = diff.squaredNorm() / b;
  out.grad = VectorXd::Zero(nets.transition.params().size());
  nets.transition.backward(tape, 2.0 * diff / b, out.grad);
  return out;
}

MatrixXd planning_input(const EmpowermentNets& nets, const MatrixXd& z, const MatrixXd& z_next) {
  return nets.planning_on_state ? stack(z, z_next) : z_next;
}

Rollout rollout(const MatrixXd& z, const EmpowermentNets& nets, const MatrixXd& eps_a, const MatrixXd& eps_z) {
  Rollout r;
  r.source_head = nn::split_gaussian_head(nets.source.forward(z, r.source_tape), kActionDim);
  r.eps_a = eps_a;
  r.a = r.source_head.mean + (r.source_head.log_std.array().exp() * eps_a.array()).matrix();
  r.z_next = nets.transition.forward(stack(z, r.a), r.transition_tape) + transition_noise(nets, eps_z);
  return r;
}

PlanningLoss planning_loss(const MatrixXd& z, const EmpowermentNets& nets, const EmpowermentConfig& cfg,
                           const MatrixXd& eps_a, const MatrixXd& eps_z) {
  if (z.cols() == 0) throw ValidationError("planning_loss: empty batch");
  const Rollout r = rollout(z, nets, eps_a, eps_z);
  const double b = static_cast<double>(z.cols());
  const int dim = kActionDim;

  nn::Mlp::Tape tape;
  const auto q = nn::split_gaussian_head(nets.planning.forward(planning_input(nets, z, r.z_next), tape), dim);
  const RowVectorXd log_q = nn::gaussian_log_prob(q.mean, q.log_std, r.a);
  const RowVectorXd entropy = (q.log_std.colwise().sum().array() + dim * kEntropyConst).matrix();

  PlanningLoss out;
  out.nll = -log_q.mean();
  out.entropy = entropy.mean();
  out.loss = out.nll - cfg.entropy_sign * cfg.lambda * out.entropy;

  MatrixXd up = nll_upstream(q, r.a);
  up.bottomRows(dim).array() -= cfg.entropy_sign * cfg.lambda / b * q.clamp_active.array();
  out.grad = VectorXd::Zero(nets.planning.params().size());
  nets.planning.backward(tape, up, out.grad);

  if (!cfg.joint_ascent) return out;

  // Gradient of the per-sample bound with respect to the sampled action:
  // directly through log q, and through z' = T(z, a) into the planning input.
  const MatrixXd inv_var = (-2.0 * q.log_std.array()).exp().matrix();
  MatrixXd g_a = -((r.a - q.mean).array() * inv_var.array()).matrix();
  VectorXd scratch_q = VectorXd::Zero(nets.planning.params().size());
  const MatrixXd g_in = nets.planning.backward(tape, -b * nll_upstream(q, r.a), scratch_q);
  const MatrixXd g_znext = g_in.bottomRows(nets.state_dim());
  VectorXd scratch_t = VectorXd::Zero(nets.transition.params().size());
  const MatrixXd g_t_in = nets.transition.backward(r.transition_tape, g_znext, scratch_t);
  g_a += g_t_in.bottomRows(dim);

  // Reparameterized a = mean + std * eps; -log omega(a | z) has total
  // derivative +1 per log-std and 0 per mean.
  const MatrixXd std_ = r.source_head.log_std.array().exp().matrix();
  MatrixXd up_s(2 * dim, z.cols());
  up_s.topRows(dim) = g_a;
  up_s.bottomRows(dim) = ((g_a.array() * std_.array() * r.eps_a.array() + 1.0) * r.source_head.clamp_active.array()).matrix();
  up_s *= -cfg.joint_weight / b;
  out.source_grad = VectorXd::Zero(nets.source.params().size());
  nets.source.backward(r.source_tape, up_s, out.source_grad);
  return out;
}

RowVectorXd bound_terms(const MatrixXd& z, const EmpowermentNets& nets, const MatrixXd& eps_a, const MatrixXd& eps_z) {
  const Rollout r = rollout(z, nets, eps_a, eps_z);
  const RowVectorXd log_w = nn::gaussian_log_prob(r.source_head.mean, r.source_head.log_std, r.a);
  if (nets.shared_planning) {
    const auto q = nn::split_gaussian_head(nets.source.forward(z), kActionDim);
    return nn::gaussian_log_prob(q.mean, q.log_std, r.a) - log_w;
  }
  const auto q = nn::split_gaussian_head(nets.planning.forward(planning_input(nets, z, r.z_next)), kActionDim);
  return nn::gaussian_log_prob(q.mean, q.log_std, r.a) - log_w;
}

double estimate_empowerment(const VectorXd& z, const EmpowermentNets& nets, int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("estimate_empowerment: n_samples must be at least 1");
  if (z.size() != nets.state_dim()) throw ValidationError("estimate_empowerment: state dimension mismatch");
  Rng rng(seed);
  const MatrixXd eps_a = nn::standard_normal_matrix(kActionDim, n_samples, rng);
  const MatrixXd eps_z = nn::standard_normal_matrix(static_cast<int>(z.size()), n_samples, rng);
  const MatrixXd zs = z.replicate(1, n_samples);
  return bound_terms(zs, nets, eps_a, eps_z).mean();
}

RowVectorXd estimate_many(const MatrixXd& z, const EmpowermentNets& nets, int n_samples, std::uint64_t seed) {
  RowVectorXd out(z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c)
    out[c] = estimate_empowerment(z.col(c), nets, n_samples, derive_seed(seed, {static_cast<std::uint64_t>(c)}));
  return out;
}

VectorXd residual_std(const Dataset& data, const EmpowermentNets& nets) {
  if (data.size() == 0) throw ValidationError("residual_std: empty dataset");
  const MatrixXd diff = nets.transition.forward(stack(data.z, data.a)) - data.z_next;
  return (diff.array().square().rowwise().mean()).sqrt().matrix();
}

TrainResult train_empowerment(const Dataset& data, const EmpowermentConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (data.size() == 0) throw ValidationError("train_empowerment: empty dataset");
  if (data.a.rows() != kActionDim) throw ValidationError("train_empowerment: actions must be 2-dimensional");

  TrainResult res;
  EmpowermentNets& nets = res.nets;
  nets = make_nets(static_cast<int>(data.state_dim()), cfg, derive_seed(seed, {0xe1, 1}));
  Rng rng(derive_seed(seed, {0xe1, 2}));
  const nn::AdamConfig adam{.learning_rate = cfg.learning_rate};
  nn::Adam source_opt(nets.source.parameter_count(), adam);
  nn::Adam transition_opt(nets.transition.parameter_count(), adam);
  nn::Adam planning_opt(nets.planning.parameter_count(), adam);

  const int dim = static_cast<int>(data.state_dim());
  const Eigen::Index n = data.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(cfg.batch_size));
  VectorXd noise_var;
  TrainLog& log = res.log;

  auto window_mean = [&](int end) {
    double s = 0.0;
    for (int i = end - cfg.window; i < end; ++i) s += log.total[static_cast<std::size_t>(i)];
    return s / cfg.window;
  };

  for (int step = 0; step < cfg.max_steps; ++step) {
    for (auto& i : idx) i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    const Dataset batch = data.subset(idx);

    const LossGrad ls = source_loss(batch, nets);
    const LossGrad lt = transition_loss(batch, nets);

    if (cfg.transition_noise) {
      const MatrixXd diff = nets.transition.forward(stack(batch.z, batch.a)) - batch.z_next;
      const VectorXd var = diff.array().square().rowwise().mean().matrix();
      noise_var = noise_var.size() == 0 ? var : ((1.0 - cfg.noise_ema) * noise_var + cfg.noise_ema * var).eval();
      nets.transition_std = noise_var.cwiseSqrt();
    }

    const MatrixXd eps_a = nn::standard_normal_matrix(kActionDim, cfg.batch_size, rng);
    const MatrixXd eps_z = nn::standard_normal_matrix(dim, cfg.batch_size, rng);
    PlanningLoss lp;
    if (!cfg.shared_planning) lp = planning_loss(batch.z, nets, cfg, eps_a, eps_z);

    require_finite(ls.loss, "source", step);
    require_finite(lt.loss, "transition", step);
    require_finite(lp.loss, "planning", step);

    VectorXd g_source = ls.grad;
    if (lp.source_grad.size() > 0) g_source += lp.source_grad;
    source_opt.step(nets.source.params(), g_source);
    transition_opt.step(nets.transition.params(), lt.grad);
    if (!cfg.shared_planning) planning_opt.step(nets.planning.params(), lp.grad);

    log.source.push_back(ls.loss);
    log.transition.push_back(lt.loss);
    log.planning.push_back(lp.loss);
    log.total.push_back(ls.loss + lt.loss + lp.loss);
    log.steps = step + 1;

    const int done = step + 1;
    if (done >= cfg.min_steps && done >= 2 * cfg.window && done % cfg.window == 0) {
      const double cur = window_mean(done);
      const double prev = window_mean(done - cfg.window);
      if (std::abs(cur - prev) < cfg.tolerance * (1.0 + std::abs(cur))) {
        log.converged = true;
        break;
      }
    }
  }

  nets.transition_std = cfg.transition_noise ? residual_std(data, nets) : VectorXd::Zero(dim);
  return res;
}

std::vector<int> active_steps(const sim::EpisodeTrace& trace, std::size_t human, bool include_parked) {
  if (human >= trace.human_count()) throw ValidationError("active_steps: human index out of range");
  const int end = include_parked ? trace.steps() : std::min(trace.human_arrival(human), trace.steps());
  std::vector<int> out(static_cast<std::size_t>(std::max(end, 0)));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

namespace {

// z for every (snapshot, human) pair, computed once.
std::vector<std::vector<VectorXd>> trace_states(const sim::EpisodeTrace& trace, const occupancy::GridSpec& spec, int k) {
  std::vector<std::vector<VectorXd>> z(trace.snapshots.size());
  for (std::size_t t = 0; t < trace.snapshots.size(); ++t) {
    z[t].reserve(trace.human_count());
    for (std::size_t h = 0; h < trace.human_count(); ++h)
      z[t].push_back(occupancy::assemble_state(h, trace.snapshots[t], spec, k));
  }
  return z;
}

}  // namespace

Dataset trace_dataset(const sim::EpisodeTrace& trace, const occupancy::GridSpec& spec, int k, bool include_parked) {
  if (trace.steps() == 0) throw ValidationError("trace_dataset: empty trace");
  const auto states = trace_states(trace, spec, k);
  std::vector<std::vector<int>> steps(trace.human_count());
  Eigen::Index total = 0;
  for (std::size_t h = 0; h < trace.human_count(); ++h) {
    steps[h] = active_steps(trace, h, include_parked);
    total += static_cast<Eigen::Index>(steps[h].size());
  }
  const Eigen::Index dim = occupancy::state_size(spec, k);
  Dataset d;
  d.z.resize(dim, total);
  d.a.resize(kActionDim, total);
  d.z_next.resize(dim, total);
  Eigen::Index c = 0;
  for (std::size_t h = 0; h < trace.human_count(); ++h) {
    for (int t : steps[h]) {
      const auto ts = static_cast<std::size_t>(t);
      const sim::Action& act = trace.actions[ts][h + 1];
      d.z.col(c) = states[ts][h];
      d.a(0, c) = act.vx;
      d.a(1, c) = act.vy;
      d.z_next.col(c) = states[ts + 1][h];
      ++c;
    }
  }
  return d;
}

Dataset gaussian_channel_dataset(int n, int state_dim, double sigma_a, double sigma, std::uint64_t seed) {
  if (n < 1 || state_dim < 1) throw ValidationError("gaussian_channel_dataset: sizes must be positive");
  if (!(sigma_a > 0.0 && sigma > 0.0)) throw ValidationError("gaussian_channel_dataset: scales must be positive");
  Rng rng(seed);
  Dataset d;
  d.z = MatrixXd::Zero(state_dim, n);
  d.a = sigma_a * nn::standard_normal_matrix(kActionDim, n, rng);
  d.z_next = sigma * nn::standard_normal_matrix(state_dim, n, rng);
  d.z_next.row(0) += d.a.row(0);
  return d;
}

double mean_of_trajectories(const std::vector<double>& per_human) {
  double s = 0.0;
  int count = 0;
  for (double v : per_human) {
    if (std::isnan(v)) continue;
    s += v;
    ++count;
  }
  if (count == 0) throw DegenerateInput("mean empowerment: no human has an active step");
  return s / count;
}

Record mean_empowerment(const sim::EpisodeTrace& trace, const EmpowermentNets& nets, const occupancy::GridSpec& spec,
                        int k, int n_samples, std::uint64_t seed, bool include_parked) {
  if (trace.steps() == 0 || trace.human_count() == 0) throw ValidationError("mean_empowerment: empty trace");
  if (occupancy::state_size(spec, k) != nets.state_dim())
    throw ValidationError("mean_empowerment: grid and k do not match the estimator's state size");
  Record rec;
  const std::size_t nh = trace.human_count();
  rec.steps.resize(nh);
  rec.per_step.resize(nh);
  rec.per_human.assign(nh, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t h = 0; h < nh; ++h) {
    rec.steps[h] = active_steps(trace, h, include_parked);
    double s = 0.0;
    for (int t : rec.steps[h]) {
      const VectorXd z = occupancy::assemble_state(h, trace.snapshots[static_cast<std::size_t>(t)], spec, k);
      const double e = estimate_empowerment(
          z, nets, n_samples, derive_seed(seed, {static_cast<std::uint64_t>(h), static_cast<std::uint64_t>(t)}));
      rec.per_step[h].push_back(e);
      s += e;
    }
    if (!rec.steps[h].empty()) rec.per_human[h] = s / static_cast<double>(rec.steps[h].size());
  }
  rec.mean = mean_of_trajectories(rec.per_human);
  if (!std::isfinite(rec.mean)) throw RuntimeFailure("mean_empowerment: non-finite estimate");
  return rec;
}

}  // namespace crowdemp::empowerment
