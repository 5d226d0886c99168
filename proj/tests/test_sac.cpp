#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "crowdemp/error.hpp"
#include "crowdemp/policy.hpp"
#include "crowdemp/sac.hpp"
#include "gradcheck.hpp"

using namespace crowdemp;
using namespace crowdemp::sac;

namespace {

constexpr int kObs = 4;

// Single affine layer with zero weights: outputs `bias` for every input.
nn::Mlp constant_net(int in, const VectorXd& bias) {
  VectorXd p = VectorXd::Zero(in * bias.size() + bias.size());
  p.tail(bias.size()) = bias;
  return nn::Mlp({in, static_cast<int>(bias.size())}, nn::Activation::kTanh, p);
}

nn::Mlp constant_q(double value) { return constant_net(kObs + 2, VectorXd::Constant(1, value)); }

SacNets tiny_nets(std::uint64_t seed) {
  SacConfig cfg;
  cfg.hidden = 5;
  return make_nets(kObs, cfg, seed);
}

Batch random_batch(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Transition> ts;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.o = VectorXd::NullaryExpr(kObs, [&] { return uniform(rng, -1, 1); });
    t.o_next = VectorXd::NullaryExpr(kObs, [&] { return uniform(rng, -1, 1); });
    t.a = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
    t.a_next = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
    t.r = uniform(rng, -2, 2);
    t.done = i % 3 == 0;
    ts.push_back(t);
  }
  return make_batch(ts);
}

sim::ScenarioConfig scenario(int n) {
  sim::ScenarioConfig s;
  s.n_humans = n;
  return s;
}

}  // namespace

TEST_CASE("observation encoding pads and orders humans by distance") {
  sim::Observation obs;
  obs.self.p = {1, 1};
  obs.self.goal = {1, 5};  // goal frame x is world +y
  obs.self.v = {0.1, 0.2};
  obs.self.heading = 0.0;
  obs.others = {{{4, 1}, {1, 0}, 0.3}, {{2, 1}, {0, 1}, 0.3}};
  const VectorXd o = encode_observation(obs, 3);
  REQUIRE(o.size() == observation_size(3));
  CHECK(o[0] == 4.0);
  CHECK(o[1] == doctest::Approx(0.2));
  CHECK(o[2] == doctest::Approx(-0.1));
  CHECK(o[5] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(o[6] == doctest::Approx(-1.0));
  const Eigen::Index h = kRobotFeatures;
  CHECK(o[h] == doctest::Approx(0.0).epsilon(1e-15));  // nearest first, to the robot's right
  CHECK(o[h + 1] == doctest::Approx(-1.0));
  CHECK(o[h + 2] == doctest::Approx(1.0));
  CHECK(o[h + 4] == doctest::Approx(0.4));
  CHECK(o[h + 5] == 1.0);
  CHECK(o[h + kHumanFeatures + 1] == doctest::Approx(-3.0));
  CHECK(o.tail(kHumanFeatures).isZero());
  CHECK(encode_observation(obs, 1).size() == kRobotFeatures + kHumanFeatures);
}

TEST_CASE("goal frame is invariant to rotating the whole scene") {
  sim::Observation a;
  a.self.p = {0.5, -2};
  a.self.goal = {-1, 3};
  a.self.v = {0.3, 0.4};
  a.self.heading = 0.7;
  a.others = {{{1, 1}, {-0.2, 0.5}, 0.3}, {{-2, 0}, {0.1, 0.1}, 0.3}};
  const double th = 1.1;
  auto rot = [&](Vec2 v) { return Vec2{std::cos(th) * v.x - std::sin(th) * v.y, std::sin(th) * v.x + std::cos(th) * v.y}; };
  sim::Observation b = a;
  b.self.p = rot(a.self.p);
  b.self.goal = rot(a.self.goal);
  b.self.v = rot(a.self.v);
  b.self.heading = a.self.heading + th;
  for (auto& o : b.others) {
    o.p = rot(o.p);
    o.v = rot(o.v);
  }
  CHECK((encode_observation(a, 3) - encode_observation(b, 3)).cwiseAbs().maxCoeff() < 1e-12);

  const sim::Action local{0.6, -0.3};
  const sim::Action wa = to_world_action(a.self, local);
  const sim::Action wb = to_world_action(b.self, local);
  const Vec2 ra = rot(wa.velocity());
  CHECK(ra.x == doctest::Approx(wb.vx));
  CHECK(ra.y == doctest::Approx(wb.vy));
  const sim::Action back = to_local_action(a.self, wa);
  CHECK(back.vx == doctest::Approx(0.6));
  CHECK(back.vy == doctest::Approx(-0.3));
  CHECK(sim::action_in_bounds(to_world_action(a.self, {1.0, 1.0})));
}

TEST_CASE("replay buffer overwrites oldest entries once full") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) {
    Transition t;
    t.o = VectorXd::Constant(1, i);
    t.o_next = t.o;
    t.r = i;
    buf.add(t);
  }
  CHECK(buf.size() == 3);
  CHECK(buf[0].r == 3.0);
  CHECK(buf[1].r == 4.0);
  CHECK(buf[2].r == 2.0);
  Rng rng(1);
  const Batch b = buf.sample(50, rng);
  CHECK(b.size() == 50);
  CHECK(b.r.minCoeff() >= 2.0);
  CHECK_THROWS_AS(ReplayBuffer(0), ValidationError);
}

TEST_CASE("fresh nets start with targets equal to the critics") {
  const SacNets n = tiny_nets(3);
  CHECK(n.q1 == n.q1_target);
  CHECK(n.q2 == n.q2_target);
  CHECK(!(n.q1 == n.q2));
  CHECK(n.alpha() == std::exp(SacConfig{}.initial_log_alpha));
}

TEST_CASE("critic target on hand-built nets") {
  SacNets nets;
  // Zero mean and eps, each log-std contributes -1/2 to log pi.
  const double ls = 0.5 - nn::kHalfLog2Pi;
  nets.actor = constant_net(kObs, (VectorXd(4) << 0, 0, ls, ls).finished());
  nets.q1_target = constant_q(3.0);
  nets.q2_target = constant_q(5.0);
  nets.log_alpha = std::log(0.5);
  Batch b = random_batch(4, 1);
  b.r.setConstant(1.0);
  b.done.setZero();
  const MatrixXd eps = MatrixXd::Zero(2, 4);

  const ActorSample s = sample_actor(nets.actor, b.o_next, eps);
  CHECK(s.log_prob[0] == doctest::Approx(-1.0).epsilon(1e-14));

  const RowVectorXd y = critic_target(b, nets, 0.9, eps);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(4.15).epsilon(1e-14));

  b.done.setOnes();
  CHECK(critic_target(b, nets, 0.9, eps) == b.r);
  b.done.setZero();
  CHECK(critic_target(b, nets, 0.0, eps) == b.r);
}

TEST_CASE("critic loss closed forms") {
  SacNets nets = tiny_nets(1);
  nets.q1 = constant_q(3.0);
  nets.q2 = constant_q(5.0);
  const Batch b = random_batch(6, 2);
  const CriticLoss cl = critic_loss(b, nets, RowVectorXd::Constant(6, 3.0));
  CHECK(cl.loss1 == 0.0);
  CHECK(cl.grad1.isZero());
  CHECK(cl.loss2 == doctest::Approx(4.0));
}

TEST_CASE("critic loss gradient matches finite differences") {
  const SacNets nets = tiny_nets(5);
  const Batch b = random_batch(4, 6);
  const RowVectorXd y = (RowVectorXd(4) << -0.4, -0.1, 0.2, 0.5).finished();
  const CriticLoss cl = critic_loss(b, nets, y);
  auto f1 = [&](const VectorXd& p) {
    SacNets n = nets;
    n.q1.params() = p;
    return critic_loss(b, n, y).loss1;
  };
  auto f2 = [&](const VectorXd& p) {
    SacNets n = nets;
    n.q2.params() = p;
    return critic_loss(b, n, y).loss2;
  };
  CHECK(gradcheck::max_rel_error(f1, nets.q1.params(), cl.grad1) < 1e-4);
  CHECK(gradcheck::max_rel_error(f2, nets.q2.params(), cl.grad2) < 1e-4);
}

TEST_CASE("actor loss gradient matches finite differences") {
  const SacNets nets = tiny_nets(7);
  const Batch b = random_batch(4, 8);
  Rng rng(9);
  const MatrixXd eps = nn::standard_normal_matrix(2, 4, rng);
  for (double alpha : {0.0, 0.3, 2.0}) {
    const ActorLoss al = actor_loss(b, nets, alpha, eps);
    auto f = [&](const VectorXd& p) {
      SacNets n = nets;
      n.actor.params() = p;
      return actor_loss(b, n, alpha, eps).loss;
    };
    CHECK(gradcheck::max_rel_error(f, nets.actor.params(), al.grad) < 1e-4);
  }
}

TEST_CASE("actor gradient vanishes with zero temperature and constant critics") {
  SacNets nets = tiny_nets(11);
  nets.q1 = constant_q(1.0);
  nets.q2 = constant_q(2.0);
  Rng rng(12);
  const Batch b = random_batch(8, 13);
  const ActorLoss al = actor_loss(b, nets, 0.0, nn::standard_normal_matrix(2, 8, rng));
  CHECK(al.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(al.loss == doctest::Approx(-1.0));
}

TEST_CASE("a large temperature drives policy entropy up") {
  SacNets nets = tiny_nets(14);
  const Batch b = random_batch(16, 15);
  auto mean_log_std = [&] {
    return nn::split_gaussian_head(nets.actor.forward(b.o), 2).log_std.mean();
  };
  const double before = mean_log_std();
  nn::AdamConfig ac;
  ac.learning_rate = 1e-3;
  nn::Adam opt(nets.actor.parameter_count(), ac);
  Rng rng(16);
  for (int k = 0; k < 200; ++k) {
    const ActorLoss al = actor_loss(b, nets, 10.0, nn::standard_normal_matrix(2, 16, rng));
    opt.step(nets.actor.params(), al.grad);
  }
  CHECK(mean_log_std() > before + 0.05);
}

TEST_CASE("temperature loss and its sign laws") {
  const RowVectorXd lp = RowVectorXd::Constant(5, 2.0);  // entropy -2
  CHECK(temperature_loss(0.3, lp, -2.0).grad == 0.0);
  CHECK(temperature_loss(0.0, lp, -2.0).entropy == -2.0);

  const TemperatureLoss tl = temperature_loss(0.4, RowVectorXd::Constant(3, 1.0), 0.5);
  CHECK(tl.loss == doctest::Approx(std::exp(0.4) * (-1.0 - 0.5)));
  auto f = [](const VectorXd& x) { return temperature_loss(x[0], RowVectorXd::Constant(3, 1.0), 0.5).loss; };
  CHECK(gradcheck::max_rel_error(f, VectorXd::Constant(1, 0.4), VectorXd::Constant(1, tl.grad)) < 1e-4);

  auto after_one_step = [](double entropy, double target) {
    VectorXd la = VectorXd::Zero(1);
    nn::Adam opt(1, {});
    opt.step(la, VectorXd::Constant(1, temperature_loss(0.0, RowVectorXd::Constant(4, -entropy), target).grad));
    return la[0];
  };
  CHECK(after_one_step(-3.0, -2.0) > 0.0);  // below target: alpha grows
  CHECK(after_one_step(-1.0, -2.0) < 0.0);  // above target: alpha shrinks
}

TEST_CASE("soft update") {
  const nn::Mlp online({3, 4, 2}, nn::Activation::kTanh, 1);
  nn::Mlp target({3, 4, 2}, nn::Activation::kTanh, 2);
  nn::Mlp t1 = target;
  soft_update(online, t1, 1.0);
  CHECK(t1 == online);

  const VectorXd gap0 = target.params() - online.params();
  nn::Mlp t2 = target;
  soft_update(online, t2, 0.005);
  CHECK((t2.params() - (target.params() - 0.005 * gap0)).cwiseAbs().maxCoeff() < 1e-15);

  nn::Mlp t3 = target;
  for (int k = 0; k < 100; ++k) soft_update(online, t3, 0.1);
  const VectorXd expected = std::pow(0.9, 100) * gap0;
  CHECK(((t3.params() - online.params()) - expected).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(soft_update(online, t1, 0.0), ValidationError);
  CHECK_THROWS_AS(soft_update(online, t1, 1.5), ValidationError);
  nn::Mlp wrong({3, 5, 2}, nn::Activation::kTanh, 3);
  CHECK_THROWS_AS(soft_update(online, wrong, 0.5), ValidationError);
}

TEST_CASE("expert demonstrations without humans follow the goal direction") {
  const sim::EpisodeConfig ep;
  policy::OrcaConfig orca;
  const ReplayBuffer buf = collect_expert_demonstrations(1, scenario(0), ep, orca, orca, 77, 5);
  const auto trace = sim::run_episode(sim::spawn_circle_crossing(scenario(0), 77), policy::make_orca_policy(orca),
                                      policy::make_orca_policy(orca), [&] {
                                        sim::EpisodeConfig c = ep;
                                        c.seed = 77;
                                        return c;
                                      }());
  REQUIRE(buf.size() == static_cast<std::size_t>(trace.steps()));
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const sim::Action lin = to_local_action(trace.snapshots[i].robot, policy::linear_policy(trace.snapshots[i].robot));
    CHECK(buf[i].a.vx == doctest::Approx(lin.vx).epsilon(1e-5));
    CHECK(buf[i].a.vy == doctest::Approx(lin.vy).epsilon(1e-5));
    CHECK(buf[i].a.vy == doctest::Approx(0.0).epsilon(1e-5));
    // Holonomic replay along the goal axis: the goal distance shrinks by a * dt.
    if (!buf[i].done) {
      CHECK(buf[i].o_next[0] == doctest::Approx(buf[i].o[0] - buf[i].a.vx * 0.25));
      CHECK(buf[i].o_next[1] == doctest::Approx(buf[i].a.vx));
    }
    if (i + 1 < buf.size()) CHECK(buf[i].a_next == buf[i + 1].a);
  }
  CHECK(buf[buf.size() - 1].done);
  CHECK(buf[buf.size() - 1].r == 20.0);
}

TEST_CASE("expert demonstrations are deterministic and replay-consistent") {
  sim::EpisodeConfig ep;
  policy::OrcaConfig orca;
  const ReplayBuffer a = collect_expert_demonstrations(3, scenario(5), ep, orca, orca, 500, 5);
  const ReplayBuffer b = collect_expert_demonstrations(3, scenario(5), ep, orca, orca, 500, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].o == b[i].o);
    CHECK(a[i].a == b[i].a);
    CHECK(a[i].o_next == b[i].o_next);
  }

  // Re-drive the simulator with the stored actions and compare observations.
  std::size_t k = 0;
  for (std::uint64_t e = 0; e < 3; ++e) {
    sim::EpisodeConfig c = ep;
    c.seed = 500 + e;
    sim::Simulator sim(sim::spawn_circle_crossing(scenario(5), c.seed), policy::make_orca_policy(orca), c);
    while (!sim.done()) {
      REQUIRE(k < a.size());
      // Frame round trips cost a few ulps per step.
      CHECK((encode_observation(sim.observe(0), 5) - a[k].o).cwiseAbs().maxCoeff() < 1e-9);
      sim.step(to_world_action(sim.world().robot, a[k].a));
      CHECK((encode_observation(sim.observe(0), 5) - a[k].o_next).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(sim.trace().rewards.back() == doctest::Approx(a[k].r).epsilon(1e-9));
      ++k;
    }
  }
  CHECK(k == a.size());
}

TEST_CASE("imitation actor loss closed forms and gradient") {
  Batch b = random_batch(5, 21);
  b.a.row(0).setConstant(0.3);
  b.a.row(1).setConstant(-0.6);
  const nn::Mlp exact = constant_net(kObs, (VectorXd(4) << std::atanh(0.3), std::atanh(-0.6), 0, 0).finished());
  CHECK(imitation_actor_loss(b, exact).loss == doctest::Approx(0.0).epsilon(1e-15));

  const nn::Mlp off = constant_net(kObs, (VectorXd(4) << std::atanh(0.4), std::atanh(-0.8), 0, 0).finished());
  CHECK(imitation_actor_loss(b, off).loss == doctest::Approx(0.01 + 0.04).epsilon(1e-12));

  const SacNets nets = tiny_nets(22);
  const Batch r = random_batch(4, 23);
  const ImitationLoss il = imitation_actor_loss(r, nets.actor);
  auto f = [&](const VectorXd& p) {
    nn::Mlp a = nets.actor;
    a.params() = p;
    return imitation_actor_loss(r, a).loss;
  };
  CHECK(gradcheck::max_rel_error(f, nets.actor.params(), il.grad) < 1e-4);
}

TEST_CASE("imitation critic target omits the entropy term") {
  SacNets nets = tiny_nets(30);
  nets.q1_target = constant_q(4.0);
  nets.q2_target = constant_q(6.0);
  nets.log_alpha = std::log(50.0);
  nets.q1 = constant_q(4.0);
  nets.q2 = constant_q(3.0);
  Batch b = random_batch(4, 31);
  b.r.setConstant(2.0);
  b.done.setZero();
  const CriticLoss cl = imitation_critic_loss(b, nets, 0.5);
  CHECK(cl.loss1 == doctest::Approx(0.0).epsilon(1e-15));  // y = 2 + 0.5 * 4
  CHECK(cl.loss2 == doctest::Approx(1.0));

  b.done.setOnes();
  nets.q1 = constant_q(2.0);
  CHECK(imitation_critic_loss(b, nets, 0.5).loss1 == doctest::Approx(0.0).epsilon(1e-15));

  const SacNets rn = tiny_nets(32);
  const Batch rb = random_batch(4, 33);
  const CriticLoss g = imitation_critic_loss(rb, rn, 0.9);
  auto f = [&](const VectorXd& p) {
    SacNets n = rn;
    n.q1.params() = p;
    return imitation_critic_loss(rb, n, 0.9).loss1;
  };
  CHECK(gradcheck::max_rel_error(f, rn.q1.params(), g.grad1) < 1e-4);
}

TEST_CASE("imitation pretraining reduces the actor loss tenfold") {
  sim::EpisodeConfig ep;
  policy::OrcaConfig orca;
  const ReplayBuffer expert = collect_expert_demonstrations(4, scenario(0), ep, orca, orca, 900, 5);
  SacConfig cfg;
  cfg.batch_size = 64;
  cfg.actor_lr = 1e-3;
  SacLearner learner(make_nets(observation_size(5), cfg, 4), cfg, 5);
  const Batch all = [&] {
    std::vector<Transition> ts;
    for (std::size_t i = 0; i < expert.size(); ++i) ts.push_back(expert[i]);
    return make_batch(ts);
  }();
  const double before = imitation_actor_loss(all, learner.nets().actor).loss;
  for (int k = 0; k < 500; ++k) learner.imitation_update(expert.sample(cfg.batch_size, learner.rng()));
  const double after = imitation_actor_loss(all, learner.nets().actor).loss;
  MESSAGE("imitation loss " << before << " -> " << after);
  CHECK(after * 10.0 <= before);
}

TEST_CASE("SAC update stays finite and guards divergence") {
  SacConfig cfg;
  cfg.batch_size = 8;
  cfg.hidden = 6;
  SacLearner learner(make_nets(kObs, cfg, 40), cfg, 41);
  const Batch b = random_batch(8, 42);
  const double la0 = learner.nets().log_alpha;
  for (int k = 0; k < 20; ++k) {
    const auto st = learner.update(b);
    CHECK(std::isfinite(st.critic1));
    CHECK(std::isfinite(st.actor));
  }
  CHECK(learner.nets().log_alpha != la0);
  CHECK(!(learner.nets().q1 == learner.nets().q1_target));

  learner.nets().q1.params()[0] = std::nan("");
  CHECK_THROWS_AS(learner.update(b), RuntimeFailure);
}

TEST_CASE("policy actions stay in the action box") {
  SacNets nets = make_nets(observation_size(5), SacConfig{}, 50);
  nets.actor.params() *= 30.0;  // saturate the head
  Rng rng(51);
  const auto pol = make_sac_policy(nets, 5);
  for (int i = 0; i < 200; ++i) {
    const sim::WorldState w = sim::spawn_circle_crossing(scenario(5), static_cast<std::uint64_t>(i));
    sim::Simulator s(w, policy::make_linear_policy(), {});
    const sim::Observation obs = s.observe(0);
    CHECK(sim::action_in_bounds(pol(obs)));
    CHECK(sim::action_in_bounds(sample_action(nets, encode_observation(obs, 5), rng)));
  }
  CHECK_THROWS_AS(make_sac_policy(nets, 3), ValidationError);
}

TEST_CASE("checkpoint round trip") {
  SacNets nets = tiny_nets(60);
  nets.log_alpha = -1.2345678901234567;
  const auto dir = std::filesystem::temp_directory_path() / "crowdemp_sac_ckpt_test";
  std::filesystem::remove_all(dir);
  CheckpointInfo info{"abc123", 7, 200, 5, 1000000};
  save_checkpoint(dir.string(), nets, info);
  CheckpointInfo back;
  const SacNets loaded = load_checkpoint(dir.string(), &back);
  CHECK(loaded.actor == nets.actor);
  CHECK(loaded.q1 == nets.q1);
  CHECK(loaded.q2_target == nets.q2_target);
  CHECK(loaded.log_alpha == nets.log_alpha);
  CHECK(back.config_hash == "abc123");
  CHECK(back.training_seed == 7);
  CHECK(back.episodes == 200);
  CHECK(back.scenario_seed_base == 1000000);
  std::filesystem::remove(dir / "manifest.txt");
  CHECK_THROWS_AS(load_checkpoint(dir.string()), RuntimeFailure);
  std::filesystem::remove_all(dir);
}
