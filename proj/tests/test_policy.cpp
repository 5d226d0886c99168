#include <cmath>
#include <numbers>
#include <vector>

#include "crowdemp/error.hpp"
#include "crowdemp/policy.hpp"
#include "crowdemp/rng.hpp"
#include "crowdemp/sim.hpp"
#include "doctest.h"
#include "lp_oracle.hpp"

using namespace crowdemp;
using namespace crowdemp::policy;
using crowdemp::sim::AgentState;
using crowdemp::sim::ObservableState;

namespace {

AgentState agent_at(Vec2 p, Vec2 goal, Vec2 v = {}) {
  AgentState a;
  a.p = p;
  a.goal = goal;
  a.v = v;
  return a;
}

sim::Observation observe(const AgentState& self, std::vector<ObservableState> others) {
  sim::Observation o;
  o.agent_id = 1;
  o.self = self;
  o.others = std::move(others);
  o.episode_seed = 99;
  return o;
}

}  // namespace

TEST_CASE("linear policy") {
  CHECK(linear_policy(agent_at({0, 0}, {4, 0})) == sim::Action{1, 0});
  CHECK(linear_policy(agent_at({1, 1}, {1, 1})) == sim::Action{0, 0});
  const auto a = linear_policy(agent_at({0, 0}, {3, 4}));
  CHECK(a.vx == doctest::Approx(0.6));
  CHECK(a.vy == doctest::Approx(0.8));
}

TEST_CASE("nearest neighbors are range-limited and distance-ordered") {
  const AgentState self = agent_at({0, 0}, {1, 0});
  std::vector<ObservableState> others = {{{3, 0}, {}, 0.3}, {{1, 0}, {}, 0.3}, {{20, 0}, {}, 0.3}, {{0, 2}, {}, 0.3}};
  const auto nn = nearest_neighbors(self, others, 2, 10.0);
  REQUIRE(nn.size() == 2);
  CHECK(nn[0].p == Vec2{1, 0});
  CHECK(nn[1].p == Vec2{0, 2});
  CHECK(nearest_neighbors(self, others, 5, 10.0).size() == 3);
}

TEST_CASE("orca constraints") {
  OrcaConfig cfg;
  const AgentState self = agent_at({0, 0}, {5, 0});
  CHECK(orca_constraints(self, {}, cfg, 0.25).empty());

  SUBCASE("far stationary pair permits the whole disc") {
    const std::vector<ObservableState> nb = {{{20, 0}, {}, 0.3}};
    const auto cs = orca_constraints(self, nb, cfg, 0.25);
    REQUIRE(cs.size() == 1);
    CHECK(norm(cs[0].normal) == doctest::Approx(1.0).epsilon(1e-9));
    Rng rng(5);
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
      const double r = std::sqrt(uniform01(rng));
      const double th = uniform(rng, 0, 2 * std::numbers::pi);
      if (!cs[0].permits({r * std::cos(th), r * std::sin(th)})) ++bad;
    }
    CHECK(bad == 0);
  }

  SUBCASE("head-on pair constraints mirror each other") {
    const AgentState a = agent_at({-2, 0}, {2, 0}, {1, 0});
    const AgentState b = agent_at({2, 0}, {-2, 0}, {-1, 0});
    const auto ca = orca_constraints(a, std::vector<ObservableState>{b.observable()}, cfg, 0.25);
    const auto cb = orca_constraints(b, std::vector<ObservableState>{a.observable()}, cfg, 0.25);
    // b's scene is a's turned half a revolution, and so is its half-plane:
    // both agents resolve the exact tie with the same side convention.
    CHECK(ca[0].point.x == doctest::Approx(-cb[0].point.x));
    CHECK(ca[0].point.y == doctest::Approx(-cb[0].point.y));
    CHECK(ca[0].normal.x == doctest::Approx(-cb[0].normal.x));
    CHECK(ca[0].normal.y == doctest::Approx(-cb[0].normal.y));
    CHECK(std::abs(ca[0].point.y) > 0.0);
    // Reciprocity: each half-plane passes halfway between current velocity and the VO boundary.
    CHECK_FALSE(ca[0].permits(a.v));
  }

  SUBCASE("overlap uses the one-step escape") {
    const std::vector<ObservableState> nb = {{{0.4, 0}, {}, 0.3}};
    const auto cs = orca_constraints(self, nb, cfg, 0.25);
    REQUIRE(cs.size() == 1);
    CHECK(cs[0].normal.x < 0.0);
  }

  SUBCASE("degenerate geometry and bad config") {
    const std::vector<ObservableState> nb = {{{0, 0}, {}, 0.3}};
    CHECK_THROWS_AS(orca_constraints(self, nb, cfg, 0.25), DegenerateGeometry);
    OrcaConfig bad = cfg;
    bad.time_horizon = 0.2;
    CHECK_THROWS_AS(orca_constraints(self, {}, bad, 0.25), ValidationError);
  }
}

TEST_CASE("velocity program closed forms") {
  CHECK(solve_velocity_program({}, {0.3, -0.4}, 1.0) == Vec2{0.3, -0.4});
  const Vec2 far = solve_velocity_program({}, {3, 4}, 1.0);
  CHECK(far.x == doctest::Approx(0.6));
  CHECK(far.y == doctest::Approx(0.8));

  // Single constraint x >= 0.2 against v_pref = (-0.5, 0.3): projection is (0.2, 0.3).
  const std::vector<HalfPlaneConstraint> one = {{{0.2, 0}, {1, 0}}};
  const Vec2 p = solve_velocity_program(one, {-0.5, 0.3}, 1.0);
  CHECK(p.x == doctest::Approx(0.2));
  CHECK(p.y == doctest::Approx(0.3));

  // x >= 0.5 and x <= -0.5 cannot both hold: min-max violation sits at x = 0.
  const std::vector<HalfPlaneConstraint> two = {{{0.5, 0}, {1, 0}}, {{-0.5, 0}, {-1, 0}}};
  const Vec2 q = solve_velocity_program(two, {0.1, 0.2}, 1.0);
  CHECK(q.x == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(lp_oracle::max_violation(two, q) == doctest::Approx(0.5));
}

TEST_CASE("velocity program matches grid search") {
  Rng rng(2024);
  const double res = 2e-3;  // coarser than the acceptance run to keep the unit suite quick
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = lp_oracle::random_instance(rng, 6);
    const Vec2 v = solve_velocity_program(inst.constraints, inst.v_pref, 1.0, derive_seed(1, {std::uint64_t(trial)}));
    CHECK(norm(v) <= 1.0 + 1e-9);
    const auto g = lp_oracle::grid_search(inst.constraints, inst.v_pref, 1.0, res);
    if (g.feasible) {
      CHECK(lp_oracle::max_violation(inst.constraints, v) <= 1e-9);
      CHECK(norm(v - g.best) <= 2 * res);
    } else {
      CHECK(std::abs(lp_oracle::max_violation(inst.constraints, v) - g.violation) <= 2 * res);
    }
  }
}

TEST_CASE("orca policy reduces to linear in an empty scene") {
  OrcaConfig cfg;
  cfg.symmetry_bias = 0.0;
  const AgentState self = agent_at({1, 2}, {4, 6});
  const auto a = orca_policy(observe(self, {}), cfg);
  const auto l = linear_policy(self);
  CHECK(a.vx == doctest::Approx(l.vx));
  CHECK(a.vy == doctest::Approx(l.vy));
}

TEST_CASE("orca policy is translation invariant and rotation equivariant") {
  OrcaConfig cfg;
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    AgentState self = agent_at({uniform(rng, -2, 2), uniform(rng, -2, 2)}, {uniform(rng, -4, 4), uniform(rng, -4, 4)},
                               {uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)});
    std::vector<ObservableState> others;
    for (int k = 0; k < 4; ++k) {
      const double th = uniform(rng, 0, 2 * std::numbers::pi);
      const double r = uniform(rng, 0.8, 3.0);
      others.push_back({self.p + Vec2{r * std::cos(th), r * std::sin(th)},
                        {uniform(rng, -0.7, 0.7), uniform(rng, -0.7, 0.7)}, 0.3});
    }
    const Vec2 base = orca_policy(observe(self, others), cfg).velocity();

    const Vec2 shift{10, -3};
    AgentState ts = self;
    ts.p = ts.p + shift;
    ts.goal = ts.goal + shift;
    auto to = others;
    for (auto& o : to) o.p = o.p + shift;
    const Vec2 moved = orca_policy(observe(ts, to), cfg).velocity();
    CHECK(norm(moved - base) < 1e-9);

    const double phi = uniform(rng, 0, 2 * std::numbers::pi);
    AgentState rs = self;
    rs.p = rotated(rs.p, phi);
    rs.goal = rotated(rs.goal, phi);
    rs.v = rotated(rs.v, phi);
    auto ro = others;
    for (auto& o : ro) {
      o.p = rotated(o.p, phi);
      o.v = rotated(o.v, phi);
    }
    const Vec2 turned = orca_policy(observe(rs, ro), cfg).velocity();
    CHECK(norm(turned - rotated(base, phi)) < 1e-6);
  }
}

TEST_CASE("symmetric head-on ORCA pair passes without collision") {
  sim::WorldState w;
  w.robot = agent_at({-4, 0}, {4, 0});
  w.humans = {agent_at({4, 0}, {-4, 0})};
  sim::EpisodeConfig ec;
  ec.robot_visible = true;
  const auto orca = make_orca_policy({});
  const auto tr = sim::run_episode(w, orca, orca, ec);
  CHECK(tr.termination == sim::Termination::kSuccess);
  CHECK(tr.collision_count() == 0);
}

TEST_CASE("all-ORCA five-human crossings are mostly collision free") {
  sim::ScenarioConfig sc;
  const auto orca = make_orca_policy({});
  int clean = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    sim::EpisodeConfig ec;
    ec.robot_visible = true;
    ec.seed = seed;
    const auto tr = sim::run_episode(sim::spawn_circle_crossing(sc, seed), orca, orca, ec);
    if (tr.collision_count() == 0) ++clean;
  }
  MESSAGE("collision-free episodes: " << clean << "/100");
  CHECK(clean >= 90);
}

TEST_CASE("noisy ORCA stays in the action box and is seeded") {
  const auto noisy = make_noisy_orca_policy({}, 0.5);
  const AgentState self = agent_at({0, 0}, {4, 0});
  const auto o = observe(self, {{{2, 0.2}, {-1, 0}, 0.3}});
  const auto a = noisy(o);
  CHECK(sim::action_in_bounds(a));
  CHECK(a == noisy(o));
}
