#include <algorithm>
#include <numeric>
#include <sstream>
#include <string>

#include "crowdemp/error.hpp"
#include "crowdemp/occupancy.hpp"
#include "crowdemp/rng.hpp"
#include "doctest.h"

using namespace crowdemp;
using namespace crowdemp::occupancy;
using crowdemp::sim::AgentState;
using crowdemp::sim::ObservableState;
using crowdemp::sim::WorldState;

namespace {

void check_map_invariants(const OccupancyMap& m) {
  for (const Cell& c : m.cells()) {
    CHECK((c.occupancy == 0.0 || c.occupancy == 1.0));
    if (c.occupancy == 0.0) {
      CHECK(c.vx == 0.0);
      CHECK(c.vy == 0.0);
    }
  }
}

AgentState human_at(Vec2 p, Vec2 v = {}) {
  AgentState a;
  a.p = p;
  a.v = v;
  return a;
}

WorldState random_world(Rng& rng, int n) {
  WorldState w;
  w.robot = human_at({uniform(rng, -3, 3), uniform(rng, -3, 3)}, {uniform(rng, -1, 1), uniform(rng, -1, 1)});
  for (int i = 0; i < n; ++i)
    w.humans.push_back(human_at({uniform(rng, -3, 3), uniform(rng, -3, 3)}, {uniform(rng, -1, 1), uniform(rng, -1, 1)}));
  return w;
}

}  // namespace

TEST_CASE("empty scene gives an empty map") {
  const auto m = build_ego_map({1, 2}, {}, GridSpec{});
  CHECK(m.occupied_count() == 0);
  check_map_invariants(m);
}

TEST_CASE("single neighbor lands in the expected cell") {
  const std::vector<ObservableState> others = {{{0.5, 0.0}, {0.3, -0.2}, 0.3}};
  const auto m = build_ego_map({0, 0}, others, GridSpec{});
  CHECK(m.occupied_count() == 1);
  // Columns cover x in [-2,-1), [-1,0), [0,1), [1,2); rows likewise in y.
  const Cell& c = m.at(2, 2);
  CHECK(c.occupancy == 1.0);
  CHECK(c.vx == 0.3);
  CHECK(c.vy == -0.2);
  check_map_invariants(m);
}

TEST_CASE("agents outside the grid are ignored") {
  const std::vector<ObservableState> others = {{{2.0, 0.0}, {1, 0}, 0.3}, {{0.0, -2.01}, {1, 0}, 0.3}};
  CHECK(build_ego_map({0, 0}, others, GridSpec{}).occupied_count() == 0);
}

TEST_CASE("nearest agent wins a shared cell") {
  const std::vector<ObservableState> others = {{{0.9, 0.9}, {1, 1}, 0.3}, {{0.2, 0.1}, {-0.5, 0.25}, 0.3}};
  const auto m = build_ego_map({0, 0}, others, GridSpec{});
  CHECK(m.occupied_count() == 1);
  CHECK(m.at(2, 2).vx == -0.5);
  CHECK(m.at(2, 2).vy == 0.25);
}

TEST_CASE("maps are translation invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    WorldState w = random_world(rng, 6);
    const auto z = assemble_state(0, w, GridSpec{}, 3);
    // Integer shifts keep floor() boundaries exact.
    for (auto& h : w.humans) h.p = h.p + Vec2{10, -3};
    w.robot.p = w.robot.p + Vec2{10, -3};
    CHECK(assemble_state(0, w, GridSpec{}, 3) == z);
  }
}

TEST_CASE("assemble_state layout and padding") {
  WorldState w;
  w.robot = human_at({50, 50});
  w.humans = {human_at({0, 0})};
  const GridSpec spec;
  const auto z1 = assemble_state(0, w, spec, 1);
  CHECK(z1.size() == 48);
  CHECK(z1.isZero());

  w.humans.push_back(human_at({0.5, 0.5}, {0.1, 0.2}));
  const auto z3 = assemble_state(0, w, spec, 3);
  CHECK(z3.size() == 3 * 4 * 4 * 3);
  // Subject's own map sees the neighbor in cell (2, 2).
  CHECK(z3[(2 * 4 + 2) * 3] == 1.0);
  CHECK(z3[(2 * 4 + 2) * 3 + 2] == doctest::Approx(0.2));
  // Second map is the neighbor's, which sees the subject in cell (1, 1).
  CHECK(z3[48 + (1 * 4 + 1) * 3] == 1.0);
  CHECK(z3.tail(48).isZero());

  CHECK_THROWS_AS(assemble_state(5, w, spec, 1), ValidationError);
  CHECK_THROWS_AS(assemble_state(0, w, spec, 0), ValidationError);
}

TEST_CASE("the robot is an occupant") {
  WorldState w;
  w.robot = human_at({-0.5, 0.5}, {0.7, 0});
  w.humans = {human_at({0, 0})};
  const auto z = assemble_state(0, w, GridSpec{}, 1);
  CHECK(z[(2 * 4 + 1) * 3] == 1.0);
  CHECK(z[(2 * 4 + 1) * 3 + 1] == 0.7);
}

TEST_CASE("state ignores storage order of humans") {
  Rng rng(12);
  const GridSpec spec;
  for (int trial = 0; trial < 50; ++trial) {
    const WorldState w = random_world(rng, 5);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    WorldState pw = w;
    for (std::size_t i = 0; i < 5; ++i) pw.humans[i] = w.humans[perm[i]];
    for (std::size_t i = 0; i < 5; ++i) {
      std::size_t subject_in_perm = 0;
      while (perm[subject_in_perm] != i) ++subject_in_perm;
      CHECK(assemble_state(i, w, spec, 3) == assemble_state(subject_in_perm, pw, spec, 3));
    }
  }
}

TEST_CASE("generated maps keep the binary and empty-cell invariants") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const WorldState w = random_world(rng, 8);
    std::vector<ObservableState> others;
    for (std::size_t h = 1; h < w.humans.size(); ++h) others.push_back(w.humans[h].observable());
    check_map_invariants(build_ego_map(w.humans[0].p, others, GridSpec{3, 5, 0.5}));
  }
}

TEST_CASE("grid validation and csv export") {
  CHECK_THROWS_AS(build_ego_map({0, 0}, {}, GridSpec{0, 4, 1.0}), ValidationError);
  CHECK_THROWS_AS(build_ego_map({0, 0}, {}, GridSpec{4, 4, 0.0}), ValidationError);

  const std::vector<ObservableState> others = {{{0.5, 0.0}, {0.3, -0.2}, 0.3}};
  const auto m = build_ego_map({0, 0}, others, GridSpec{});
  std::ostringstream os;
  write_map_csv_header(os);
  write_map_csv(os, 3, 7, m);
  const std::string s = os.str();
  CHECK(s.rfind("subject_id,t,cell_row,cell_col,occupancy,v_x,v_y\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 17);
  CHECK(s.find("3,7,2,2,1,0.3,-0.2\n") != std::string::npos);
}
