#include "crowdemp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "crowdemp/error.hpp"
#include "crowdemp/rng.hpp"

namespace crowdemp::sim {

bool action_in_bounds(const Action& a) {
  return std::isfinite(a.vx) && std::isfinite(a.vy) && std::abs(a.vx) <= kActionBound &&
         std::abs(a.vy) <= kActionBound;
}

void validate_action(const Action& a) {
  if (!action_in_bounds(a)) {
    std::ostringstream os;
    os << "action (" << a.vx << ", " << a.vy << ") outside [-1, 1]^2";
    throw ValidationError(os.str());
  }
}

Action clamp_to_box(Vec2 v) {
  return {std::clamp(v.x, -kActionBound, kActionBound), std::clamp(v.y, -kActionBound, kActionBound)};
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kRunning: return "running";
    case Termination::kSuccess: return "success";
    case Termination::kCollision: return "collision";
    case Termination::kTimeout: return "timeout";
  }
  return "unknown";
}

AgentState step_agent(const AgentState& state, const Action& action, double dt) {
  if (!(dt > 0.0)) throw ValidationError("step_agent: dt must be positive");
  validate_action(action);
  AgentState next = state;
  next.v = action.velocity();
  next.p = {state.p.x + action.vx * dt, state.p.y + action.vy * dt};
  if (action.vx != 0.0 || action.vy != 0.0) next.heading = std::atan2(action.vy, action.vx);
  return next;
}

double compute_reward(const WorldState& world, bool robot_collided, const RewardParams& params) {
  const double d_goal = world.robot.goal_distance();
  if (d_goal < world.robot.radius) return params.success;
  return -d_goal + (robot_collided ? params.collision : 0.0) + params.interaction;
}

namespace {

AgentState make_agent(double angle, const ScenarioConfig& cfg) {
  AgentState a;
  a.p = {cfg.circle_radius * std::cos(angle), cfg.circle_radius * std::sin(angle)};
  a.goal = -a.p;
  a.radius = cfg.agent_radius;
  a.v_ref = cfg.v_pref;
  a.heading = angle + std::numbers::pi;
  return a;
}

}  // namespace

WorldState spawn_circle_crossing(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.n_humans < 0) throw ValidationError("n_humans must be non-negative");
  if (!(cfg.agent_radius > 0.0) || !(cfg.v_pref > 0.0)) throw ValidationError("radius and v_pref must be positive");
  if (!(cfg.circle_radius > 2.0 * cfg.agent_radius)) throw ValidationError("circle_radius must exceed 2 agent radii");
  if (!(cfg.dt > 0.0)) throw ValidationError("dt must be positive");

  Rng rng(seed);
  const int n_agents = cfg.n_humans + 1;
  const double jitter = cfg.jitter_deg * std::numbers::pi / 180.0;
  const double spacing = 2.0 * std::numbers::pi / n_agents;
  const double min_sep = 2.0 * cfg.agent_radius + cfg.spawn_margin;

  for (int attempt = 0; attempt < cfg.max_placement_attempts; ++attempt) {
    std::vector<AgentState> agents;
    agents.reserve(static_cast<std::size_t>(n_agents));
    for (int i = 0; i < n_agents; ++i) {
      const double angle = -std::numbers::pi / 2.0 + i * spacing + uniform(rng, -jitter, jitter);
      agents.push_back(make_agent(angle, cfg));
    }
    bool separated = true;
    for (int i = 0; i < n_agents && separated; ++i)
      for (int j = i + 1; j < n_agents && separated; ++j)
        separated = norm(agents[static_cast<std::size_t>(i)].p - agents[static_cast<std::size_t>(j)].p) >= min_sep;
    if (!separated) continue;

    WorldState w;
    w.dt = cfg.dt;
    w.robot = agents.front();
    w.humans.assign(agents.begin() + 1, agents.end());
    return w;
  }
  std::ostringstream os;
  os << "could not place " << n_agents << " agents on a circle of radius " << cfg.circle_radius << " after "
     << cfg.max_placement_attempts << " attempts";
  throw RuntimeFailure(os.str());
}

std::vector<bool> discomfort_flags(const WorldState& world, double d_disc) {
  if (!(d_disc > 0.0)) throw ValidationError("discomfort distance must be positive");
  const int n = static_cast<int>(world.agent_count());
  std::vector<bool> flags(world.humans.size(), false);
  for (int k = 1; k < n; ++k) {
    const AgentState& a = world.agent(k);
    double min_gap = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == k) continue;
      const AgentState& b = world.agent(j);
      min_gap = std::min(min_gap, norm(a.p - b.p) - a.radius - b.radius);
    }
    flags[static_cast<std::size_t>(k - 1)] = min_gap < d_disc;
  }
  return flags;
}

std::vector<Collision> detect_collisions(const WorldState& world) {
  std::vector<Collision> out;
  const int n = static_cast<int>(world.agent_count());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const AgentState& a = world.agent(i);
      const AgentState& b = world.agent(j);
      if (norm(a.p - b.p) < a.radius + b.radius) out.push_back({i, j});
    }
  return out;
}

int EpisodeTrace::human_arrival(std::size_t h) const {
  for (std::size_t t = 0; t < snapshots.size(); ++t)
    if (snapshots[t].humans[h].at_goal()) return static_cast<int>(t);
  return steps() + 1;
}

int EpisodeTrace::collision_count() const {
  int n = 0;
  for (const auto& c : collisions) n += static_cast<int>(c.size());
  return n;
}

Simulator::Simulator(WorldState initial, Policy human_policy, EpisodeConfig cfg)
    : human_policy_(std::move(human_policy)), cfg_(cfg) {
  if (cfg_.max_steps <= 0) throw ValidationError("max_steps must be positive");
  if (!(initial.dt > 0.0)) throw ValidationError("dt must be positive");
  trace_.seed = cfg_.seed;
  trace_.collisions.push_back(detect_collisions(initial));
  trace_.discomfort.push_back(discomfort_flags(initial, cfg_.discomfort_distance));
  trace_.snapshots.push_back(std::move(initial));
}

Observation Simulator::observe(int agent_id) const {
  const WorldState& w = world();
  Observation obs;
  obs.agent_id = agent_id;
  obs.self = w.agent(agent_id);
  obs.t = w.t;
  obs.dt = w.dt;
  obs.episode_seed = cfg_.seed;
  obs.others.reserve(w.humans.size());
  for (std::size_t h = 0; h < w.humans.size(); ++h)
    if (static_cast<int>(h) + 1 != agent_id) obs.others.push_back(w.humans[h].observable());
  if (agent_id != 0 && cfg_.robot_visible) obs.others.push_back(w.robot.observable());
  return obs;
}

Action Simulator::checked_action(const Policy& policy, int agent_id) const {
  const Action a = policy(observe(agent_id));
  if (!action_in_bounds(a)) {
    std::ostringstream os;
    os << "policy for agent " << agent_id << " returned invalid action (" << a.vx << ", " << a.vy << ") at t="
       << world().t;
    throw ValidationError(os.str());
  }
  return a;
}

void Simulator::step(const Action& robot_action) {
  if (done()) throw ValidationError("step called on a finished episode");
  if (!action_in_bounds(robot_action)) {
    std::ostringstream os;
    os << "robot action (" << robot_action.vx << ", " << robot_action.vy << ") invalid at t=" << world().t;
    throw ValidationError(os.str());
  }
  const WorldState& cur = world();
  std::vector<Action> actions;
  actions.reserve(cur.agent_count());
  actions.push_back(robot_action);
  for (std::size_t h = 0; h < cur.humans.size(); ++h) {
    // Humans that have arrived hold position.
    if (cur.humans[h].at_goal())
      actions.push_back({0.0, 0.0});
    else
      actions.push_back(checked_action(human_policy_, static_cast<int>(h) + 1));
  }

  WorldState next = cur;
  next.t = cur.t + 1;
  next.robot = step_agent(cur.robot, actions[0], cur.dt);
  for (std::size_t h = 0; h < cur.humans.size(); ++h) next.humans[h] = step_agent(cur.humans[h], actions[h + 1], cur.dt);

  auto collisions = detect_collisions(next);
  const bool robot_hit = std::any_of(collisions.begin(), collisions.end(), [](const Collision& c) { return c.a == 0; });
  const double reward = compute_reward(next, robot_hit, cfg_.reward);

  Termination term = Termination::kRunning;
  if (next.robot.at_goal())
    term = Termination::kSuccess;
  else if (robot_hit && cfg_.terminate_on_collision)
    term = Termination::kCollision;
  else if (next.t >= cfg_.max_steps)
    term = Termination::kTimeout;

  trace_.actions.push_back(std::move(actions));
  trace_.rewards.push_back(reward);
  trace_.discomfort.push_back(discomfort_flags(next, cfg_.discomfort_distance));
  trace_.collisions.push_back(std::move(collisions));
  trace_.snapshots.push_back(std::move(next));
  trace_.termination = term;
}

EpisodeTrace run_episode(const WorldState& world, const Policy& robot_policy, const Policy& human_policy,
                         const EpisodeConfig& cfg) {
  Simulator sim(world, human_policy, cfg);
  while (!sim.done()) {
    const Action a = robot_policy(sim.observe(0));
    if (!action_in_bounds(a)) {
      std::ostringstream os;
      os << "robot policy returned invalid action (" << a.vx << ", " << a.vy << ") at t=" << sim.world().t;
      throw ValidationError(os.str());
    }
    sim.step(a);
  }
  return std::move(sim).take_trace();
}

void write_trace_csv(std::ostream& out, const EpisodeTrace& trace) {
  out << "t,agent_id,kind,p_x,p_y,v_x,v_y,a_x,a_y,reward,collision,discomfort\n";
  const auto old_flags = out.flags();
  const auto old_prec = out.precision();
  out << std::setprecision(9);
  for (std::size_t t = 0; t < trace.snapshots.size(); ++t) {
    const WorldState& w = trace.snapshots[t];
    for (int id = 0; id < static_cast<int>(w.agent_count()); ++id) {
      const AgentState& s = w.agent(id);
      const Action a = t < trace.actions.size() ? trace.actions[t][static_cast<std::size_t>(id)] : Action{};
      const double reward = (id == 0 && t > 0) ? trace.rewards[t - 1] : 0.0;
      const bool hit = std::any_of(trace.collisions[t].begin(), trace.collisions[t].end(),
                                   [id](const Collision& c) { return c.a == id || c.b == id; });
      const bool disc = id > 0 && trace.discomfort[t][static_cast<std::size_t>(id - 1)];
      out << t << ',' << id << ',' << (id == 0 ? "robot" : "human") << ',' << s.p.x << ',' << s.p.y << ',' << s.v.x
          << ',' << s.v.y << ',' << a.vx << ',' << a.vy << ',' << reward << ',' << (hit ? 1 : 0) << ','
          << (disc ? 1 : 0) << '\n';
    }
  }
  out.flags(old_flags);
  out.precision(old_prec);
}

}  // namespace crowdemp::sim
