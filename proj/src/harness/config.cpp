#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "crowdemp/error.hpp"
#include "crowdemp/harness.hpp"

namespace crowdemp::harness {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string format(int v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s;
}
std::string format(const std::vector<PolicyKind>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + to_string(v[i]);
  return s;
}

template <class T>
T parse_number(const std::string& text) {
  const std::string s = trim(text);
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValidationError("not a number: '" + s + "'");
  return v;
}

void parse_into(const std::string& s, double& v) { v = parse_number<double>(s); }
void parse_into(const std::string& s, int& v) { v = parse_number<int>(s); }
void parse_into(const std::string& s, std::uint64_t& v) { v = parse_number<std::uint64_t>(s); }
void parse_into(const std::string& s, bool& v) {
  const std::string t = lower(trim(s));
  if (t == "true" || t == "1" || t == "yes") v = true;
  else if (t == "false" || t == "0" || t == "no") v = false;
  else throw ValidationError("not a boolean: '" + s + "'");
}
void parse_into(const std::string& s, std::string& v) { v = trim(s); }
void parse_into(const std::string& s, std::vector<int>& v) {
  v.clear();
  for (const auto& item : split_list(s)) v.push_back(parse_number<int>(item));
}
void parse_into(const std::string& s, std::vector<PolicyKind>& v) {
  v.clear();
  for (const auto& item : split_list(s)) v.push_back(parse_policy(item));
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

class FieldTable {
 public:
  explicit FieldTable(ExperimentConfig& c) {
    section("scenario");
    add("n_humans", c.scenario.n_humans);
    add("circle_radius", c.scenario.circle_radius);
    add("dt", c.scenario.dt);
    add("agent_radius", c.scenario.agent_radius);
    add("v_pref", c.scenario.v_pref);
    add("v_max", c.scenario.v_max);
    add("jitter_deg", c.scenario.jitter_deg);
    add("spawn_margin", c.scenario.spawn_margin);
    add("max_placement_attempts", c.scenario.max_placement_attempts);

    section("episode");
    add("max_steps", c.episode.max_steps);
    add("robot_visible", c.episode.robot_visible);
    add("discomfort_distance", c.episode.discomfort_distance);
    add("collision_reward", c.episode.reward.collision);
    add("success_reward", c.episode.reward.success);
    add("interaction_reward", c.episode.reward.interaction);

    section("human_orca");
    orca(c.human_orca);
    section("robot_orca");
    orca(c.robot_orca);
    add("noisy_sigma", c.noisy_orca_sigma);

    section("suite");
    add("roster", c.roster);
    add("trials", c.trials);
    add("seed_base", c.seed_base);
    add("seed", c.seed);
    add("report_seed", c.report_seed);
    add("sac_checkpoint", c.sac_checkpoint);

    section("grid");
    add("rows", c.grid.rows);
    add("cols", c.grid.cols);
    add("cell_size", c.grid.cell_size);
    add("maps", c.maps);
    add("include_parked", c.include_parked);

    section("estimator");
    auto& e = c.estimator;
    add("hidden", e.hidden);
    add("learning_rate", e.learning_rate);
    add("batch_size", e.batch_size);
    add("lambda", e.lambda);
    add("entropy_sign", e.entropy_sign);
    add("planning_on_state", e.planning_on_state);
    add("transition_noise", e.transition_noise);
    add("noise_ema", e.noise_ema);
    add("joint_ascent", e.joint_ascent);
    add("joint_weight", e.joint_weight);
    add("shared_planning", e.shared_planning);
    add("max_steps", e.max_steps);
    add("min_steps", e.min_steps);
    add("window", e.window);
    add("tolerance", e.tolerance);
    add("n_samples", e.n_samples);
    add("source_log_std_init", e.source_log_std_init);
    add("planning_log_std_init", e.planning_log_std_init);
    add("episodes", c.estimator_episodes);
    add("seed_base", c.estimator_seed_base);
    add("shared_estimator", c.shared_estimator);

    section("density");
    add("crowd_sizes", c.crowd_sizes);
    add("trials", c.density_trials);

    section("sac");
    auto& t = c.sac_train;
    add("gamma", t.sac.gamma);
    add("tau", t.sac.tau);
    add("target_entropy", t.sac.target_entropy);
    add("batch_size", t.sac.batch_size);
    add("buffer_capacity", t.sac.buffer_capacity);
    add("actor_lr", t.sac.actor_lr);
    add("critic_lr", t.sac.critic_lr);
    add("alpha_lr", t.sac.alpha_lr);
    add("initial_log_alpha", t.sac.initial_log_alpha);
    add("hidden", t.sac.hidden);
    add("observed_humans", t.sac.observed_humans);
    add("log_std_init", t.sac.log_std_init);
    add("reward_scale", t.sac.reward_scale);
    add("n_humans", t.scenario.n_humans);
    add("episodes", t.episodes);
    add("warmup_steps", t.warmup_steps);
    add("pretrain", t.pretrain);
    add("demo_episodes", t.demo_episodes);
    add("pretrain_steps", t.pretrain_steps);
    add("seed", t.seed);
    add("scenario_seed_base", t.scenario_seed_base);
    add("success_streak", t.success_streak);
    add("collisions_end_episode", t.collisions_end_episode);
    add("stop_at_streak", t.stop_at_streak);
    add("expert_time_horizon", t.expert_orca.time_horizon);
    add("expert_safety_space", t.expert_orca.safety_space);
  }

  const std::vector<Field>& fields() const { return fields_; }

  Field* find(const std::string& section, const std::string& key) {
    for (auto& f : fields_)
      if (f.section == section && f.key == key) return &f;
    return nullptr;
  }

 private:
  void section(const char* s) { section_ = s; }

  template <class T>
  void add(const char* key, T& ref) {
    fields_.push_back({section_, key, [&ref] { return format(ref); }, [&ref](const std::string& v) { parse_into(v, ref); }});
  }

  void orca(policy::OrcaConfig& o) {
    add("time_horizon", o.time_horizon);
    add("safety_space", o.safety_space);
    add("v_max", o.v_max);
    add("neighbor_count", o.neighbor_count);
    add("neighbor_range", o.neighbor_range);
    add("shuffle_constraints", o.shuffle_constraints);
  }

  std::string section_;
  std::vector<Field> fields_;
};

struct Range {
  std::uint64_t lo = 0, hi = 0;  // [lo, hi)
  std::string name;
  bool overlaps(const Range& o) const { return lo < o.hi && o.lo < hi; }
};

}  // namespace

std::string to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::kLinear: return "linear";
    case PolicyKind::kOrca: return "orca";
    case PolicyKind::kSac: return "sac";
    case PolicyKind::kNoisyOrca: return "noisy_orca";
  }
  return "unknown";
}

PolicyKind parse_policy(const std::string& name) {
  const std::string n = lower(trim(name));
  if (n == "linear") return PolicyKind::kLinear;
  if (n == "orca") return PolicyKind::kOrca;
  if (n == "sac") return PolicyKind::kSac;
  if (n == "noisy_orca" || n == "noisy-orca") return PolicyKind::kNoisyOrca;
  throw ValidationError("unknown policy '" + name + "' (expected linear, orca, sac or noisy_orca)");
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.roster.empty()) throw ValidationError("config: roster must not be empty");
  std::set<PolicyKind> seen(cfg.roster.begin(), cfg.roster.end());
  if (seen.size() != cfg.roster.size()) throw ValidationError("config: roster lists a policy twice");
  if (cfg.trials < 1) throw ValidationError("config: trials must be at least 1");
  if (cfg.scenario.n_humans < 0) throw ValidationError("config: n_humans must be non-negative");
  if (!(cfg.scenario.dt > 0.0)) throw ValidationError("config: dt must be positive");
  if (cfg.episode.max_steps < 1) throw ValidationError("config: max_steps must be positive");
  if (cfg.maps < 1) throw ValidationError("config: maps must be at least 1");
  if (!(cfg.noisy_orca_sigma >= 0.0)) throw ValidationError("config: noisy_sigma must be non-negative");
  if (cfg.estimator_episodes < 1) throw ValidationError("config: estimator episodes must be positive");
  for (int n : cfg.crowd_sizes)
    if (n < 1) throw ValidationError("config: crowd sizes must be positive");
  if (!cfg.crowd_sizes.empty() && cfg.density_trials < 1) throw ValidationError("config: density trials must be positive");
  occupancy::validate(cfg.grid);
  empowerment::validate(cfg.estimator);
  sac::validate(cfg.sac_train);

  // Evaluation scenarios must never have been seen in any training run.
  const int eval_count = std::max(cfg.trials, cfg.crowd_sizes.empty() ? 0 : cfg.density_trials);
  const Range eval{cfg.seed_base, cfg.seed_base + static_cast<std::uint64_t>(eval_count), "evaluation"};
  const auto& t = cfg.sac_train;
  const std::vector<Range> training{
      {cfg.estimator_seed_base, cfg.estimator_seed_base + static_cast<std::uint64_t>(cfg.estimator_episodes),
       "estimator training"},
      {t.scenario_seed_base, t.scenario_seed_base + static_cast<std::uint64_t>(t.episodes), "SAC training"},
      {t.scenario_seed_base + 500000, t.scenario_seed_base + 500000 + static_cast<std::uint64_t>(t.demo_episodes),
       "SAC demonstration"},
  };
  for (const auto& r : training)
    if (eval.overlaps(r)) {
      std::ostringstream os;
      os << "config: evaluation seeds [" << eval.lo << ", " << eval.hi << ") overlap " << r.name << " seeds [" << r.lo
         << ", " << r.hi << ")";
      throw ValidationError(os.str());
    }
}

ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  FieldTable table(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ValidationError("config: key '" + section + "' outside any [section]");
    for (const auto& [key, value] : body) {
      Field* f = table.find(section, key);
      if (!f) throw ValidationError("config: unknown setting [" + section + "] " + key);
      try {
        f->set(value.data());
      } catch (const ValidationError& e) {
        throw ValidationError("config: [" + section + "] " + key + ": " + e.what());
      }
    }
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  return parse_config(in);
}

std::string canonical_text(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  FieldTable table(copy);
  std::ostringstream os;
  std::string section;
  for (const auto& f : table.fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get() << '\n';
  }
  return os.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

sac::TrainConfig sac_training_config(const ExperimentConfig& cfg) {
  sac::TrainConfig t = cfg.sac_train;
  const int n = t.scenario.n_humans;
  t.scenario = cfg.scenario;
  t.scenario.n_humans = n;
  t.episode = cfg.episode;
  t.human_orca = cfg.human_orca;
  return t;
}

void write_provenance(std::ostream& out, const std::string& hash) { out << "# config_hash=" << hash << '\n'; }

}  // namespace crowdemp::harness
