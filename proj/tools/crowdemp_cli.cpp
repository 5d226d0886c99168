#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "crowdemp/empowerment.hpp"
#include "crowdemp/error.hpp"
#include "crowdemp/harness.hpp"
#include "crowdemp/nn.hpp"
#include "crowdemp/sac.hpp"

using namespace crowdemp;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string policy;
  std::optional<int> trials;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Experiment config (INI)");
  cmd->add_option("--seed", o.seed, "Seed override");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--policy", o.policy, "linear, orca, sac or noisy_orca (comma list for evaluate)");
  cmd->add_option("--trials", o.trials, "Trial count override");
}

harness::ExperimentConfig load(const Options& o) {
  harness::ExperimentConfig cfg = o.config.empty() ? harness::ExperimentConfig{} : harness::load_config(o.config);
  if (o.trials) cfg.trials = *o.trials;
  harness::validate(cfg);
  return cfg;
}

fs::path out_dir(const Options& o) {
  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw RuntimeFailure("cannot create output directory " + dir.string());
  return dir;
}

std::ofstream open_csv(const fs::path& path, const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  harness::write_provenance(out, hash);
  return out;
}

std::optional<sac::SacNets> sac_nets_if(harness::PolicyKind p, const harness::ExperimentConfig& cfg) {
  if (p != harness::PolicyKind::kSac) return std::nullopt;
  if (cfg.sac_checkpoint.empty()) throw ValidationError("policy sac needs [suite] sac_checkpoint");
  return sac::load_checkpoint(cfg.sac_checkpoint);
}

int cmd_simulate(const Options& o) {
  const auto cfg = load(o);
  const auto kind = harness::parse_policy(o.policy.empty() ? "orca" : o.policy);
  const auto nets = sac_nets_if(kind, cfg);
  const std::uint64_t seed = o.seed.value_or(cfg.seed_base);
  const auto tr = harness::run_trial(cfg, cfg.scenario.n_humans, seed,
                                     harness::robot_policy(kind, cfg, nets ? &*nets : nullptr));
  const fs::path path = out_dir(o) / ("trace_" + harness::to_string(kind) + "_" + std::to_string(seed) + ".csv");
  auto out = open_csv(path, harness::config_hash(cfg));
  sim::write_trace_csv(out, tr);
  std::cout << path.string() << ": " << sim::to_string(tr.termination) << " after " << tr.steps() << " steps\n";
  return 0;
}

int cmd_demos(const Options& o) {
  const auto cfg = load(o);
  const auto t = harness::sac_training_config(cfg);
  const std::uint64_t base = o.seed.value_or(t.scenario_seed_base + 500000);
  const auto buf = sac::collect_expert_demonstrations(t.demo_episodes, t.scenario, t.episode, t.expert_orca,
                                                      t.human_orca, base, t.sac.observed_humans);
  const fs::path path = out_dir(o) / "demos.csv";
  auto out = open_csv(path, harness::config_hash(cfg));
  const int dim = sac::observation_size(t.sac.observed_humans);
  out << "r,done,a_x,a_y,a_next_x,a_next_y";
  for (int i = 0; i < dim; ++i) out << ",o_" << i;
  for (int i = 0; i < dim; ++i) out << ",o_next_" << i;
  out << '\n' << std::setprecision(10);
  for (std::size_t k = 0; k < buf.size(); ++k) {
    const auto& tr = buf[k];
    out << tr.r << ',' << int(tr.done) << ',' << tr.a.vx << ',' << tr.a.vy << ',' << tr.a_next.vx << ','
        << tr.a_next.vy;
    for (int i = 0; i < dim; ++i) out << ',' << tr.o[i];
    for (int i = 0; i < dim; ++i) out << ',' << tr.o_next[i];
    out << '\n';
  }
  std::cout << path.string() << ": " << buf.size() << " transitions\n";
  return 0;
}

int cmd_train_sac(const Options& o) {
  const auto cfg = load(o);
  auto t = harness::sac_training_config(cfg);
  if (o.seed) t.seed = *o.seed;
  const auto res = sac::train(t);
  const fs::path dir = out_dir(o);
  const std::string hash = harness::config_hash(cfg);
  auto log = open_csv(dir / "training_log.csv", hash);
  sac::write_training_log_csv(log, res.log);
  sac::CheckpointInfo info{hash, t.seed, t.episodes, t.sac.observed_humans, t.scenario_seed_base};
  sac::save_checkpoint((dir / "sac_checkpoint").string(), res.nets, info);
  int succ = 0;
  for (const auto& e : res.log) succ += e.success;
  std::cout << (dir / "sac_checkpoint").string() << ": " << res.log.size() << " episodes, " << succ
            << " successful, streak reached at step " << res.steps_to_streak << '\n';
  return 0;
}

int cmd_train_emp(const Options& o) {
  auto cfg = load(o);
  if (o.seed) cfg.seed = *o.seed;
  const auto kind = harness::parse_policy(o.policy.empty() ? "orca" : o.policy);
  const auto nets = sac_nets_if(kind, cfg);
  const auto data = harness::estimator_dataset(cfg, harness::robot_policy(kind, cfg, nets ? &*nets : nullptr),
                                               {cfg.scenario.n_humans});
  const auto res = empowerment::train_empowerment(data, cfg.estimator, derive_seed(cfg.seed, {0x7a1}));
  const fs::path dir = out_dir(o) / ("estimator_" + harness::to_string(kind));
  fs::create_directories(dir);
  nn::save_mlp((dir / "source.bin").string(), res.nets.source);
  nn::save_mlp((dir / "transition.bin").string(), res.nets.transition);
  nn::save_mlp((dir / "planning.bin").string(), res.nets.planning);
  const std::string hash = harness::config_hash(cfg);
  {
    auto out = open_csv(dir / "transition_std.csv", hash);
    out << "dim,std\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < res.nets.transition_std.size(); ++i) out << i << ',' << res.nets.transition_std[i] << '\n';
  }
  auto curve = open_csv(dir / "losses.csv", hash);
  curve << "step,source,transition,planning,total\n" << std::setprecision(10);
  for (std::size_t i = 0; i < res.log.total.size(); ++i)
    curve << i << ',' << res.log.source[i] << ',' << res.log.transition[i] << ',' << res.log.planning[i] << ','
          << res.log.total[i] << '\n';
  std::cout << dir.string() << ": " << data.size() << " samples, " << res.log.steps << " steps"
            << (res.log.converged ? " (converged)" : "") << '\n';
  return 0;
}

int cmd_evaluate(const Options& o) {
  auto cfg = load(o);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.policy.empty()) {
    cfg.roster.clear();
    std::stringstream ss(o.policy);
    std::string item;
    while (std::getline(ss, item, ',')) cfg.roster.push_back(harness::parse_policy(item));
  }
  const auto res = harness::run_suite(cfg, o.out);
  std::cout << o.out << ": " << res.trials.size() << " trials";
  if (res.kruskal) std::cout << ", Kruskal-Wallis H = " << res.kruskal->statistic << ", p = " << res.kruskal->p_value;
  std::cout << '\n';
  return 0;
}

int cmd_stats(const Options& o) {
  const auto kw = harness::run_statistics(o.out, "");
  if (kw) std::cout << "Kruskal-Wallis H = " << kw->statistic << ", p = " << kw->p_value << '\n';
  else std::cout << "not enough groups or trials for the rank tests\n";
  return 0;
}

int cmd_report(const Options& o) {
  const auto cfg = load(o);
  harness::report(o.out, o.seed.value_or(cfg.report_seed));
  std::cout << o.out << ": plot data written\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowd navigation simulation and human-empowerment evaluation"};
  app.require_subcommand(1);
  Options o;
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
  };
  const Cmd cmds[] = {
      {"simulate", "Run one episode and write its trace", cmd_simulate},
      {"demos", "Collect ORCA expert demonstrations", cmd_demos},
      {"train-sac", "Train the SAC robot policy", cmd_train_sac},
      {"train-emp", "Train an empowerment estimator for one policy", cmd_train_emp},
      {"evaluate", "Run the evaluation suite", cmd_evaluate},
      {"stats", "Recompute statistical tests from trials.csv", cmd_stats},
      {"report", "Write plot data from suite artifacts", cmd_report},
  };
  int (*chosen)(const Options&) = nullptr;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, o);
    sub->callback([&chosen, fn = c.fn] { chosen = fn; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return chosen(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 3;
  }
}
