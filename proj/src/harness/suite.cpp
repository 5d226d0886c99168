#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "crowdemp/error.hpp"
#include "crowdemp/harness.hpp"

namespace crowdemp::harness {

namespace fs = std::filesystem;

namespace {

// Runs fn, prefixing any failure with the stage name and keeping its kind.
template <class F>
auto staged(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(stage + ": " + e.what());
  } catch (const RuntimeFailure& e) {
    throw RuntimeFailure(stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw RuntimeFailure(stage + ": " + e.what());
  }
}

class CsvFile {
 public:
  CsvFile(const fs::path& path, const std::string& hash, const std::string& header) : path_(path), out_(path) {
    if (!out_) throw RuntimeFailure("cannot write " + path.string());
    write_provenance(out_, hash);
    out_ << header << '\n' << std::setprecision(10);
  }
  std::ostream& row() { return out_; }
  ~CsvFile() { out_.flush(); }

 private:
  fs::path path_;
  std::ofstream out_;
};

struct Table {
  std::string hash;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ValidationError("missing column '" + name + "'");
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing artifact " + path.string());
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "# config_hash=";
      if (line.rfind(tag, 0) == 0) t.hash = line.substr(tag.size());
      continue;
    }
    if (t.header.empty()) t.header = split(line);
    else t.rows.push_back(split(line));
  }
  if (t.header.empty()) throw ValidationError("artifact " + path.string() + " has no header");
  return t;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Population standard deviation; zero for a single value.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::uint64_t estimation_seed(const ExperimentConfig& cfg, std::uint64_t scenario_seed, int n_humans) {
  return derive_seed(cfg.seed, {0xe57, static_cast<std::uint64_t>(n_humans), scenario_seed});
}

std::uint64_t training_seed(const ExperimentConfig& cfg, const std::string& tag) {
  std::uint64_t h = 0;
  for (unsigned char c : tag) h = h * 131 + c;
  return derive_seed(cfg.seed, {0x7a1, h});
}

void write_loss_curve(const fs::path& path, const std::string& hash, const empowerment::TrainLog& log) {
  CsvFile f(path, hash, "step,source,transition,planning,total");
  for (std::size_t i = 0; i < log.total.size(); ++i)
    f.row() << i << ',' << log.source[i] << ',' << log.transition[i] << ',' << log.planning[i] << ',' << log.total[i]
            << '\n';
}

std::optional<stats::TestResult> write_statistics(const fs::path& dir, const std::string& hash,
                                                  const std::vector<stats::SampleGroup>& groups) {
  std::vector<stats::TestResult> shapiro;
  for (const auto& g : groups) {
    stats::TestResult r{std::nan(""), std::nan("")};
    if (g.values.size() >= 3 && g.values.size() <= 5000) {
      try {
        r = stats::shapiro_wilk(g.values);
      } catch (const DegenerateInput&) {
      }
    }
    shapiro.push_back(r);
  }
  {
    std::ofstream out(dir / "shapiro.csv");
    if (!out) throw RuntimeFailure("cannot write shapiro.csv");
    write_provenance(out, hash);
    stats::write_shapiro_csv(out, groups, shapiro);
  }

  bool testable = groups.size() >= 2;
  for (const auto& g : groups) testable = testable && g.values.size() >= 3;

  std::optional<stats::TestResult> kw;
  std::ofstream kout(dir / "kruskal.csv");
  std::ofstream dout(dir / "dunn.csv");
  if (!kout || !dout) throw RuntimeFailure("cannot write statistics files");
  write_provenance(kout, hash);
  write_provenance(dout, hash);
  if (testable) {
    kw = stats::kruskal_wallis(groups);
    stats::write_kruskal_csv(kout, *kw, groups.size());
    stats::write_dunn_csv(dout, groups, stats::dunn_posthoc(groups));
  } else {
    // Fewer than two groups or fewer than three trials per group.
    kout << "groups,H,dof,p\n";
    dout << "policy_a,policy_b,z,p_unadjusted,p\n";
  }
  return kw;
}

}  // namespace

sim::Policy human_policy(const ExperimentConfig& cfg) { return policy::make_orca_policy(cfg.human_orca); }

sim::Policy robot_policy(PolicyKind kind, const ExperimentConfig& cfg, const sac::SacNets* nets) {
  switch (kind) {
    case PolicyKind::kLinear: return policy::make_linear_policy();
    case PolicyKind::kOrca: return policy::make_orca_policy(cfg.robot_orca);
    case PolicyKind::kNoisyOrca: return policy::make_noisy_orca_policy(cfg.robot_orca, cfg.noisy_orca_sigma);
    case PolicyKind::kSac: {
      if (!nets) throw ValidationError("SAC policy needs trained networks");
      const int m = (nets->observation_size() - sac::kRobotFeatures) / sac::kHumanFeatures;
      return sac::make_sac_policy(*nets, m);
    }
  }
  throw ValidationError("unknown policy kind");
}

sim::EpisodeTrace run_trial(const ExperimentConfig& cfg, int n_humans, std::uint64_t scenario_seed,
                            const sim::Policy& robot) {
  sim::ScenarioConfig sc = cfg.scenario;
  sc.n_humans = n_humans;
  sim::EpisodeConfig ec = cfg.episode;
  ec.seed = scenario_seed;
  ec.terminate_on_collision = true;
  return sim::run_episode(sim::spawn_circle_crossing(sc, scenario_seed), robot, human_policy(cfg), ec);
}

empowerment::Dataset estimator_dataset(const ExperimentConfig& cfg, const sim::Policy& robot,
                                       const std::vector<int>& sizes) {
  empowerment::Dataset d;
  for (int n : sizes)
    for (int i = 0; i < cfg.estimator_episodes; ++i) {
      const sim::EpisodeTrace tr = run_trial(cfg, n, cfg.estimator_seed_base + static_cast<std::uint64_t>(i), robot);
      if (tr.human_count() == 0) continue;
      d.append(empowerment::trace_dataset(tr, cfg.grid, cfg.maps, cfg.include_parked));
    }
  if (d.size() == 0) throw ValidationError("no human steps to train the estimator on");
  return d;
}

TrialSummary summarize(const sim::EpisodeTrace& trace, const empowerment::Record& rec, const std::string& policy,
                       bool include_parked) {
  TrialSummary s;
  s.seed = trace.seed;
  s.policy = policy;
  s.mean_empowerment = rec.mean;
  s.termination = trace.termination;
  s.success = trace.termination == sim::Termination::kSuccess;
  s.steps = trace.steps();
  s.collisions = trace.collision_count();
  long flagged = 0, total = 0;
  for (std::size_t h = 0; h < trace.human_count(); ++h)
    for (int t : empowerment::active_steps(trace, h, include_parked)) {
      flagged += trace.discomfort[static_cast<std::size_t>(t)][h];
      ++total;
    }
  s.discomfort_fraction = total ? static_cast<double>(flagged) / static_cast<double>(total) : 0.0;
  return s;
}

SuiteResult run_suite(const ExperimentConfig& cfg, const std::string& out_dir, const sac::SacNets* sac_nets) {
  staged("config", [&] { validate(cfg); });
  const std::string hash = config_hash(cfg);
  const fs::path dir(out_dir);
  staged("output", [&] {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw RuntimeFailure("cannot create output directory " + dir.string());
  });

  std::optional<sac::SacNets> loaded;
  const bool needs_sac = std::find(cfg.roster.begin(), cfg.roster.end(), PolicyKind::kSac) != cfg.roster.end();
  if (needs_sac && !sac_nets) {
    loaded = staged("SAC checkpoint", [&] {
      if (cfg.sac_checkpoint.empty()) throw ValidationError("roster includes sac but no checkpoint is configured");
      return sac::load_checkpoint(cfg.sac_checkpoint);
    });
    sac_nets = &*loaded;
  }

  std::vector<sim::Policy> robots;
  for (PolicyKind p : cfg.roster) robots.push_back(robot_policy(p, cfg, sac_nets));

  const int n = cfg.scenario.n_humans;
  const bool has_humans = n > 0;
  std::vector<empowerment::EmpowermentNets> estimators(cfg.roster.size());
  if (has_humans) {
    if (cfg.shared_estimator) {
      const auto nets = staged("estimator training (shared)", [&] {
        empowerment::Dataset d;
        for (const auto& r : robots) d.append(estimator_dataset(cfg, r, {n}));
        auto res = empowerment::train_empowerment(d, cfg.estimator, training_seed(cfg, "shared"));
        write_loss_curve(dir / "estimator_shared.csv", hash, res.log);
        return res.nets;
      });
      std::fill(estimators.begin(), estimators.end(), nets);
    } else {
      for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
        const std::string name = to_string(cfg.roster[i]);
        estimators[i] = staged("estimator training (" + name + ")", [&] {
          auto res = empowerment::train_empowerment(estimator_dataset(cfg, robots[i], {n}), cfg.estimator,
                                                    training_seed(cfg, name));
          write_loss_curve(dir / ("estimator_" + name + ".csv"), hash, res.log);
          return res.nets;
        });
      }
    }
  }

  SuiteResult result;
  CsvFile emp(dir / "empowerment.csv", hash, "trial_seed,policy,human_id,t,empowerment");
  CsvFile disc(dir / "discomfort.csv", hash, "trial_seed,policy,human_id,t,discomfort");
  for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
    const std::string name = to_string(cfg.roster[i]);
    staged("evaluation (" + name + ")", [&] {
      for (int k = 0; k < cfg.trials; ++k) {
        const std::uint64_t seed = cfg.seed_base + static_cast<std::uint64_t>(k);
        const sim::EpisodeTrace tr = run_trial(cfg, n, seed, robots[i]);
        empowerment::Record rec;
        if (has_humans)
          rec = empowerment::mean_empowerment(tr, estimators[i], cfg.grid, cfg.maps, cfg.estimator.n_samples,
                                              estimation_seed(cfg, seed, n), cfg.include_parked);
        result.trials.push_back(summarize(tr, rec, name, cfg.include_parked));
        for (std::size_t h = 0; h < rec.steps.size(); ++h)
          for (std::size_t j = 0; j < rec.steps[h].size(); ++j) {
            const int t = rec.steps[h][j];
            emp.row() << seed << ',' << name << ',' << h + 1 << ',' << t << ',' << rec.per_step[h][j] << '\n';
            disc.row() << seed << ',' << name << ',' << h + 1 << ',' << t << ','
                       << int(tr.discomfort[static_cast<std::size_t>(t)][h]) << '\n';
          }
      }
    });
  }

  staged("trial summaries", [&] {
    CsvFile f(dir / "trials.csv", hash,
              "trial_seed,policy,mean_empowerment,success,termination,steps,collisions,discomfort_fraction");
    for (const auto& s : result.trials)
      f.row() << s.seed << ',' << s.policy << ',' << s.mean_empowerment << ',' << int(s.success) << ','
              << sim::to_string(s.termination) << ',' << s.steps << ',' << s.collisions << ',' << s.discomfort_fraction
              << '\n';
    CsvFile r(dir / "success_rates.csv", hash, "policy,trials,successes,collisions,timeouts,success_rate");
    for (PolicyKind p : cfg.roster) {
      int total = 0, succ = 0, coll = 0, tout = 0;
      for (const auto& s : result.trials) {
        if (s.policy != to_string(p)) continue;
        ++total;
        succ += s.success;
        coll += s.termination == sim::Termination::kCollision;
        tout += s.termination == sim::Termination::kTimeout;
      }
      r.row() << to_string(p) << ',' << total << ',' << succ << ',' << coll << ',' << tout << ','
              << static_cast<double>(succ) / total << '\n';
    }
  });

  if (!cfg.crowd_sizes.empty()) {
    for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
      const std::string name = to_string(cfg.roster[i]);
      staged("density sweep (" + name + ")", [&] {
        auto trained = empowerment::train_empowerment(estimator_dataset(cfg, robots[i], cfg.crowd_sizes), cfg.estimator,
                                                      training_seed(cfg, "density_" + name));
        write_loss_curve(dir / ("estimator_density_" + name + ".csv"), hash, trained.log);
        for (int size : cfg.crowd_sizes) {
          std::vector<double> means;
          for (int k = 0; k < cfg.density_trials; ++k) {
            const std::uint64_t seed = cfg.seed_base + static_cast<std::uint64_t>(k);
            const sim::EpisodeTrace tr = run_trial(cfg, size, seed, robots[i]);
            means.push_back(empowerment::mean_empowerment(tr, trained.nets, cfg.grid, cfg.maps, cfg.estimator.n_samples,
                                                          estimation_seed(cfg, seed, size), cfg.include_parked)
                                .mean);
          }
          result.density.push_back({name, size, cfg.density_trials, mean_of(means), std_of(means)});
        }
      });
    }
  }
  staged("density summary", [&] {
    CsvFile f(dir / "density.csv", hash, "policy,n_humans,trials,mean_empowerment,std");
    for (const auto& d : result.density)
      f.row() << d.policy << ',' << d.n_humans << ',' << d.trials << ',' << d.mean << ',' << d.std << '\n';
  });

  result.kruskal = staged("statistics", [&] {
    std::vector<stats::SampleGroup> groups;
    for (PolicyKind p : cfg.roster) {
      stats::SampleGroup g{to_string(p), {}};
      for (const auto& s : result.trials)
        if (s.policy == g.label) g.values.push_back(s.mean_empowerment);
      groups.push_back(std::move(g));
    }
    return write_statistics(dir, hash, groups);
  });

  staged("metadata", [&] {
    CsvFile f(dir / "metadata.csv", hash, "key,value");
    f.row() << "config_hash," << hash << '\n'
            << "paired_seeds,true\n"
            << "evaluation_seeds," << cfg.seed_base << '-' << cfg.seed_base + static_cast<std::uint64_t>(cfg.trials) - 1
            << '\n'
            << "estimator_seeds," << cfg.estimator_seed_base << '-'
            << cfg.estimator_seed_base + static_cast<std::uint64_t>(cfg.estimator_episodes) - 1 << '\n'
            << "n_humans," << n << '\n'
            << "trials," << cfg.trials << '\n'
            << "estimator_mode," << (cfg.shared_estimator ? "shared" : "per_policy") << '\n';
    std::ofstream c(dir / "config.ini");
    c << canonical_text(cfg);
  });
  return result;
}

std::optional<stats::TestResult> run_statistics(const std::string& dir, const std::string& hash) {
  const Table t = staged("statistics input", [&] { return read_table(fs::path(dir) / "trials.csv"); });
  const std::size_t pc = t.column("policy"), mc = t.column("mean_empowerment");
  std::vector<stats::SampleGroup> groups;
  for (const auto& row : t.rows) {
    if (row.size() <= std::max(pc, mc)) throw ValidationError("trials.csv: short row");
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.label == row[pc]; });
    if (it == groups.end()) {
      groups.push_back({row[pc], {}});
      it = groups.end() - 1;
    }
    it->values.push_back(std::stod(row[mc]));
  }
  return staged("statistics", [&] { return write_statistics(dir, hash.empty() ? t.hash : hash, groups); });
}

void report(const std::string& dir_name, std::uint64_t report_seed) {
  const fs::path dir(dir_name);
  const Table trials = staged("report input", [&] { return read_table(dir / "trials.csv"); });
  const Table emp = staged("report input", [&] { return read_table(dir / "empowerment.csv"); });
  const Table disc = staged("report input", [&] { return read_table(dir / "discomfort.csv"); });
  const Table dens = staged("report input", [&] { return read_table(dir / "density.csv"); });
  const std::string& hash = trials.hash;

  staged("report", [&] {
    // Per (policy, seed, t): mean over humans; then mean and std over seeds.
    const std::size_t sc = emp.column("trial_seed"), pc = emp.column("policy"), tc = emp.column("t"),
                      ec = emp.column("empowerment"), hc = emp.column("human_id");
    std::vector<std::string> policies;
    std::map<std::string, std::map<int, std::map<std::string, std::vector<double>>>> by_time;
    for (const auto& r : emp.rows) {
      if (std::find(policies.begin(), policies.end(), r[pc]) == policies.end()) policies.push_back(r[pc]);
      by_time[r[pc]][std::stoi(r[tc])][r[sc]].push_back(std::stod(r[ec]));
    }
    CsvFile f(dir / "emp_vs_time.csv", hash, "policy,t,mean,std,n_trials");
    for (const auto& p : policies)
      for (const auto& [t, seeds] : by_time[p]) {
        std::vector<double> per_seed;
        for (const auto& [s, vals] : seeds) per_seed.push_back(mean_of(vals));
        f.row() << p << ',' << t << ',' << mean_of(per_seed) << ',' << std_of(per_seed) << ',' << per_seed.size()
                << '\n';
      }

    CsvFile v(dir / "violin.csv", hash, "policy,trial_seed,mean_empowerment");
    const std::size_t tsc = trials.column("trial_seed"), tpc = trials.column("policy"),
                      tmc = trials.column("mean_empowerment");
    for (const auto& r : trials.rows) v.row() << r[tpc] << ',' << r[tsc] << ',' << r[tmc] << '\n';

    CsvFile d(dir / "emp_vs_density.csv", hash, "policy,n_humans,mean_empowerment,std,trials");
    const std::size_t dp = dens.column("policy"), dn = dens.column("n_humans"), dm = dens.column("mean_empowerment"),
                      ds = dens.column("std"), dt = dens.column("trials");
    for (const auto& r : dens.rows) d.row() << r[dp] << ',' << r[dn] << ',' << r[dm] << ',' << r[ds] << ',' << r[dt] << '\n';

    // Discomfort rows line up with empowerment rows one to one.
    if (disc.rows.size() != emp.rows.size()) throw ValidationError("discomfort.csv does not match empowerment.csv");
    const std::size_t dc = disc.column("discomfort");
    CsvFile x(dir / "emp_vs_discomfort.csv", hash, "policy,trial_seed,human_id,t,empowerment,discomfort");
    const std::string wanted = std::to_string(report_seed);
    for (std::size_t i = 0; i < emp.rows.size(); ++i) {
      const auto& r = emp.rows[i];
      if (r[sc] != wanted) continue;
      x.row() << r[pc] << ',' << r[sc] << ',' << r[hc] << ',' << r[tc] << ',' << r[ec] << ',' << disc.rows[i][dc] << '\n';
    }
  });
}

}  // namespace crowdemp::harness
