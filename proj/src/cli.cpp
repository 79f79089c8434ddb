#include "compass/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "compass/checkpoint.hpp"
#include "compass/csv.hpp"
#include "compass/errors.hpp"
#include "compass/metrics.hpp"
#include "compass/svg_plot.hpp"
#include "compass/trainer.hpp"

namespace compass::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string planner = "compass";
  int runs = 10;
  std::string variant;
  std::string critic;
  std::optional<int> threads;
  std::string checkpoint;
  std::string traces;
  bool episode_traces = false;
};

int resolve_threads(const Options& o) {
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("threads: must be >= 1");
    return *o.threads;
  }
  const char* env = std::getenv("COMPASS_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 4096) throw ConfigError(std::string("COMPASS_THREADS: invalid value '") + env + "'");
  return static_cast<int>(v);
}

RunConfig effective_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? default_config() : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.variant.empty()) cfg.net.variant = nn::parse_variant(o.variant);
  if (!o.critic.empty()) cfg.net.critic = nn::parse_critic(o.critic);
  cfg.sync();
  cfg.validate();
  return cfg;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

struct CompassModel {
  std::shared_ptr<const nn::ParamSet<float>> params;
  nn::NetConfig net;
};

CompassModel load_model(const fs::path& path, const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("net")) throw InputError(path.string() + ": checkpoint has no network config");
  const nn::NetConfig net = net_config_from_json(ck.meta["net"]);
  const nn::NetConfig expect = nn::net_config_for(cfg.sim, net);
  if (expect.targets != net.targets || expect.agents != net.agents || expect.slots != net.slots ||
      expect.d_pe != net.d_pe) {
    throw ConfigError("checkpoint: network built for N=" + std::to_string(net.targets) +
                      ", M=" + std::to_string(net.agents) + ", H=" + std::to_string(net.slots) +
                      ", d_pe=" + std::to_string(net.d_pe) + " does not match the config");
  }
  return {std::make_shared<const nn::ParamSet<float>>(std::move(ck.params)), net};
}

/// Runs the evaluation and writes results.csv, aggregate.csv and per-run
/// traces under `out`.
EvaluationResult evaluate_and_write(const std::string& planner, const PlannerFactory& factory, const RunConfig& cfg,
                                    int runs, int threads, bool episode_traces, const fs::path& out) {
  const std::string header = metadata_line(cfg);
  std::vector<std::vector<std::string>> jsonl(runs);
  std::function<void(int, const SimState&, const StepOutcome&)> on_step;
  if (episode_traces) {
    on_step = [&](int run, const SimState& s, const StepOutcome& o) {
      jsonl[run].push_back(step_trace_record(s, o).dump());
    };
  }
  EvaluationResult res = evaluate(planner, factory, cfg.sim, runs, cfg.seed, threads, on_step);

  fs::create_directories(out);
  const std::string dims = std::to_string(cfg.sim.K) + ',' + std::to_string(cfg.sim.M) + ',' + std::to_string(cfg.sim.N);
  {
    auto f = open_output(out / "results.csv");
    f << header << "\nplanner,K,M,N,seed,avg_unc,avg_jsd,min_visits,avg_visits,rmse\n";
    for (int i = 0; i < runs; ++i) {
      const auto& m = res.runs[i];
      f << planner << ',' << dims << ',' << res.seeds[i] << ',' << fmt_num(m.avg_unc) << ',' << fmt_num(m.avg_jsd)
        << ',' << fmt_num(m.min_visits) << ',' << fmt_num(m.avg_visits) << ',' << fmt_num(m.rmse) << '\n';
    }
  }
  {
    auto f = open_output(out / "aggregate.csv");
    f << header
      << "\nplanner,K,M,N,runs,avg_unc_mean,avg_unc_std,avg_jsd_mean,avg_jsd_std,min_visits_mean,"
         "min_visits_std,avg_visits_mean,avg_visits_std,rmse_mean,rmse_std\n";
    f << planner << ',' << dims << ',' << runs;
    for (const MetricSummary* s : {&res.avg_unc, &res.avg_jsd, &res.min_visits, &res.avg_visits, &res.rmse}) {
      f << ',' << fmt_num(s->mean) << ',' << fmt_num(s->std);
    }
    f << '\n';
  }
  for (int i = 0; i < runs; ++i) {
    char stem[128];
    std::snprintf(stem, sizeof stem, "%s_run%03d", planner.c_str(), i);
    auto f = open_output(out / "traces" / (std::string(stem) + ".csv"));
    f << header << "\nplanner,run,seed,step,avg_unc\n";
    const auto& trace = res.runs[i].unc_trace;
    for (std::size_t t = 0; t < trace.size(); ++t) {
      f << planner << ',' << i << ',' << res.seeds[i] << ',' << t + 1 << ',' << fmt_num(trace[t]) << '\n';
    }
    if (episode_traces) {
      auto j = open_output(out / "traces" / (std::string(stem) + ".jsonl"));
      j << json{{"compass", kVersion}, {"config", config_hash(cfg)}, {"planner", planner}, {"seed", res.seeds[i]}}.dump()
        << '\n';
      for (const auto& line : jsonl[i]) j << line << '\n';
    }
  }
  return res;
}

void print_summary(std::ostream& out, const EvaluationResult& r) {
  auto show = [&](const char* name, const MetricSummary& s) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %-11s %.4f +- %.4f\n", name, s.mean, s.std);
    out << buf;
  };
  out << r.planner << " over " << r.runs.size() << " runs\n";
  show("avg_unc", r.avg_unc);
  show("avg_jsd", r.avg_jsd);
  show("min_visits", r.min_visits);
  show("avg_visits", r.avg_visits);
  show("rmse", r.rmse);
}

void train_into(Trainer& trainer, const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const json meta = {{"version", kVersion}, {"config", config_to_json(cfg)}, {"config_hash", config_hash(cfg)}};
  const int total = cfg.ppo.iterations();
  log << "training " << total << " iterations (" << cfg.ppo.n_env << " envs x " << cfg.ppo.rollout
      << " steps), variant " << nn::variant_name(cfg.net.variant) << ", critic " << nn::critic_name(cfg.net.critic)
      << "\n";
  trainer.run(out, metadata_line(cfg), meta, [&](const TrainStats& s) {
    if (s.iteration == 1 || s.iteration % 10 == 0 || s.iteration == total) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "iter %4d  steps %8lld  reward %+.4f  loss %+.4f  entropy %.4f  kl %+.5f\n",
                    s.iteration, static_cast<long long>(s.env_steps), s.mean_reward, s.loss, s.entropy, s.kl);
      log << buf << std::flush;
    }
  });
}

int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig cfg = effective_config(o);
  Trainer trainer(cfg.sim, cfg.net, cfg.ppo, resolve_threads(o));
  train_into(trainer, cfg, o.out, out);
  out << "wrote " << (fs::path(o.out) / "checkpoint_final.bin").string() << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig cfg = effective_config(o);
  const int threads = resolve_threads(o);
  PlannerFactory factory;
  if (o.planner == "compass") {
    if (o.checkpoint.empty()) throw ConfigError("checkpoint: --planner compass needs --checkpoint");
    const CompassModel model = load_model(o.checkpoint, cfg);
    factory = [model] { return std::make_unique<nn::PolicyPlanner>(model.params, model.net); };
  } else {
    make_baseline_planner(o.planner, cfg.seed);  // rejects unknown names before any work
    factory = [name = o.planner, seed = cfg.seed] { return make_baseline_planner(name, seed); };
  }
  const auto res = evaluate_and_write(o.planner, factory, cfg, o.runs, threads, o.episode_traces, o.out);
  print_summary(out, res);
  return 0;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const RunConfig cfg = effective_config(o);
  const int threads = resolve_threads(o);
  const fs::path root = o.out;
  Trainer trainer(cfg.sim, cfg.net, cfg.ppo, threads);
  train_into(trainer, cfg, root / "train", out);
  auto params = std::make_shared<const nn::ParamSet<float>>(trainer.params());
  const nn::NetConfig net = trainer.net();
  PlannerFactory factory = [params, net] { return std::make_unique<nn::PolicyPlanner>(params, net); };
  const auto res = evaluate_and_write("compass", factory, cfg, o.runs, threads, o.episode_traces, root);
  auto f = open_output(root / "ablation.csv");
  f << metadata_line(cfg) << "\nvariant,runs,uncertainty_mean,uncertainty_std,rmse_mean,rmse_std,visits_mean,visits_std\n";
  f << nn::variant_name(cfg.net.variant) << ',' << o.runs << ',' << fmt_num(res.avg_unc.mean) << ','
    << fmt_num(res.avg_unc.std) << ',' << fmt_num(res.rmse.mean) << ',' << fmt_num(res.rmse.std) << ','
    << fmt_num(res.avg_visits.mean) << ',' << fmt_num(res.avg_visits.std) << '\n';
  out << "variant " << nn::variant_name(cfg.net.variant) << "\n";
  print_summary(out, res);
  return 0;
}

int cmd_plot(const Options& o, std::ostream& out) {
  std::vector<std::string> headers;
  const auto series = load_traces(o.traces, &headers);
  std::string comment = std::string("compass ") + kVersion;
  for (const auto& h : headers) {
    const auto pos = h.find("config=");
    if (pos != std::string::npos) comment += " " + h.substr(pos);
  }
  auto f = open_output(o.out);
  f << render_svg(series, comment);
  for (const auto& s : series) {
    out << s.planner << ": " << s.runs << " runs, " << s.mean.size() << " steps";
    if (!s.mean.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, ", unc %.4f -> %.4f", s.mean.front(), s.mean.back());
      out << buf;
    }
    out << "\n";
  }
  out << "wrote " << o.out << "\n";
  return 0;
}

}  // namespace

std::string metadata_line(const RunConfig& cfg) {
  return std::string("# compass ") + kVersion + " config=" + config_hash(cfg);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Multi-agent persistent monitoring: training, evaluation and plotting", "compass"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  const std::vector<std::string> planners = {"compass", "random", "coverage", "auction", "greedy"};
  const std::vector<std::string> variants = {"full", "no_presence", "no_spatial", "no_temporal"};
  const std::vector<std::string> critics = {"central", "decentralized"};

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file (defaults when omitted)");
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--threads", o.threads, "worker threads (fallback: COMPASS_THREADS, then 1)");
  };

  auto* train = app.add_subcommand("train", "train the policy with PPO and write checkpoints");
  add_common(train);
  train->add_option("--out", o.out, "output directory")->required();
  train->add_option("--variant", o.variant, "network variant")->check(CLI::IsMember(variants));
  train->add_option("--critic", o.critic, "critic head")->check(CLI::IsMember(critics));

  auto* eval = app.add_subcommand("eval", "evaluate a planner over seeded episodes");
  add_common(eval);
  eval->add_option("--out", o.out, "output directory")->required();
  eval->add_option("--planner", o.planner, "planner")->check(CLI::IsMember(planners));
  eval->add_option("--runs", o.runs, "number of episodes")->check(CLI::PositiveNumber);
  eval->add_option("--checkpoint", o.checkpoint, "trained parameters (planner compass)");
  eval->add_flag("--episode-traces", o.episode_traces, "also write JSON-lines step traces");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate one network variant");
  add_common(ablate);
  ablate->add_option("--out", o.out, "output directory")->required();
  ablate->add_option("--variant", o.variant, "network variant")->required()->check(CLI::IsMember(variants));
  ablate->add_option("--critic", o.critic, "critic head")->check(CLI::IsMember(critics));
  ablate->add_option("--runs", o.runs, "evaluation episodes")->check(CLI::PositiveNumber);
  ablate->add_flag("--episode-traces", o.episode_traces, "also write JSON-lines step traces");

  auto* plot = app.add_subcommand("plot", "render uncertainty curves from trace CSVs");
  plot->add_option("--traces", o.traces, "directory of trace CSVs")->required();
  plot->add_option("--out", o.out, "output SVG")->required();

  std::vector<const char*> argv{"compass"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::Success&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (ablate->parsed()) return cmd_ablate(o, out);
    return cmd_plot(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace compass::cli
