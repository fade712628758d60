// prism: train and probe context-gated mixture-of-experts world models on
// toy hybrid dynamical systems.
//
// Exit codes: 0 success, 1 usage error, 2 numerical divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "prism/experiments.hpp"
#include "prism/trainer.hpp"

extern "C" void openblas_set_num_threads(int);

namespace {

prism::RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides,
                             std::uint64_t* seed, std::string* out_dir, std::string* variant, std::int64_t* experts) {
  prism::RunConfig cfg;
  if (!config_path.empty()) cfg = prism::RunConfig::parse_file(config_path);
  for (const auto& kv : overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw prism::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed != nullptr) cfg.seed = *seed;
  if (out_dir != nullptr && !out_dir->empty()) cfg.out_dir = *out_dir;
  if (variant != nullptr && !variant->empty()) cfg.variant = *variant;
  if (experts != nullptr && *experts > 0) cfg.experts = *experts;
  cfg.validate();
  return cfg;
}

void setup_threads() {
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PRISM_THREADS")) {
    const int requested = std::atoi(env);
    if (requested > 0) threads = std::min(threads, requested);
  }
  if (threads > 0) openblas_set_num_threads(threads);
}

}  // namespace

int main(int argc, char** argv) {
  setup_threads();

  CLI::App app{"prism: context-gated MoE world models on toy hybrid systems"};
  app.require_subcommand(0, 1);

  std::string config_path, out_dir, variant, checkpoint;
  std::vector<std::string> checkpoints, overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::int64_t experts = 0;
  std::int64_t max_horizon = 30;
  std::int64_t impulse_step = 50;
  double impulse_magnitude = 2.0;
  bool print_config = false;

  app.add_flag("--print-config", print_config, "print the full default configuration and exit");

  auto add_common = [&](CLI::App* cmd, bool needs_checkpoint, bool multi_checkpoint = false) {
    cmd->add_option("--config", config_path, "run configuration file (key = value)");
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) { seed_given = true; });
    cmd->add_option("--out", out_dir, "output directory override");
    cmd->add_option("--variant", variant, "model variant override");
    cmd->add_option("--experts", experts, "expert count override");
    cmd->add_option("--set", overrides, "extra key=value overrides")->take_all();
    if (multi_checkpoint) {
      cmd->add_option("--checkpoint", checkpoints, "trained checkpoint(s)")->required();
    } else if (needs_checkpoint) {
      cmd->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    }
    cmd->add_flag("--print-config", print_config, "print the effective configuration and exit");
  };

  CLI::App* train = app.add_subcommand("train", "collect with the planner in the loop and train the model");
  add_common(train, false);
  CLI::App* ablate = app.add_subcommand("ablate-horizon", "open-loop rollout fidelity vs horizon");
  add_common(ablate, false, true);
  ablate->add_option("--max-horizon", max_horizon, "largest open-loop horizon");
  CLI::App* probe = app.add_subcommand("gate-probe", "closed-loop gate response to a state impulse");
  add_common(probe, true);
  probe->add_option("--impulse-step", impulse_step, "step at which the impulse is injected");
  probe->add_option("--impulse-magnitude", impulse_magnitude, "impulse size");
  CLI::App* bench = app.add_subcommand("bench", "float32 latency of model steps and planner calls");
  add_common(bench, false);
  CLI::App* export_gates = app.add_subcommand("export-gates", "mean gate weights per task");
  add_common(export_gates, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::uint64_t* seed_ptr = seed_given ? &seed : nullptr;
    prism::RunConfig cfg = load_config(config_path, overrides, seed_ptr, &out_dir, &variant, &experts);
    if (print_config) {
      std::cout << cfg.dump();
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 1;
    }

    std::filesystem::create_directories(cfg.out_dir);
    if (train->parsed()) {
      prism::TrainResult result = prism::cmd_train(cfg);
      std::cout << "checkpoint: " << result.checkpoint_path << "\n"
                << "metrics: " << result.metrics_path << "\n"
                << "random_policy_return: " << result.random_policy_return << "\n"
                << "final_eval_return: " << result.final_eval_return << "\n";
    } else if (ablate->parsed()) {
      const std::string csv = cfg.out_dir + "/horizon.csv";
      prism::cmd_ablate_horizon(cfg, checkpoints, static_cast<std::size_t>(max_horizon), csv);
      std::cout << "wrote " << csv << "\n";
    } else if (probe->parsed()) {
      const std::string csv = cfg.out_dir + "/gate_probe.csv";
      auto result = prism::cmd_gate_probe(cfg, checkpoint, static_cast<std::size_t>(impulse_step), impulse_magnitude,
                                          csv);
      std::cout << "wrote " << csv << "\n"
                << "agreement_best: " << result.agreement_best << "\n";
    } else if (bench->parsed()) {
      const std::string csv = cfg.out_dir + "/bench.csv";
      auto rows = prism::cmd_bench(cfg, csv);
      std::cout << "variant            K  forward_ms  plan_ms   rel_vs_mlp\n";
      for (const auto& row : rows) {
        std::printf("%-18s %2lld  %9.4f  %8.3f  %9.3f\n", row.variant.c_str(),
                    static_cast<long long>(row.experts), row.forward_ms_median, row.plan_ms_median,
                    row.rel_plan_vs_mlp);
      }
      std::cout << "wrote " << csv << "\n";
    } else if (export_gates->parsed()) {
      const std::string csv = cfg.out_dir + "/gates.csv";
      auto rows = prism::cmd_export_gates(cfg, checkpoint, csv);
      std::cout << "wrote " << csv << " (" << rows.size() << " tasks)\n";
    }
  } catch (const prism::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const prism::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
