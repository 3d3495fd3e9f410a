// Command-line entry point: optimize, simulate, analyze, sweep, summarize, generate.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "orbitfed/orbitfed.hpp"

namespace {

int fail(const std::string& kind, const std::string& message, const std::vector<std::string>& problems = {}) {
  orbitfed::json j = {{"error", kind}, {"message", message}};
  if (!problems.empty()) j["problems"] = problems;
  std::cerr << j.dump(2) << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace orbitfed;
  CLI::App app{"Federated learning over LEO satellite clusters: resource optimization and simulation"};

  std::string mode = "simulate";
  std::string positional_mode;
  std::string scenario;
  std::string baseline = "optimized";
  double alpha_fixed = -1.0;
  int rounds = -1;
  std::vector<std::uint64_t> seeds;
  double target = 0.0;
  std::string out = "out";
  bool single_step = false, persistent = false, grid = false;
  double prox_mu = -1.0;

  app.add_option("command", positional_mode, "optimize | simulate | analyze | sweep | summarize | generate");
  app.add_option("--mode", mode, "Same as the positional command")
      ->check(CLI::IsMember({"optimize", "simulate", "analyze", "sweep", "summarize", "generate"}));
  app.add_option("--scenario", scenario, "Scenario JSON (default: built-in reference)");
  app.add_option("--baseline", baseline, "terrestrial_only | full_offload | fixed_ratio | optimized")
      ->check(CLI::IsMember({"terrestrial_only", "full_offload", "fixed_ratio", "optimized"}));
  app.add_option("--alpha-fixed", alpha_fixed, "Offload ratio for fixed_ratio (implies it)");
  app.add_option("--rounds", rounds, "Global rounds (default: scenario train.rounds)");
  app.add_option("--seeds", seeds, "Seeds, e.g. --seeds 1 2 3")->expected(1, -1);
  app.add_option("--target-acc", target, "Target accuracy for time-to-target (default: 90% of asymptotic)");
  app.add_option("--out", out, "Output directory (summarize: run directory to read)");
  app.add_flag("--single-step", single_step, "One mini-batch step per round");
  app.add_flag("--persistent-battery", persistent, "Carry satellite battery state across rounds");
  app.add_flag("--grid-oracle", grid, "Also run the exhaustive grid search (optimize mode, small scenarios)");
  app.add_option("--fedprox-mu", prox_mu, "Use FedProx with this proximal weight");

  CLI11_PARSE(app, argc, argv);
  if (!positional_mode.empty()) mode = positional_mode;

  try {
    if (mode == "generate") {
      const std::string text = reference_scenario_json().dump(2) + "\n";
      if (out == "-" || out == "out") std::cout << text;
      else detail::write_text(out, text);
      return 0;
    }
    if (mode == "summarize") {
      const auto s = summarize(out, target);
      detail::write_json(std::filesystem::path(out) / "summary.json", s);
      std::cout << summary_table(s);
      return 0;
    }

    ExperimentPlan plan;
    plan.scenario_path = scenario;
    plan.mode = parse_mode(mode);
    plan.baseline = parse_baseline(baseline);
    if (alpha_fixed >= 0.0) {
      plan.baseline = Baseline::fixed_ratio;
      plan.ratio = alpha_fixed;
    } else if (plan.baseline == Baseline::fixed_ratio) {
      return fail("invalid_argument", "fixed_ratio needs --alpha-fixed");
    }
    if (rounds >= 0) plan.rounds = rounds;
    if (!seeds.empty()) plan.seeds = seeds;
    if (prox_mu >= 0.0) plan.prox_mu = prox_mu;
    plan.target_acc = target;
    plan.out_dir = out;
    plan.single_step = single_step;
    plan.persistent_battery = persistent;
    plan.grid_oracle = grid;

    const ScenarioConfig cfg = scenario.empty() ? reference_config() : load_scenario_config(scenario);
    const json result = run(cfg, plan);
    if (plan.mode == Mode::simulate || plan.mode == Mode::sweep) {
      std::cout << summary_table(result);
    } else if (plan.mode == Mode::optimize) {
      std::printf("tau_round_s %.6f  iterations %d  feasible %s\n", result["tau_round_s"].get<double>(),
                  result["iterations"].get<int>(), result["feasibility"]["feasible"].get<bool>() ? "yes" : "no");
    } else {
      std::printf("omega %.6g  U %.6g  measured %.6g  all_pass %s\n", result["omega"].get<double>(),
                  result["mean_bound"].get<double>(), result["mean_lhs"].get<double>(),
                  result["all_pass"].get<bool>() ? "yes" : "no");
    }
    return 0;
  } catch (const ValidationError& e) {
    return fail("validation", "invalid scenario", e.problems());
  } catch (const InvalidArgument& e) {
    return fail("invalid_argument", e.what());
  } catch (const Infeasible& e) {
    return fail("infeasible", e.what());
  } catch (const NumericalError& e) {
    return fail("numerical", e.what());
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
