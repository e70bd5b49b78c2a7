#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "stochabs/parallel.hpp"
#include "stochabs/pipeline.hpp"

using namespace stochabs;

namespace {

std::vector<std::string> split_stages(const std::string& spec) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (at <= spec.size()) {
    const auto comma = spec.find(',', at);
    const std::string tok = spec.substr(at, comma == std::string::npos ? comma : comma - at);
    if (!tok.empty()) out.push_back(tok);
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional stochastic abstraction toolkit"};
  app.require_subcommand(1);

  std::string scenario_path, stages_spec, out_dir = "out";
  bool strict = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int runs = 0;
  bool runs_set = false;
  int jobs = default_jobs();

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("scenario", scenario_path, "scenario file (.scn)")->required();
    cmd->add_option("--out", out_dir, "artifact directory");
    cmd->add_flag("--strict", strict, "treat boundary small-gain verdicts as failures");
    cmd->add_option("--jobs", jobs, "worker threads");
  };

  CLI::App* run = app.add_subcommand("run", "run the verification/synthesis pipeline");
  add_common(run);
  run->add_option("--stages", stages_spec,
                  "comma list of verify,abstract,compose,bound,synth,sim (default all)");
  run->add_option("--seed", seed, "override the scenario RNG seed")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--runs", runs, "override the scenario run count")->each([&](const std::string&) {
    runs_set = true;
  });

  CLI::App* sweep = app.add_subcommand("sweep", "delta_hat surface over N, epsilon or delta");
  add_common(sweep);
  std::string over = "N";
  std::vector<double> values;
  sweep->add_option("--over", over, "sweep variable: N, epsilon or delta");
  sweep->add_option("--values", values, "sweep values")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const Scenario scn = load_scenario(scenario_path);
    if (run->parsed()) {
      PipelineOptions opts;
      opts.out_dir = out_dir;
      opts.stages = split_stages(stages_spec);
      opts.strict = strict;
      opts.jobs = jobs;
      if (seed_set) opts.seed = seed;
      if (runs_set) opts.runs = runs;
      const PipelineData data = run_pipeline(scn, opts);
      for (const auto& w : data.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::printf("%s: %s (artifacts in %s)\n", scn.name.c_str(),
                  data.exit_code == 0 ? "ok" : "FAILED", out_dir.c_str());
      return data.exit_code;
    }
    SweepVariable var;
    if (over == "N") var = SweepVariable::copies;
    else if (over == "epsilon") var = SweepVariable::epsilon;
    else if (over == "delta") var = SweepVariable::delta;
    else throw std::runtime_error("unknown sweep variable " + over);
    const std::string out_path = out_dir + "/sweep_" + over + ".csv";
    std::filesystem::create_directories(out_dir);
    run_sweep(scn, var, values, out_path, strict);
    std::printf("%s: sweep written to %s\n", scn.name.c_str(), out_path.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
