// Command-line front end: simulate, study, summarize, validate, generate.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tlrisk/error.hpp"
#include "tlrisk/experiment.hpp"
#include "tlrisk/log.hpp"

using namespace tlrisk;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string methods;
  std::string thresholds;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--methods", f.methods, "comma-separated method names");
  cmd->add_option("--thresholds", f.thresholds, "comma-separated: 0.5, prevalence, youden");
}

ExperimentConfig resolve(ExperimentConfig base, const CommonFlags& f) {
  if (!f.config.empty()) {
    base = load_config(f.config);
  }
  if (f.seed) {
    base.seed = *f.seed;
    for (auto& s : base.scenarios) s.seed = *f.seed;
  }
  if (f.jobs) base.jobs = *f.jobs;
  if (!f.methods.empty()) base.methods = parse_method_list(f.methods);
  if (!f.thresholds.empty()) base.thresholds = parse_threshold_list(f.thresholds);
  if (!f.out.empty()) base.output_dir = f.out;
  base.validate();
  return base;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer-learning risk models for grouped tabular data"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "log progress");
  app.add_flag("-q,--quiet", quiet, "suppress warnings");

  CommonFlags sim_flags;
  std::optional<int> replicates;
  auto* simulate = app.add_subcommand("simulate", "run the simulation scenario grid");
  add_common(simulate, sim_flags);
  simulate->add_option("--replicates", replicates, "replicates per scenario")
      ->check(CLI::PositiveNumber);

  CommonFlags study_flags;
  std::string input;
  auto* study = app.add_subcommand("study", "run the grouped-CSV cohort pipeline");
  add_common(study, study_flags);
  study->add_option("--input", input, "grouped CSV (overrides config input.path)");

  std::string results_path;
  std::string summary_out;
  auto* summarize_cmd = app.add_subcommand("summarize", "aggregate a results CSV");
  summarize_cmd->add_option("results", results_path, "results CSV")
      ->required()
      ->check(CLI::ExistingFile);
  summarize_cmd->add_option("--out", summary_out, "summary CSV path (default: stdout)");

  CommonFlags validate_flags;
  std::string validate_input;
  auto* validate = app.add_subcommand("validate", "check a grouped CSV and config");
  add_common(validate, validate_flags);
  validate->add_option("--input", validate_input, "grouped CSV");

  std::uint64_t gen_seed = 0;
  int gen_replicate = 0;
  double gen_prevalence = 0.5;
  double gen_b = 0.2;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "write one simulated study as grouped CSV");
  generate->add_option("--seed", gen_seed, "base seed");
  generate->add_option("--replicate", gen_replicate, "replicate index");
  generate->add_option("--prevalence", gen_prevalence, "positive-class probability");
  generate->add_option("--b", gen_b, "signal strength of the shared features");
  generate->add_option("--out", gen_out, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);
  if (quiet) log::set_level(log::Level::Quiet);
  if (verbose) log::set_level(log::Level::Info);

  try {
    if (simulate->parsed()) {
      ExperimentConfig c = resolve(ExperimentConfig::simulation_defaults(), sim_flags);
      if (replicates) {
        for (auto& s : c.scenarios) s.replicates = *replicates;
      }
      const ResultTable results = run_simulation_study(c);
      write_run(c, results);
      std::cout << results.size() << " result rows written to " << c.output_dir.string() << '\n';
    } else if (study->parsed()) {
      ExperimentConfig base = ExperimentConfig::cohort_defaults();
      ExperimentConfig c = resolve(base, study_flags);
      if (c.mode != ExperimentMode::CohortStudy) throw DataError("config mode must be 'study'");
      if (!input.empty()) c.input_path = input;
      const ResultTable results = run_cohort_study(c);
      write_run(c, results);
      std::cout << results.size() << " result rows written to " << c.output_dir.string() << '\n';
    } else if (summarize_cmd->parsed()) {
      const auto summary = summarize(read_results_csv(results_path));
      if (summary_out.empty()) {
        write_summary_csv(summary, std::cout);
      } else {
        write_summary_csv(summary, summary_out);
      }
    } else if (validate->parsed()) {
      ExperimentConfig c = resolve(ExperimentConfig::cohort_defaults(), validate_flags);
      if (!validate_input.empty()) c.input_path = validate_input;
      if (c.input_path.empty()) {
        std::cout << "config ok\n";
        return 0;
      }
      const GroupedDataset data = load_grouped_csv(c.input_path, c.label_column, c.group_column);
      bool any_usable = false;
      for (const auto& r : validate_dataset(data, c)) {
        std::cout << r.group << ": " << r.rows << " rows, " << r.positives << " positives, "
                  << (r.usable ? "ok" : "skip (" + r.reason + ")") << '\n';
        any_usable = any_usable || r.usable;
      }
      return any_usable ? 0 : 2;
    } else if (generate->parsed()) {
      SimConfig s;
      s.seed = gen_seed;
      s.prevalence = gen_prevalence;
      s.b = gen_b;
      write_grouped_csv(generate_study(s, gen_replicate).grouped(), gen_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
