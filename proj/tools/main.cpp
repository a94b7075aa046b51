// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Exit codes: 0 success, 1 contract violation (bad
// config, bad input, I/O failure), 2 oracle-suite failure.

#include <CLI11.hpp>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "vmolora/commands.hpp"

namespace {

constexpr int kContractViolation = 1;
constexpr int kCheckFailure = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON run config (defaults when omitted)");
  cmd->add_option("--seed", flags.seed, "root seed; overrides the config");
  cmd->add_option("--out", flags.out, "output directory; overrides the config");
}

vmolora::RunConfig resolve(const CommonFlags& flags, bool seed_replaces_list) {
  vmolora::RunConfig config =
      flags.config.empty() ? vmolora::default_run_config() : vmolora::load_run_config(flags.config);
  if (flags.seed) {
    config.seed = *flags.seed;
    if (seed_replaces_list) config.seeds = {*flags.seed};
  }
  if (!flags.out.empty()) config.out = flags.out;
  vmolora::validate(config);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vector-MoLoRA desk-scale toolkit"};
  app.require_subcommand(1);

  CommonFlags budget_flags, train_flags, forget_flags, riskcov_flags, check_flags, data_flags;
  auto* budget = app.add_subcommand("budget", "adapter parameter budget per block");
  add_common(budget, budget_flags);
  auto* train = app.add_subcommand("train", "train on one synthetic domain and save a checkpoint");
  add_common(train, train_flags);
  auto* forget = app.add_subcommand("forget", "two-stage catastrophic forgetting experiment");
  add_common(forget, forget_flags);
  auto* riskcov = app.add_subcommand("riskcov", "risk-coverage curve for a trained checkpoint");
  add_common(riskcov, riskcov_flags);
  std::string checkpoint;
  std::string grid_text;
  riskcov->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
  riskcov->add_option("--grid", grid_text, "strictly descending coverages, e.g. 1,0.9,0.8");
  auto* check = app.add_subcommand("check", "materialization, gradient and zero-init oracles");
  add_common(check, check_flags);
  std::string fault_name;
  check->add_option("--inject-fault", fault_name, "deliberate defect: none or tiling");
  auto* gen = app.add_subcommand("gen-data", "write both synthetic corpora as JSONL");
  add_common(gen, data_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kContractViolation;
  }

  try {
    if (budget->parsed()) {
      vmolora::cmd_budget(resolve(budget_flags, false), std::cout);
    } else if (train->parsed()) {
      vmolora::cmd_train(resolve(train_flags, false), std::cout);
    } else if (forget->parsed()) {
      vmolora::cmd_forget(resolve(forget_flags, true), std::cout);
    } else if (riskcov->parsed()) {
      const auto config = resolve(riskcov_flags, false);
      const auto grid =
          grid_text.empty() ? vmolora::default_coverage_grid() : vmolora::parse_grid(grid_text);
      vmolora::cmd_riskcov(config, checkpoint, grid, std::cout);
    } else if (check->parsed()) {
      const auto fault = vmolora::parse_fault(fault_name);
      const auto report = vmolora::cmd_check(resolve(check_flags, false), fault, std::cout);
      if (!report.passed()) return kCheckFailure;
    } else if (gen->parsed()) {
      vmolora::cmd_gen_data(resolve(data_flags, false), std::cout);
    }
  } catch (const vmolora::ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kContractViolation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kContractViolation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kContractViolation;
  }
  return 0;
}
