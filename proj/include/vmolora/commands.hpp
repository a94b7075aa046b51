// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "vmolora/checks.hpp"
#include "vmolora/config.hpp"
#include "vmolora/selective.hpp"

namespace vmolora {

// Each command writes only inside config.out, creating it when missing.

/// Per-block adapter sizes, totals and the fraction of the backbone;
/// writes budget.csv.
ParamBudget cmd_budget(const RunConfig& config, std::ostream& log);

/// Trains on config.domain and writes checkpoint.bin and loss.csv.
TrainResult cmd_train(const RunConfig& config, std::ostream& log);

/// Runs the two-stage experiment over config.seeds; writes forgetting.csv.
std::vector<RetentionPair> cmd_forget(const RunConfig& config, std::ostream& log);

/// Scores the validation split with a trained checkpoint and writes
/// riskcov.csv.
std::vector<RiskCoveragePoint> cmd_riskcov(const RunConfig& config, const std::string& checkpoint,
                                           const std::vector<double>& grid, std::ostream& log);

/// Oracle suite; the caller maps a failed report to exit code 2.
CheckReport cmd_check(const RunConfig& config, Fault fault, std::ostream& log);

/// Writes pituitary.jsonl and nephrectomy.jsonl.
void cmd_gen_data(const RunConfig& config, std::ostream& log);

/// CSV helpers shared by the commands and tests.
std::string forgetting_csv(const std::vector<RetentionPair>& pairs);
std::string riskcov_csv(const std::vector<RiskCoveragePoint>& rouge,
                        const std::vector<RiskCoveragePoint>& accuracy);

}  // namespace vmolora
