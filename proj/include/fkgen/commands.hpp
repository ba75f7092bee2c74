#pragma once

#include <string>

#include "fkgen/scenario.hpp"

namespace fkgen::cli {

// Stable exit codes, one per failure class.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitModelContract = 3;
inline constexpr int kExitStatistical = 4;
inline constexpr int kExitCapExceeded = 5;

// Each command writes its CSV artifacts plus resolved_config.json into the
// scenario's output directory and returns an exit code.
int cmd_smooth(const Scenario& scenario);
int cmd_genealogy(const Scenario& scenario);
int cmd_compare_variance(const Scenario& scenario);
int cmd_oracle_check(const Scenario& scenario);
int cmd_hprocess(const Scenario& scenario);

// Maps an in-flight exception to the documented exit code.
int exit_code_for_current_exception();

}  // namespace fkgen::cli
