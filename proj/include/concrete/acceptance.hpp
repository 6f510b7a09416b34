#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace concrete {

struct AcceptanceOptions {
    /// Criteria 13 and 14 train models and take minutes.
    bool include_training = true;
};

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    double seconds = 0;
    double limit_seconds = 0;
    std::string detail;  // measured values
};

struct AcceptanceReport {
    std::vector<CriterionResult> results;
    bool all_passed() const;
};

/// Runs the acceptance criteria, printing one PASS/FAIL line per criterion as
/// it finishes. A criterion that exceeds its runtime limit fails.
AcceptanceReport run_acceptance(std::ostream& out, const AcceptanceOptions& options = {});

}  // namespace concrete
