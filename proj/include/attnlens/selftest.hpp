#pragma once

#include <string>
#include <vector>

namespace attnlens {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Gradient checks and oracle equivalences over freshly generated toy models.
// Deterministic per seed.
std::vector<CheckResult> run_selftest(unsigned long long seed);

} // namespace attnlens
