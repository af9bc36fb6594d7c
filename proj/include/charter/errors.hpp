#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace charter {

// Base class for all library errors. `name()` is the stable,
// machine-readable identifier that the CLI prints on failure.
class Error : public std::runtime_error {
public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(what), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

private:
  std::string name_;
};

#define CHARTER_DEFINE_ERROR(NAME)                                       \
  struct NAME : Error {                                                  \
    explicit NAME(const std::string& what) : Error(#NAME, what) {}       \
  }

CHARTER_DEFINE_ERROR(InvalidInput);
CHARTER_DEFINE_ERROR(NotInterior);
CHARTER_DEFINE_ERROR(SingularH);
CHARTER_DEFINE_ERROR(NoConvergence);
CHARTER_DEFINE_ERROR(DegenerateDirection);
CHARTER_DEFINE_ERROR(CollapsedPolytope);
CHARTER_DEFINE_ERROR(InvalidBudget);
CHARTER_DEFINE_ERROR(PrivacyBudgetTooLarge);
CHARTER_DEFINE_ERROR(LedgerViolation);
CHARTER_DEFINE_ERROR(OracleUnavailable);
CHARTER_DEFINE_ERROR(UnknownProblem);
CHARTER_DEFINE_ERROR(ConfigRejected);

#undef CHARTER_DEFINE_ERROR

}  // namespace charter
