#pragma once

#include <stdexcept>
#include <string>

namespace hetplan {

// Base of every error the library raises. `kind()` is the stable
// machine-readable name used in CLI error payloads.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define HETPLAN_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    using Error::Error;                                              \
    const char* kind() const noexcept override { return #Name; }     \
  };

HETPLAN_DEFINE_ERROR(ParseError)
HETPLAN_DEFINE_ERROR(ConsistencyError)
HETPLAN_DEFINE_ERROR(InsufficientResources)
HETPLAN_DEFINE_ERROR(DegenerateFit)
HETPLAN_DEFINE_ERROR(InvalidPlan)
HETPLAN_DEFINE_ERROR(InstanceTooLarge)
HETPLAN_DEFINE_ERROR(SearchTimeout)

#undef HETPLAN_DEFINE_ERROR

// Missing or malformed field. `path` is a JSON pointer to the offending field.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const char* kind() const noexcept override { return "SchemaError"; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class MissingProfile : public Error {
 public:
  MissingProfile(std::string gpu_type, int tp, int mbs, const std::string& detail = {})
      : Error("no profile for gpu_type=" + gpu_type + " tp=" + std::to_string(tp) +
              " mbs=" + std::to_string(mbs) + (detail.empty() ? "" : " (" + detail + ")")),
        gpu_type_(std::move(gpu_type)),
        tp_(tp),
        mbs_(mbs) {}
  const char* kind() const noexcept override { return "MissingProfile"; }
  const std::string& gpu_type() const noexcept { return gpu_type_; }
  int tp() const noexcept { return tp_; }
  int mbs() const noexcept { return mbs_; }

 private:
  std::string gpu_type_;
  int tp_;
  int mbs_;
};

enum class InfeasibleReason { kOutOfMemory, kBudget, kThroughputFloor, kMissingProfiles, kNoResources };

const char* to_string(InfeasibleReason reason);

class NoFeasiblePlan : public Error {
 public:
  explicit NoFeasiblePlan(InfeasibleReason reason)
      : Error(std::string("no feasible plan: ") + to_string(reason)), reason_(reason) {}
  const char* kind() const noexcept override { return "NoFeasiblePlan"; }
  InfeasibleReason reason() const noexcept { return reason_; }

 private:
  InfeasibleReason reason_;
};

}  // namespace hetplan
