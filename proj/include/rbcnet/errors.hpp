#pragma once

#include <stdexcept>
#include <string>

namespace rbcnet {

#define RBCNET_DEFINE_ERROR(NAME)                                  \
  class NAME : public std::runtime_error {                         \
   public:                                                         \
    explicit NAME(const std::string& msg)                          \
        : std::runtime_error(std::string(#NAME ": ") + msg) {}     \
  }

RBCNET_DEFINE_ERROR(ShapeError);
RBCNET_DEFINE_ERROR(RangeError);
RBCNET_DEFINE_ERROR(ParameterError);
RBCNET_DEFINE_ERROR(NumericError);
RBCNET_DEFINE_ERROR(OracleError);
RBCNET_DEFINE_ERROR(FormatError);
RBCNET_DEFINE_ERROR(LoadError);
RBCNET_DEFINE_ERROR(IngestError);
RBCNET_DEFINE_ERROR(SplitError);
RBCNET_DEFINE_ERROR(PlanError);
RBCNET_DEFINE_ERROR(HarnessError);
RBCNET_DEFINE_ERROR(TrainingError);
RBCNET_DEFINE_ERROR(MetricError);
RBCNET_DEFINE_ERROR(JoinError);
RBCNET_DEFINE_ERROR(ConfigError);
RBCNET_DEFINE_ERROR(DegenerateStatsError);

#undef RBCNET_DEFINE_ERROR

}  // namespace rbcnet
