#pragma once

#include <json.hpp>

#include "uadct/metrics.hpp"
#include "uadct/trainer.hpp"

// JSON encodings shared by run reports, trainer state and the command-line tools.
namespace uadct {

void to_json(nlohmann::ordered_json& j, const MetricsReport& r);
void from_json(const nlohmann::ordered_json& j, MetricsReport& r);

void to_json(nlohmann::ordered_json& j, const SeedStat& s);
void to_json(nlohmann::ordered_json& j, const AggregateReport& r);

void to_json(nlohmann::ordered_json& j, const EpochLog& e);
void from_json(const nlohmann::ordered_json& j, EpochLog& e);

}  // namespace uadct
