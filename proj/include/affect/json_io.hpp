#pragma once

#include "json.hpp"

#include "affect/dataset.hpp"
#include "affect/losses.hpp"
#include "affect/model.hpp"

namespace affect {

// nlohmann ADL hooks so config structs convert with j = cfg / j.get<T>().

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

void to_json(nlohmann::json& j, const VaRange& r);
void from_json(const nlohmann::json& j, VaRange& r);

}  // namespace affect
