#pragma once

#include <nlohmann/json.hpp>

#include "seqret/evalkit.hpp"
#include "seqret/generator.hpp"
#include "seqret/hashindex.hpp"
#include "seqret/mtpp.hpp"
#include "seqret/relevance.hpp"
#include "seqret/train.hpp"
#include "seqret/unwarp.hpp"

namespace seqret {

// JSON forms of the configuration structs. Readers start from the defaults,
// overwrite the keys present and reject unknown keys with ConfigError.

nlohmann::json to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MtppConfig& c);
MtppConfig mtpp_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const UnwarpConfig& c);
UnwarpConfig unwarp_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FisherConfig& c);
FisherConfig fisher_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BundleConfig& c);
BundleConfig bundle_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const HashTrainConfig& c);
HashTrainConfig hash_train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ProtocolConfig& c);
ProtocolConfig protocol_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FisherStats& s);
FisherStats fisher_stats_from_json(const nlohmann::json& j);

}  // namespace seqret
