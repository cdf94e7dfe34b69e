#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "seqret/evalkit.hpp"
#include "seqret/generator.hpp"
#include "seqret/hashindex.hpp"
#include "seqret/retrieval.hpp"
#include "seqret/train.hpp"

namespace seqret::cli {

inline constexpr std::uint64_t kDefaultSeed = 1;

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2 };

/// Everything a run can be configured with. Sections left out of the file
/// keep the library defaults; the run seed and worker count replace the
/// seed/workers fields of every section.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  GeneratorConfig generator;
  BundleConfig model;
  TrainConfig train;
  HashTrainConfig hash;
  HashScheme scheme = HashScheme::Learned;
  IndexProfile profile = IndexProfile::desk();
  ProtocolConfig evaluate;
  RetrievalConfig retrieval;
  std::size_t k = 10;
  std::string split = "test";
  std::string data_path;
  std::string model_path;
  std::string index_path;

  nlohmann::json to_json() const;
};

/// Strict: unknown keys raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Entry point behind the seqret executable; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seqret::cli
