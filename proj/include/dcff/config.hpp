#ifndef DCFF_CONFIG_HPP
#define DCFF_CONFIG_HPP

#include "dcff/trainer.hpp"

#include <string>

namespace dcff {

/// Everything a training run needs: the trainer settings plus the dataset
/// choice. Parsed from flat `key = value` text (see README for the key list);
/// unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  DataSpec data;
};

RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig parse_config_file(const std::string& path);
std::string config_to_text(const RunConfig& config);

}  // namespace dcff

#endif  // DCFF_CONFIG_HPP
