#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctc/sim.hpp"

namespace ctc::cli {

struct CliConfig {
  sim::ExperimentConfig experiment;
  /// Extra axes for `sweep`; empty means "just the experiment's value".
  std::vector<std::size_t> sweep_payload_lens;
  std::vector<sim::QuantizerMode> sweep_quantizers;
  /// Hex PSDU for `transmit` when no psdu_path is given.
  std::string psdu_hex;
  std::string psdu_path;
  std::string iq_in;
  std::string iq_out;
  std::string metrics_out;
  std::string csv_out;
  int verbosity = 0;
};

/// Flat JSON object -> config. Unknown keys and wrongly typed values throw
/// ConfigError naming the key.
CliConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const CliConfig& cfg);

/// Reads a config file; a missing or unparsable file is a ConfigError.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// `key=value` where value is JSON if it parses as JSON, else a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// "inf" or a number.
double parse_snr(const std::string& s);
/// Comma separated SNR list.
std::vector<double> parse_snr_list(const std::string& s);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);

}  // namespace ctc::cli
