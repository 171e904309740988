#include "ctc/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ctc::cli {

using nlohmann::json;

namespace {

[[noreturn]] void type_error(const std::string& key, const std::string& want) {
  throw ConfigError("key " + key + ": expected " + want);
}

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) type_error(key, "a non-negative integer");
  return v.get<std::size_t>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) type_error(key, "true or false");
  return v.get<bool>();
}

double snr_value(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      return parse_snr(v.get<std::string>());
    } catch (const ConfigError&) {
    }
  }
  type_error(key, "a number or \"inf\"");
}

template <typename Parse>
auto parse_enum(const json& v, const std::string& key, Parse parse) {
  const std::string s = get_string(v, key);
  try {
    return parse(s);
  } catch (const std::exception& e) {
    throw ConfigError("key " + key + ": " + e.what());
  }
}

json snr_json(double s) { return std::isinf(s) ? json("inf") : json(s); }

using Setter = std::function<void(CliConfig&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"payload", [](CliConfig& c, const json& v, const std::string& k) {
         try {
           c.experiment.payload = from_hex(get_string(v, k));
         } catch (const ConfigError& e) {
           throw ConfigError("key " + k + ": " + e.what());
         }
       }},
      {"payload_len", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.payload_len = get_count(v, k); }},
      {"delta_f_hz", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.delta_f_hz = get_number(v, k); }},
      {"modulation", [](CliConfig& c, const json& v, const std::string& k) {
         c.experiment.mcs.modulation = parse_enum(v, k, wifi::parse_modulation);
       }},
      {"coding_rate", [](CliConfig& c, const json& v, const std::string& k) {
         c.experiment.mcs.coding_rate = parse_enum(v, k, wifi::parse_coding_rate);
       }},
      {"scrambler_seed", [](CliConfig& c, const json& v, const std::string& k) {
         const std::size_t s = get_count(v, k);
         if (s > 0x7F) type_error(k, "a 7-bit value");
         c.experiment.scrambler_seed = static_cast<std::uint8_t>(s);
       }},
      {"emulation_mode", [](CliConfig& c, const json& v, const std::string& k) {
         c.experiment.emulation_mode = parse_enum(v, k, nn::parse_emulation_mode);
       }},
      {"quantizer", [](CliConfig& c, const json& v, const std::string& k) {
         c.experiment.quantizer = parse_enum(v, k, sim::parse_quantizer_mode);
       }},
      {"subcarriers", [](CliConfig& c, const json& v, const std::string& k) {
         if (!v.is_array()) type_error(k, "a list of integers");
         c.experiment.subcarriers.clear();
         for (const auto& e : v) {
           if (!e.is_number_integer()) type_error(k, "a list of integers");
           c.experiment.subcarriers.push_back(e.get<int>());
         }
       }},
      {"snr_db", [](CliConfig& c, const json& v, const std::string& k) {
         c.experiment.snr_db.clear();
         if (!v.is_array()) {
           c.experiment.snr_db.push_back(snr_value(v, k));
           return;
         }
         for (const auto& e : v) c.experiment.snr_db.push_back(snr_value(e, k));
       }},
      {"trials", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.trials = get_count(v, k); }},
      {"seed", [](CliConfig& c, const json& v, const std::string& k) {
         if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
           type_error(k, "a non-negative integer");
         }
         c.experiment.seed = v.get<std::uint64_t>();
       }},
      {"epochs", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.train.epochs = get_count(v, k); }},
      {"lr", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.train.lr = get_number(v, k); }},
      {"tau", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.tau = get_number(v, k); }},
      {"tau_decay", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.train.tau_decay = get_number(v, k); }},
      {"tau_floor", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.train.tau_floor = get_number(v, k); }},
      {"train_tau", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.train_tau = get_bool(v, k); }},
      {"patience", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.train.patience = get_count(v, k); }},
      {"model_path", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.model_path = get_string(v, k); }},
      {"lead_in_samples", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.lead_in_samples = get_count(v, k); }},
      {"channel_cutoff_hz", [](CliConfig& c, const json& v, const std::string& k) {
         c.experiment.receiver.channel_cutoff_hz = get_number(v, k);
       }},
      {"filter_taps", [](CliConfig& c, const json& v, const std::string& k) {
         const std::size_t n = get_count(v, k);
         if (n % 2 == 0) type_error(k, "an odd tap count");
         c.experiment.receiver.filter_taps = n;
       }},
      {"sync_threshold", [](CliConfig& c, const json& v, const std::string& k) {
         c.experiment.receiver.sync_threshold = get_number(v, k);
       }},
      {"threads", [](CliConfig& c, const json& v, const std::string& k) { c.experiment.threads = get_count(v, k); }},
      {"sweep_payload_lens", [](CliConfig& c, const json& v, const std::string& k) {
         if (!v.is_array()) type_error(k, "a list of integers");
         c.sweep_payload_lens.clear();
         for (const auto& e : v) c.sweep_payload_lens.push_back(get_count(e, k));
       }},
      {"sweep_quantizers", [](CliConfig& c, const json& v, const std::string& k) {
         if (!v.is_array()) type_error(k, "a list of quantizer names");
         c.sweep_quantizers.clear();
         for (const auto& e : v) c.sweep_quantizers.push_back(parse_enum(e, k, sim::parse_quantizer_mode));
       }},
      {"psdu", [](CliConfig& c, const json& v, const std::string& k) { c.psdu_hex = get_string(v, k); }},
      {"psdu_path", [](CliConfig& c, const json& v, const std::string& k) { c.psdu_path = get_string(v, k); }},
      {"iq_in", [](CliConfig& c, const json& v, const std::string& k) { c.iq_in = get_string(v, k); }},
      {"iq_out", [](CliConfig& c, const json& v, const std::string& k) { c.iq_out = get_string(v, k); }},
      {"metrics_out", [](CliConfig& c, const json& v, const std::string& k) { c.metrics_out = get_string(v, k); }},
      {"csv_out", [](CliConfig& c, const json& v, const std::string& k) { c.csv_out = get_string(v, k); }},
      {"verbosity", [](CliConfig& c, const json& v, const std::string& k) {
         c.verbosity = static_cast<int>(get_count(v, k));
       }},
  };
  return table;
}

}  // namespace

double parse_snr(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "noiseless") return dsp::kNoiseless;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad SNR value " + s);
  }
  if (used != s.size() || std::isnan(v)) throw ConfigError("bad SNR value " + s);
  return v;
}

std::vector<double> parse_snr_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_snr(item));
  }
  if (out.empty()) throw ConfigError("empty SNR list");
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(2 * bytes.size());
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw ConfigError("hex string has odd length");
  auto nibble = [](char ch) -> int {
    if (ch >= '0' && ch <= '9') return ch - '0';
    if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
    if (ch >= 'A' && ch <= 'F') return ch - 'A' + 10;
    throw ConfigError(std::string("bad hex digit ") + ch);
  };
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return out;
}

CliConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  CliConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown key " + key);
    it->second(cfg, value, key);
  }
  cfg.experiment.validate();
  return cfg;
}

json config_to_json(const CliConfig& cfg) {
  const auto& e = cfg.experiment;
  json j;
  j["payload"] = to_hex(e.payload);
  j["payload_len"] = e.payload_len;
  j["delta_f_hz"] = e.delta_f_hz;
  j["modulation"] = wifi::to_string(e.mcs.modulation);
  j["coding_rate"] = wifi::to_string(e.mcs.coding_rate);
  j["scrambler_seed"] = e.scrambler_seed;
  j["emulation_mode"] = nn::to_string(e.emulation_mode);
  j["quantizer"] = sim::to_string(e.quantizer);
  j["subcarriers"] = sim::resolved_subcarriers(e);
  j["snr_db"] = json::array();
  for (double s : e.snr_db) j["snr_db"].push_back(snr_json(s));
  j["trials"] = e.trials;
  j["seed"] = e.seed;
  j["epochs"] = e.train.epochs;
  j["lr"] = e.train.lr;
  j["tau"] = e.tau;
  j["tau_decay"] = e.train.tau_decay;
  j["tau_floor"] = e.train.tau_floor;
  j["train_tau"] = e.train_tau;
  j["patience"] = e.train.patience;
  j["model_path"] = e.model_path;
  j["lead_in_samples"] = e.lead_in_samples;
  j["channel_cutoff_hz"] = e.receiver.channel_cutoff_hz;
  j["filter_taps"] = e.receiver.filter_taps;
  j["sync_threshold"] = e.receiver.sync_threshold;
  j["threads"] = e.threads;
  j["sweep_payload_lens"] = cfg.sweep_payload_lens;
  j["sweep_quantizers"] = json::array();
  for (auto q : cfg.sweep_quantizers) j["sweep_quantizers"].push_back(sim::to_string(q));
  j["psdu"] = cfg.psdu_hex;
  j["psdu_path"] = cfg.psdu_path;
  j["iq_in"] = cfg.iq_in;
  j["iq_out"] = cfg.iq_out;
  j["metrics_out"] = cfg.metrics_out;
  j["csv_out"] = cfg.csv_out;
  j["verbosity"] = cfg.verbosity;
  return j;
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  j[key] = v;
}

}  // namespace ctc::cli
