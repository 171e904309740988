#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <thread>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctc/config.hpp"

using nlohmann::json;
using namespace ctc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string snr;
  std::string model;
  std::string out;
};

json number(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  if (std::isnan(v)) return json("nan");
  return json(v);
}

json metrics_json(const sim::Metrics& m) {
  return {{"snr_db", number(m.snr_db)},
          {"trials", m.trials},
          {"ser", number(m.ser)},
          {"prr", number(m.prr)},
          {"detection_rate", number(m.detection_rate)},
          {"chip_error_rate", number(m.chip_error_rate)},
          {"nmse_body", number(m.nmse_body)},
          {"violated_bit_count", m.violated_bit_count},
          {"perturbed_subcarriers", m.perturbed_subcarriers},
          {"evm", number(m.evm)},
          {"phase_mse", number(m.phase_mse)},
          {"goodput_bps", number(m.goodput_bps)}};
}

json solve_json(const solver::SolveReport& r) {
  json p = json::array();
  for (const auto& s : r.perturbed_subcarriers) {
    p.push_back({{"ofdm_symbol", s.ofdm_symbol},
                 {"subcarrier", s.subcarrier},
                 {"intended", s.intended},
                 {"achieved", s.achieved}});
  }
  return {{"satisfied", r.satisfied},
          {"violated_bit_count", r.violated_positions.size()},
          {"violated_positions", r.violated_positions},
          {"perturbed_subcarriers", p}};
}

json scales_json(const nn::QuantizerParams& q) {
  json s = json::array();
  for (const auto& v : q.scales) s.push_back({v.real(), v.imag()});
  return {{"scales", s}, {"tau", q.tau}};
}

cli::CliConfig resolve(const Options& o, json& echo) {
  json j = o.config_path.empty() ? json::object() : cli::read_config_file(o.config_path);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& s : o.sets) cli::apply_override(j, s);
  if (o.seed) j["seed"] = *o.seed;
  if (!o.snr.empty()) {
    json list = json::array();
    for (double v : cli::parse_snr_list(o.snr)) list.push_back(number(v));
    j["snr_db"] = list;
  }
  if (!o.model.empty()) j["model_path"] = o.model;
  if (!o.out.empty()) j["metrics_out"] = o.out;
  cli::CliConfig cfg = cli::config_from_json(j);
  echo = cli::config_to_json(cfg);
  return cfg;
}

void log(const cli::CliConfig& cfg, const std::string& msg) {
  if (cfg.verbosity > 0) std::cerr << "ctc: " << msg << '\n';
}

nn::ModelConfig model_config(const sim::ExperimentConfig& e) {
  nn::ModelConfig mc;
  mc.modulation = e.mcs.modulation;
  mc.subcarriers = sim::resolved_subcarriers(e);
  mc.mode = e.emulation_mode;
  mc.tau = e.tau;
  mc.train_tau = e.train_tau;
  return mc;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

json cmd_train(const cli::CliConfig& cfg) {
  const auto& e = cfg.experiment;
  const auto payload = sim::resolved_payload(e);
  const auto target = sim::make_target(payload, e.delta_f_hz);
  nn::EmulationModel model(model_config(e));
  log(cfg, "training on " + std::to_string(target.size()) + " samples");
  const auto r = nn::train(model, target, e.train);
  if (!e.model_path.empty()) nn::save_model(model, e.model_path);
  return {{"payload", cli::to_hex(payload)},
          {"initial_hard_loss", r.initial_hard_loss},
          {"best_hard_loss", r.best_hard_loss},
          {"best_epoch", r.best_epoch},
          {"epochs_run", r.epochs_run},
          {"hard_loss_history", r.hard_loss_history},
          {"quantizer", scales_json(model.quantizer_params())},
          {"model_path", e.model_path}};
}

json cmd_emulate(const cli::CliConfig& cfg) {
  const auto& e = cfg.experiment;
  const auto payload = sim::resolved_payload(e);
  const auto target = sim::make_target(payload, e.delta_f_hz);
  std::optional<nn::EmulationModel> model;
  if (!e.model_path.empty()) {
    model.emplace(nn::load_model(e.model_path));
  } else {
    model.emplace(model_config(e));
    nn::train(*model, target, e.train);
  }
  const auto out = model->forward(target, true);
  const auto ref = model->reference(target);
  const auto m = dsp::signal_metrics(ref, out.samples);
  if (!cfg.iq_out.empty()) dsp::write_cf32(cfg.iq_out, out.samples);
  return {{"payload", cli::to_hex(payload)},
          {"samples", out.size()},
          {"nmse", number(m.nmse)},
          {"phase_mse", number(m.phase_mse)},
          {"iq_out", cfg.iq_out}};
}

json cmd_solve(const cli::CliConfig& cfg) {
  const auto link = sim::prepare_link(cfg.experiment);
  if (!cfg.psdu_path.empty()) write_bytes(cfg.psdu_path, link.solution.psdu);
  json r = solve_json(link.solution.report);
  r["psdu"] = cli::to_hex(link.solution.psdu);
  r["ofdm_symbols"] = link.grid.n_symbols;
  r["payload"] = cli::to_hex(link.payload);
  r["nmse_body"] = number(link.nmse_body);
  r["evm"] = number(link.evm);
  r["phase_mse"] = number(link.phase_mse);
  if (link.quantizer) r["quantizer"] = scales_json(*link.quantizer);
  return r;
}

json cmd_transmit(const cli::CliConfig& cfg) {
  std::vector<std::uint8_t> psdu;
  if (!cfg.psdu_path.empty()) {
    psdu = read_bytes(cfg.psdu_path);
  } else if (!cfg.psdu_hex.empty()) {
    psdu = cli::from_hex(cfg.psdu_hex);
  } else {
    throw ConfigError("transmit needs psdu or psdu_path");
  }
  const auto tx = wifi::modulate_psdu(psdu, cfg.experiment.mcs, cfg.experiment.scrambler_seed);
  if (!cfg.iq_out.empty()) dsp::write_cf32(cfg.iq_out, tx.waveform.samples);
  return {{"psdu_bytes", psdu.size()},
          {"ofdm_symbols", tx.n_ofdm_symbols()},
          {"samples", tx.waveform.size()},
          {"iq_out", cfg.iq_out}};
}

json cmd_zigbee_mod(const cli::CliConfig& cfg) {
  const auto payload = sim::resolved_payload(cfg.experiment);
  const auto sig = sim::make_target(payload, cfg.experiment.delta_f_hz);
  if (!cfg.iq_out.empty()) dsp::write_cf32(cfg.iq_out, sig.samples);
  return {{"payload", cli::to_hex(payload)},
          {"delta_f_hz", cfg.experiment.delta_f_hz},
          {"samples", sig.size()},
          {"iq_out", cfg.iq_out}};
}

json cmd_zigbee_demod(const cli::CliConfig& cfg) {
  if (cfg.iq_in.empty()) throw ConfigError("zigbee-demod needs iq_in");
  dsp::ComplexSignal sig;
  sig.samples = dsp::read_cf32(cfg.iq_in);
  const auto bb = dsp::frequency_shift(sig, -cfg.experiment.delta_f_hz);
  const auto& e = cfg.experiment;
  std::vector<std::uint8_t> ref;
  const bool have_ref = !e.payload.empty();
  if (have_ref) ref = e.payload;
  const auto r = zigbee::decode_frame(bb, have_ref ? &ref : nullptr, e.receiver);
  json out = {{"detected", r.detected},
              {"sync_correlation", r.sync_correlation},
              {"sync_offset", r.sync_offset},
              {"symbols", r.symbols.size()}};
  out["payload"] = r.payload ? json(cli::to_hex(*r.payload)) : json(nullptr);
  out["ser"] = r.ser ? number(*r.ser) : json(nullptr);
  out["chip_error_rate"] = r.chip_error_rate ? number(*r.chip_error_rate) : json(nullptr);
  return out;
}

json cmd_evaluate(const cli::CliConfig& cfg) {
  json rows = json::array();
  for (const auto& m : sim::run_pipeline(cfg.experiment)) rows.push_back(metrics_json(m));
  return {{"quantizer", sim::to_string(cfg.experiment.quantizer)}, {"metrics", rows}};
}

json cmd_sweep(const cli::CliConfig& cfg) {
  sim::SweepGrid grid;
  grid.snr_db = cfg.experiment.snr_db;
  grid.payload_lens = cfg.sweep_payload_lens;
  if (grid.payload_lens.empty()) grid.payload_lens = {cfg.experiment.payload_len};
  grid.quantizers = cfg.sweep_quantizers;
  if (grid.quantizers.empty()) grid.quantizers = {cfg.experiment.quantizer};
  const auto rows = sim::sweep(cfg.experiment, grid);
  const std::string csv = sim::sweep_csv(rows);
  if (!cfg.csv_out.empty()) write_text(cfg.csv_out, csv);
  json out = json::array();
  for (const auto& r : rows) {
    json m = metrics_json(r.metrics);
    m["quantizer"] = sim::to_string(r.quantizer);
    m["payload_len"] = r.payload_len;
    out.push_back(m);
  }
  return {{"rows", out}, {"csv_out", cfg.csv_out}};
}

json cmd_grad_check(const cli::CliConfig& cfg, bool& ok) {
  dsp::Rng rng(cfg.experiment.seed);
  const auto entries = nn::grad_check_model(model_config(cfg.experiment), rng);
  json out = json::array();
  ok = true;
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error < 1e-4;
    ok = ok && pass;
    out.push_back({{"block", e.block}, {"max_rel_error", e.max_rel_error}, {"pass", pass}});
    std::fprintf(stderr, "%-24s %.3e %s\n", e.block.c_str(), e.max_rel_error, pass ? "ok" : "FAIL");
  }
  return {{"tolerance", 1e-4}, {"blocks", out}, {"all_pass", ok}};
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string host_name() {
  char buf[256] = {0};
  if (gethostname(buf, sizeof buf - 1) != 0) return "unknown";
  return buf;
}

void error_line(const char* kind, const std::string& msg) {
  std::cerr << json{{"error", kind}, {"message", msg}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WiFi-to-ZigBee waveform emulation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "Train the emulation model on the configured target"},
      {"emulate", "Hard emulated waveform for the target (cf32 to iq_out)"},
      {"solve-payload", "Quantize the target and solve for the WiFi PSDU"},
      {"transmit", "Modulate a PSDU with the 802.11 data-field chain"},
      {"zigbee-mod", "ZigBee frame for the payload, shifted to delta_f"},
      {"zigbee-demod", "Decode a ZigBee frame from a cf32 capture"},
      {"evaluate", "Full pipeline metrics at each SNR"},
      {"sweep", "Metrics over SNR x payload length x quantizer"},
      {"grad-check", "Finite-difference check of every model block"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", opt.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", opt.sets, "Override a config key (key=value)");
    sub->add_option("--seed", opt.seed, "Random seed");
    sub->add_option("--snr", opt.snr, "Comma separated SNR list in dB, 'inf' for noiseless");
    sub->add_option("--model", opt.model, "Model file (output for train, input otherwise)");
    sub->add_option("-o,--out", opt.out, "Write the JSON summary here instead of stdout");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what());
    std::cerr << app.help();
    return kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  json echo;
  json result;
  int code = kExitOk;
  cli::CliConfig cfg;
  try {
    cfg = resolve(opt, echo);
    if (command == "train") {
      result = cmd_train(cfg);
    } else if (command == "emulate") {
      result = cmd_emulate(cfg);
    } else if (command == "solve-payload") {
      result = cmd_solve(cfg);
    } else if (command == "transmit") {
      result = cmd_transmit(cfg);
    } else if (command == "zigbee-mod") {
      result = cmd_zigbee_mod(cfg);
    } else if (command == "zigbee-demod") {
      result = cmd_zigbee_demod(cfg);
    } else if (command == "evaluate") {
      result = cmd_evaluate(cfg);
    } else if (command == "sweep") {
      result = cmd_sweep(cfg);
    } else {
      bool ok = true;
      result = cmd_grad_check(cfg, ok);
      if (!ok) code = kExitRuntime;
    }
  } catch (const ConfigError& e) {
    error_line("config", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    error_line("runtime", e.what());
    return kExitRuntime;
  }

  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json doc;
  doc["deterministic"] = {
      {"command", command},
      {"version", kVersion},
      {"config", echo},
      {"result", result},
      {"notes",
       {{"channel", "AWGN at SNR relative to WiFi frame power; SNR stands in for distance and transmit power"},
        {"prr", "payload-exact frames, no CRC"},
        {"goodput", "payload bits x prr over this tool's frame airtime; not comparable to hardware figures"}}}};
  doc["non_deterministic"] = {{"started_utc", started},
                              {"elapsed_s", elapsed},
                              {"host", host_name()},
                              {"hardware_threads", std::thread::hardware_concurrency()}};
  const std::string text = doc.dump(2) + "\n";
  try {
    if (cfg.metrics_out.empty()) {
      std::cout << text;
    } else {
      write_text(cfg.metrics_out, text);
    }
  } catch (const std::exception& e) {
    error_line("runtime", e.what());
    return kExitRuntime;
  }
  if (code != kExitOk) error_line("runtime", "gradient check above tolerance");
  return code;
}
