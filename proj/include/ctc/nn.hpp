#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctc/dsp.hpp"
#include "ctc/solver.hpp"
#include "ctc/wifi.hpp"

// Differentiable blocks work on real vectors. A complex vector z of length n
// is stacked as [Re z_0 .. Re z_{n-1}, Im z_0 .. Im z_{n-1}].
namespace ctc::nn {

using Vec = std::vector<double>;

Vec stack(std::span<const cd> z);
CVec unstack(std::span<const double> x);

struct Param {
  std::string name;
  Vec value;
  Vec grad;
  bool trainable = true;
};

/// Per-call context; blocks that differ between OFDM symbols (pilot
/// polarity) read the symbol index from here.
struct BlockContext {
  std::size_t symbol = 0;
};

class DiffBlock {
 public:
  virtual ~DiffBlock() = default;
  virtual std::string name() const = 0;
  virtual std::size_t in_dim() const = 0;
  virtual std::size_t out_dim() const = 0;
  virtual Vec forward(std::span<const double> x, const BlockContext& ctx = {}) const = 0;
  /// Returns dL/dx for upstream gradient g = dL/dy at input x, and adds the
  /// parameter gradients into each Param::grad.
  virtual Vec backward(std::span<const double> x, std::span<const double> g,
                       const BlockContext& ctx = {}) = 0;
  virtual std::vector<Param*> params() { return {}; }
};

/// Real weight matrix, row-major, acting on stacked vectors.
struct FixedLinearSpec {
  std::string kind;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec w;

  double at(std::size_t r, std::size_t c) const { return w[r * cols + c]; }

  static FixedLinearSpec identity(std::size_t n);
  /// Complex rows x cols matrix (row-major) lifted to the stacked form.
  static FixedLinearSpec from_complex(std::string kind, std::size_t rows, std::size_t cols,
                                      std::span<const cd> a);
  /// 64-point DFT / IDFT in natural bin order.
  static FixedLinearSpec dft();
  static FixedLinearSpec idft();
  /// W_A (80 x 64): prepend the last 16 samples.
  static FixedLinearSpec cp_add();
  /// W_R (64 x 80): drop the first 16 samples.
  static FixedLinearSpec cp_remove();
  /// |subcarriers| x 64: picks each subcarrier's natural-order bin.
  static FixedLinearSpec selection(std::span<const int> subcarriers);
  /// Fixed point-set map from stacked one-hot weights (m * M) to stacked
  /// symbols (2m).
  static FixedLinearSpec constellation_map(const wifi::Constellation& c, std::size_t m);
  /// Transpose-selection back onto the 64 natural bins.
  static FixedLinearSpec reassemble(std::span<const int> subcarriers);

  FixedLinearSpec transpose() const;
  FixedLinearSpec then(const FixedLinearSpec& next) const;  // next * this
  Vec apply(std::span<const double> x) const;
};

class FixedLinear : public DiffBlock {
 public:
  explicit FixedLinear(FixedLinearSpec spec);
  std::string name() const override { return spec_.kind; }
  std::size_t in_dim() const override { return spec_.cols; }
  std::size_t out_dim() const override { return spec_.rows; }
  Vec forward(std::span<const double> x, const BlockContext& ctx = {}) const override;
  Vec backward(std::span<const double> x, std::span<const double> g,
               const BlockContext& ctx = {}) override;
  const FixedLinearSpec& spec() const { return spec_; }

 private:
  FixedLinearSpec spec_;
  FixedLinearSpec spec_t_;
};

std::unique_ptr<DiffBlock> fixed_linear(FixedLinearSpec spec);

/// Stacked natural-order pilot bins for an OFDM symbol (zero elsewhere).
Vec pilot_bins(std::size_t symbol);

/// Reassembly onto the full grid plus the pilot bins, whose polarity
/// follows the OFDM symbol in the context.
class ReassembleBlock : public DiffBlock {
 public:
  ReassembleBlock(std::vector<int> subcarriers, bool pilots);
  std::string name() const override { return "reassemble"; }
  std::size_t in_dim() const override { return spec_.cols; }
  std::size_t out_dim() const override { return spec_.rows; }
  Vec forward(std::span<const double> x, const BlockContext& ctx = {}) const override;
  Vec backward(std::span<const double> x, std::span<const double> g,
               const BlockContext& ctx = {}) override;
  const FixedLinearSpec& spec() const { return spec_; }
  bool pilots() const { return pilots_; }

 private:
  bool pilots_;
  FixedLinearSpec spec_;
  FixedLinearSpec spec_t_;
};

struct QuantizerParams {
  CVec scales;  // one per target subcarrier
  double tau = 1.0;
};

struct SoftQuantized {
  CVec symbols;
  Vec weights;  // |z| x M, row per value
};

/// softmax(-|s_k z_k - c_j|^2 / (tau k_mod^2)) over the points.
SoftQuantized soft_quantize(std::span<const cd> z, const wifi::Constellation& c,
                            const QuantizerParams& p);
/// argmin_j |s_k z_k - c_j|^2, ties to the lowest index.
std::vector<std::uint32_t> hard_quantize(std::span<const cd> z, const wifi::Constellation& c,
                                         const QuantizerParams& p);

/// Per-symbol max-abs normalisation: 1 / max_k |z_k| (1 for an all-zero block).
double block_gain(std::span<const cd> z);

/// Max-abs normalisation followed by the soft quantizer. Input: stacked
/// target bins (2m). Output: one-hot weights, m rows of M.
class SoftQuantizerBlock : public DiffBlock {
 public:
  SoftQuantizerBlock(wifi::Constellation c, std::size_t m, double tau, bool train_tau);
  std::string name() const override { return "soft_quantizer"; }
  std::size_t in_dim() const override { return 2 * m_; }
  std::size_t out_dim() const override { return m_ * c_.size(); }
  Vec forward(std::span<const double> x, const BlockContext& ctx = {}) const override;
  Vec backward(std::span<const double> x, std::span<const double> g,
               const BlockContext& ctx = {}) override;
  std::vector<Param*> params() override { return {&scales_, &tau_}; }

  /// Same layout with exact one-hot rows at the hard decisions.
  Vec hard_forward(std::span<const double> x) const;
  std::vector<std::uint32_t> hard_indices(std::span<const double> x) const;

  QuantizerParams quantizer_params() const;
  void set_quantizer_params(const QuantizerParams& p);
  Param& scales() { return scales_; }
  Param& tau() { return tau_; }
  const wifi::Constellation& constellation() const { return c_; }

 private:
  wifi::Constellation c_;
  std::size_t m_;
  Param scales_;
  Param tau_;
};

/// Identity stand-in for the quantizer path (bypass configuration).
class IdentityBlock : public DiffBlock {
 public:
  explicit IdentityBlock(std::size_t n) : n_(n) {}
  std::string name() const override { return "identity"; }
  std::size_t in_dim() const override { return n_; }
  std::size_t out_dim() const override { return n_; }
  Vec forward(std::span<const double> x, const BlockContext& = {}) const override {
    return Vec(x.begin(), x.end());
  }
  Vec backward(std::span<const double>, std::span<const double> g, const BlockContext& = {}) override {
    return Vec(g.begin(), g.end());
  }

 private:
  std::size_t n_;
};

class Sequential : public DiffBlock {
 public:
  void add(std::unique_ptr<DiffBlock> b);
  std::string name() const override { return "autoencoder"; }
  std::size_t in_dim() const override;
  std::size_t out_dim() const override;
  Vec forward(std::span<const double> x, const BlockContext& ctx = {}) const override;
  Vec backward(std::span<const double> x, std::span<const double> g,
               const BlockContext& ctx = {}) override;
  std::vector<Param*> params() override;

  std::size_t size() const { return blocks_.size(); }
  DiffBlock& at(std::size_t i) { return *blocks_.at(i); }
  const DiffBlock& at(std::size_t i) const { return *blocks_.at(i); }

 private:
  std::vector<std::unique_ptr<DiffBlock>> blocks_;
};

enum class EmulationMode { analog, digital };
std::string to_string(EmulationMode m);
EmulationMode parse_emulation_mode(std::string_view s);

struct ModelConfig {
  wifi::Modulation modulation = wifi::Modulation::qam64;
  std::vector<int> subcarriers;
  EmulationMode mode = EmulationMode::analog;
  double tau = 1.0;
  bool train_tau = false;
  /// Replace the quantizer by the identity and skip pilot insertion.
  bool bypass_quantizer = false;
};

class EmulationModel {
 public:
  explicit EmulationModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const wifi::Constellation& constellation() const { return cons_; }
  Sequential& stack() { return stack_; }
  const Sequential& stack() const { return stack_; }
  /// Index of the quantizer in the stack.
  static constexpr std::size_t kQuantizerIndex = 3;
  SoftQuantizerBlock& quantizer();
  const SoftQuantizerBlock& quantizer() const;

  QuantizerParams quantizer_params() const { return quantizer().quantizer_params(); }
  void set_quantizer_params(const QuantizerParams& p) { quantizer().set_quantizer_params(p); }

  /// Target bins (stacked) of one 80-sample block.
  Vec front_end(std::span<const double> block80) const;
  /// Whole-signal pass, zero-padding to 80-sample blocks. `hard` uses hard
  /// decisions at the quantizer.
  dsp::ComplexSignal forward(const dsp::ComplexSignal& target, bool hard) const;

  /// What the output is scored against: the zero-padded target, rescaled
  /// to the mean power of an 802.11 data field (52 unit-power bins) unless
  /// the quantizer is bypassed.
  CVec reference(const dsp::ComplexSignal& target) const;

 private:
  ModelConfig cfg_;
  wifi::Constellation cons_;
  Sequential stack_;
};

EmulationModel build_autoencoder(const ModelConfig& cfg);

std::size_t block_count(std::size_t samples);
/// Stacked 80-sample block `b` of the zero-padded signal.
Vec signal_block(const dsp::ComplexSignal& sig, std::size_t b);

/// Analog: mean |u - v|^2. Digital: mean squared wrapped phase difference.
/// When `grad` is given it receives dL/du as Re + j Im.
double loss(std::span<const cd> u, std::span<const cd> v, EmulationMode mode, CVec* grad = nullptr);

/// Loss of the model output against `target`; zeroes and fills the
/// parameter gradients. The fast path reuses cached front-end bins and a
/// fused back end and must agree with the generic path.
double loss_and_gradient(EmulationModel& model, const dsp::ComplexSignal& target, bool fast);

struct TrainConfig {
  std::size_t epochs = 150;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double tau_decay = 0.95;
  double tau_floor = 0.05;
  std::size_t patience = 25;
};

struct TrainResult {
  std::vector<double> loss_history;       // soft loss per epoch
  std::vector<double> hard_loss_history;  // hard loss after each epoch's step
  std::vector<double> best_history;       // best hard loss so far
  double initial_hard_loss = 0.0;
  double best_hard_loss = 0.0;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  std::size_t epochs_run = 0;
};

TrainResult train(EmulationModel& model, const dsp::ComplexSignal& target, const TrainConfig& cfg);

/// Hard decisions per 80-sample block on the target subcarriers.
solver::IndexGrid infer_symbols(const EmulationModel& model, const dsp::ComplexSignal& target);

/// Max relative error of the analytic backward pass against central
/// differences with step h, over inputs and trainable-or-not parameters.
/// Errors are relative to the largest analytic gradient entry.
double grad_check(DiffBlock& block, dsp::Rng& rng, double h = 1e-5, const BlockContext& ctx = {});

struct GradCheckEntry {
  std::string block;
  double max_rel_error = 0.0;
};
/// Every block of the model stack plus the stack as a whole.
std::vector<GradCheckEntry> grad_check_model(const ModelConfig& cfg, dsp::Rng& rng);

void save_model(const EmulationModel& model, const std::filesystem::path& path);
EmulationModel load_model(const std::filesystem::path& path);
std::string model_to_json(const EmulationModel& model);
EmulationModel model_from_json(const std::string& text);

}  // namespace ctc::nn
