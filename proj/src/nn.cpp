#include "ctc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace ctc::nn {

namespace {

constexpr std::size_t kBlock = wifi::kSymbolLength;
constexpr std::size_t kN = dsp::kFftSize;

void check_dim(std::size_t got, std::size_t want, const std::string& who) {
  if (got != want) {
    throw DimensionError(who + ": expected " + std::to_string(want) + " values, got " +
                         std::to_string(got));
  }
}

cd twiddle(std::size_t m) {
  const double a = -2.0 * kPi * static_cast<double>(m % kN) / static_cast<double>(kN);
  return {std::cos(a), std::sin(a)};
}

int polarity_for(std::size_t symbol) {
  return wifi::pilot_polarity(wifi::polarity_index_for(symbol));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Vec stack(std::span<const cd> z) {
  Vec x(2 * z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    x[i] = z[i].real();
    x[z.size() + i] = z[i].imag();
  }
  return x;
}

CVec unstack(std::span<const double> x) {
  if (x.size() % 2 != 0) throw DimensionError("unstack: odd length");
  const std::size_t n = x.size() / 2;
  CVec z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = {x[i], x[n + i]};
  return z;
}

// ---- fixed linear specs ----

FixedLinearSpec FixedLinearSpec::identity(std::size_t n) {
  FixedLinearSpec s{"identity", n, n, Vec(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) s.w[i * n + i] = 1.0;
  return s;
}

FixedLinearSpec FixedLinearSpec::from_complex(std::string kind, std::size_t rows, std::size_t cols,
                                              std::span<const cd> a) {
  check_dim(a.size(), rows * cols, "FixedLinearSpec::from_complex");
  FixedLinearSpec s{std::move(kind), 2 * rows, 2 * cols, Vec(4 * rows * cols, 0.0)};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const cd v = a[r * cols + c];
      s.w[r * s.cols + c] = v.real();
      s.w[r * s.cols + cols + c] = -v.imag();
      s.w[(rows + r) * s.cols + c] = v.imag();
      s.w[(rows + r) * s.cols + cols + c] = v.real();
    }
  }
  return s;
}

FixedLinearSpec FixedLinearSpec::dft() {
  CVec a(kN * kN);
  for (std::size_t k = 0; k < kN; ++k) {
    for (std::size_t n = 0; n < kN; ++n) a[k * kN + n] = twiddle(n * k);
  }
  return from_complex("dft", kN, kN, a);
}

FixedLinearSpec FixedLinearSpec::idft() {
  CVec a(kN * kN);
  for (std::size_t n = 0; n < kN; ++n) {
    for (std::size_t k = 0; k < kN; ++k) a[n * kN + k] = std::conj(twiddle(n * k)) / static_cast<double>(kN);
  }
  return from_complex("idft", kN, kN, a);
}

FixedLinearSpec FixedLinearSpec::cp_add() {
  CVec a(kBlock * kN, 0.0);
  for (std::size_t r = 0; r < kBlock; ++r) {
    const std::size_t c = r < wifi::kCpLength ? kN - wifi::kCpLength + r : r - wifi::kCpLength;
    a[r * kN + c] = 1.0;
  }
  return from_complex("cp_add", kBlock, kN, a);
}

FixedLinearSpec FixedLinearSpec::cp_remove() {
  CVec a(kN * kBlock, 0.0);
  for (std::size_t r = 0; r < kN; ++r) a[r * kBlock + r + wifi::kCpLength] = 1.0;
  return from_complex("cp_remove", kN, kBlock, a);
}

FixedLinearSpec FixedLinearSpec::selection(std::span<const int> subcarriers) {
  const std::size_t m = subcarriers.size();
  CVec a(m * kN, 0.0);
  for (std::size_t j = 0; j < m; ++j) a[j * kN + dsp::FreqGrid::dft_index(subcarriers[j])] = 1.0;
  return from_complex("select", m, kN, a);
}

FixedLinearSpec FixedLinearSpec::constellation_map(const wifi::Constellation& c, std::size_t m) {
  const std::size_t M = c.size();
  FixedLinearSpec s{"constellation_map", 2 * m, m * M, Vec(2 * m * m * M, 0.0)};
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t j = 0; j < M; ++j) {
      s.w[k * s.cols + k * M + j] = c.point(j).real();
      s.w[(m + k) * s.cols + k * M + j] = c.point(j).imag();
    }
  }
  return s;
}

FixedLinearSpec FixedLinearSpec::reassemble(std::span<const int> subcarriers) {
  const std::size_t m = subcarriers.size();
  FixedLinearSpec s{"reassemble", 2 * kN, 2 * m, Vec(2 * kN * 2 * m, 0.0)};
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t d = dsp::FreqGrid::dft_index(subcarriers[k]);
    s.w[d * s.cols + k] = 1.0;
    s.w[(kN + d) * s.cols + m + k] = 1.0;
  }
  return s;
}

FixedLinearSpec FixedLinearSpec::transpose() const {
  FixedLinearSpec t{kind + "^T", cols, rows, Vec(w.size())};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t.w[c * rows + r] = w[r * cols + c];
  }
  return t;
}

FixedLinearSpec FixedLinearSpec::then(const FixedLinearSpec& next) const {
  if (next.cols != rows) throw DimensionError("FixedLinearSpec::then: inner dimensions differ");
  FixedLinearSpec out{kind + ">" + next.kind, next.rows, cols, Vec(next.rows * cols, 0.0)};
  for (std::size_t r = 0; r < next.rows; ++r) {
    for (std::size_t k = 0; k < rows; ++k) {
      const double a = next.w[r * next.cols + k];
      if (a == 0.0) continue;
      for (std::size_t c = 0; c < cols; ++c) out.w[r * cols + c] += a * w[k * cols + c];
    }
  }
  return out;
}

Vec FixedLinearSpec::apply(std::span<const double> x) const {
  check_dim(x.size(), cols, kind);
  Vec y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
  return y;
}

FixedLinear::FixedLinear(FixedLinearSpec spec) : spec_(std::move(spec)) {
  check_dim(spec_.w.size(), spec_.rows * spec_.cols, "FixedLinear");
  spec_t_ = spec_.transpose();
}

Vec FixedLinear::forward(std::span<const double> x, const BlockContext&) const { return spec_.apply(x); }

Vec FixedLinear::backward(std::span<const double> x, std::span<const double> g, const BlockContext&) {
  check_dim(x.size(), spec_.cols, spec_.kind);
  return spec_t_.apply(g);
}

std::unique_ptr<DiffBlock> fixed_linear(FixedLinearSpec spec) {
  return std::make_unique<FixedLinear>(std::move(spec));
}

Vec pilot_bins(std::size_t symbol) {
  Vec x(2 * kN, 0.0);
  const double p = polarity_for(symbol);
  for (std::size_t i = 0; i < wifi::kPilotSubcarriers.size(); ++i) {
    x[dsp::FreqGrid::dft_index(wifi::kPilotSubcarriers[i])] = wifi::kPilotValues[i] * p;
  }
  return x;
}

ReassembleBlock::ReassembleBlock(std::vector<int> subcarriers, bool pilots)
    : pilots_(pilots), spec_(FixedLinearSpec::reassemble(subcarriers)), spec_t_(spec_.transpose()) {}

Vec ReassembleBlock::forward(std::span<const double> x, const BlockContext& ctx) const {
  Vec y = spec_.apply(x);
  if (pilots_) {
    const Vec p = pilot_bins(ctx.symbol);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += p[i];
  }
  return y;
}

Vec ReassembleBlock::backward(std::span<const double> x, std::span<const double> g, const BlockContext&) {
  check_dim(x.size(), spec_.cols, "reassemble");
  return spec_t_.apply(g);
}

// ---- quantizer ----

namespace {

void check_params(std::size_t n, const QuantizerParams& p) {
  if (p.scales.size() != n) {
    throw DimensionError("quantizer: expected " + std::to_string(n) + " scales, got " +
                         std::to_string(p.scales.size()));
  }
  if (!(p.tau > 0.0) || !std::isfinite(p.tau)) throw DomainError("quantizer: tau must be positive");
}

// Softmax of -d_j / t, written into p. Returns nothing; d must be filled.
void softmax_neg(std::span<const double> d, double t, std::span<double> p) {
  double dmin = std::numeric_limits<double>::infinity();
  for (double v : d) dmin = std::min(dmin, v);
  double sum = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    p[j] = std::exp(-(d[j] - dmin) / t);
    sum += p[j];
  }
  for (auto& v : p) v /= sum;
}

}  // namespace

SoftQuantized soft_quantize(std::span<const cd> z, const wifi::Constellation& c, const QuantizerParams& p) {
  check_params(z.size(), p);
  const std::size_t M = c.size();
  const double t = p.tau * c.k_mod() * c.k_mod();
  SoftQuantized out;
  out.symbols.resize(z.size());
  out.weights.resize(z.size() * M);
  Vec d(M);
  for (std::size_t k = 0; k < z.size(); ++k) {
    const cd w = p.scales[k] * z[k];
    for (std::size_t j = 0; j < M; ++j) d[j] = std::norm(w - c.point(j));
    std::span<double> pk(out.weights.data() + k * M, M);
    softmax_neg(d, t, pk);
    cd acc = 0.0;
    for (std::size_t j = 0; j < M; ++j) acc += pk[j] * c.point(j);
    out.symbols[k] = acc;
  }
  return out;
}

std::vector<std::uint32_t> hard_quantize(std::span<const cd> z, const wifi::Constellation& c,
                                         const QuantizerParams& p) {
  check_params(z.size(), p);
  std::vector<std::uint32_t> idx(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    idx[k] = static_cast<std::uint32_t>(c.nearest(p.scales[k] * z[k]));
  }
  return idx;
}

namespace {

struct GainInfo {
  double gain = 1.0;
  double peak = 0.0;
  std::size_t arg = 0;  // subcarrier holding the peak
};

GainInfo gain_of(std::span<const double> x) {
  GainInfo gi;
  const std::size_t m = x.size() / 2;
  for (std::size_t k = 0; k < m; ++k) {
    const double a = std::hypot(x[k], x[m + k]);
    if (a > gi.peak) {
      gi.peak = a;
      gi.arg = k;
    }
  }
  gi.gain = gi.peak > 0.0 ? 1.0 / gi.peak : 1.0;
  return gi;
}

}  // namespace

double block_gain(std::span<const cd> z) { return gain_of(stack(z)).gain; }

SoftQuantizerBlock::SoftQuantizerBlock(wifi::Constellation c, std::size_t m, double tau, bool train_tau)
    : c_(std::move(c)), m_(m) {
  if (m == 0) throw ConfigError("quantizer needs at least one subcarrier");
  if (!(tau > 0.0)) throw DomainError("quantizer: tau must be positive");
  scales_.name = "scales";
  scales_.value.assign(2 * m, 0.0);
  std::fill(scales_.value.begin(), scales_.value.begin() + static_cast<std::ptrdiff_t>(m), 1.0);
  scales_.grad.assign(2 * m, 0.0);
  tau_.name = "tau";
  tau_.value = {tau};
  tau_.grad = {0.0};
  tau_.trainable = train_tau;
}

QuantizerParams SoftQuantizerBlock::quantizer_params() const {
  QuantizerParams p;
  p.scales = unstack(scales_.value);
  p.tau = tau_.value[0];
  return p;
}

void SoftQuantizerBlock::set_quantizer_params(const QuantizerParams& p) {
  check_params(m_, p);
  scales_.value = stack(p.scales);
  tau_.value[0] = p.tau;
}

Vec SoftQuantizerBlock::forward(std::span<const double> x, const BlockContext&) const {
  check_dim(x.size(), 2 * m_, "soft_quantizer");
  const std::size_t M = c_.size();
  const GainInfo gi = gain_of(x);
  const double t = tau_.value[0] * c_.k_mod() * c_.k_mod();
  Vec out(m_ * M);
  Vec d(M);
  for (std::size_t k = 0; k < m_; ++k) {
    const cd s(scales_.value[k], scales_.value[m_ + k]);
    const cd w = s * gi.gain * cd(x[k], x[m_ + k]);
    for (std::size_t j = 0; j < M; ++j) d[j] = std::norm(w - c_.point(j));
    softmax_neg(d, t, std::span<double>(out.data() + k * M, M));
  }
  return out;
}

Vec SoftQuantizerBlock::backward(std::span<const double> x, std::span<const double> g,
                                 const BlockContext&) {
  check_dim(x.size(), 2 * m_, "soft_quantizer");
  const std::size_t M = c_.size();
  check_dim(g.size(), m_ * M, "soft_quantizer");
  const GainInfo gi = gain_of(x);
  const double gain = gi.gain;
  const double tau = tau_.value[0];
  const double t = tau * c_.k_mod() * c_.k_mod();

  Vec dx(2 * m_, 0.0);
  double dgain = 0.0;
  Vec d(M), p(M);
  for (std::size_t k = 0; k < m_; ++k) {
    const cd s(scales_.value[k], scales_.value[m_ + k]);
    const cd z(x[k], x[m_ + k]);
    const cd w = s * gain * z;
    for (std::size_t j = 0; j < M; ++j) d[j] = std::norm(w - c_.point(j));
    softmax_neg(d, t, p);

    double mean = 0.0;
    for (std::size_t j = 0; j < M; ++j) mean += p[j] * g[k * M + j];
    cd wbar = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      const double delta = p[j] * (g[k * M + j] - mean);  // dL/dlogit
      tau_.grad[0] += delta * d[j] / (tau * t);
      wbar += 2.0 * (-delta / t) * (w - c_.point(j));
    }
    const cd dz = std::conj(s * gain) * wbar;
    dx[k] += dz.real();
    dx[m_ + k] += dz.imag();
    const cd ds = gain * std::conj(z) * wbar;
    scales_.grad[k] += ds.real();
    scales_.grad[m_ + k] += ds.imag();
    dgain += (std::conj(s * z) * wbar).real();
  }
  if (gi.peak > 0.0) {
    // gain = 1/|z_arg|
    const double dpeak = -dgain / (gi.peak * gi.peak);
    dx[gi.arg] += dpeak * x[gi.arg] / gi.peak;
    dx[m_ + gi.arg] += dpeak * x[m_ + gi.arg] / gi.peak;
  }
  return dx;
}

std::vector<std::uint32_t> SoftQuantizerBlock::hard_indices(std::span<const double> x) const {
  check_dim(x.size(), 2 * m_, "soft_quantizer");
  const GainInfo gi = gain_of(x);
  std::vector<std::uint32_t> idx(m_);
  for (std::size_t k = 0; k < m_; ++k) {
    const cd s(scales_.value[k], scales_.value[m_ + k]);
    idx[k] = static_cast<std::uint32_t>(c_.nearest(s * gi.gain * cd(x[k], x[m_ + k])));
  }
  return idx;
}

Vec SoftQuantizerBlock::hard_forward(std::span<const double> x) const {
  const auto idx = hard_indices(x);
  const std::size_t M = c_.size();
  Vec out(m_ * M, 0.0);
  for (std::size_t k = 0; k < m_; ++k) out[k * M + idx[k]] = 1.0;
  return out;
}

// ---- sequential ----

void Sequential::add(std::unique_ptr<DiffBlock> b) {
  if (!blocks_.empty() && blocks_.back()->out_dim() != b->in_dim()) {
    throw DimensionError("Sequential: " + blocks_.back()->name() + " emits " +
                         std::to_string(blocks_.back()->out_dim()) + " values but " + b->name() +
                         " takes " + std::to_string(b->in_dim()));
  }
  blocks_.push_back(std::move(b));
}

std::size_t Sequential::in_dim() const { return blocks_.empty() ? 0 : blocks_.front()->in_dim(); }
std::size_t Sequential::out_dim() const { return blocks_.empty() ? 0 : blocks_.back()->out_dim(); }

Vec Sequential::forward(std::span<const double> x, const BlockContext& ctx) const {
  Vec cur(x.begin(), x.end());
  for (const auto& b : blocks_) cur = b->forward(cur, ctx);
  return cur;
}

Vec Sequential::backward(std::span<const double> x, std::span<const double> g, const BlockContext& ctx) {
  std::vector<Vec> inputs;
  inputs.reserve(blocks_.size());
  Vec cur(x.begin(), x.end());
  for (const auto& b : blocks_) {
    inputs.push_back(cur);
    cur = b->forward(cur, ctx);
  }
  Vec grad(g.begin(), g.end());
  for (std::size_t i = blocks_.size(); i-- > 0;) grad = blocks_[i]->backward(inputs[i], grad, ctx);
  return grad;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& b : blocks_) {
    for (auto* p : b->params()) out.push_back(p);
  }
  return out;
}

// ---- model ----

std::string to_string(EmulationMode m) { return m == EmulationMode::analog ? "analog" : "digital"; }

EmulationMode parse_emulation_mode(std::string_view s) {
  if (s == "analog") return EmulationMode::analog;
  if (s == "digital") return EmulationMode::digital;
  throw ConfigError("unknown emulation mode " + std::string(s));
}

EmulationModel::EmulationModel(ModelConfig cfg)
    : cfg_(std::move(cfg)), cons_(wifi::Constellation::make(cfg_.modulation)) {
  if (cfg_.bypass_quantizer) {
    if (cfg_.subcarriers.empty()) {
      for (int sc = -32; sc < 32; ++sc) cfg_.subcarriers.push_back(sc);
    }
  } else {
    if (cfg_.subcarriers.empty()) throw ConfigError("target subcarrier set is empty");
    for (int sc : cfg_.subcarriers) {
      if (!wifi::is_data(sc)) {
        throw ConfigError("target subcarrier " + std::to_string(sc) + " is not a data subcarrier");
      }
    }
  }
  std::vector<int> seen = cfg_.subcarriers;
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
    throw ConfigError("target subcarrier set has duplicates");
  }
  const std::size_t m = cfg_.subcarriers.size();
  stack_.add(fixed_linear(FixedLinearSpec::cp_remove()));
  stack_.add(fixed_linear(FixedLinearSpec::dft()));
  stack_.add(fixed_linear(FixedLinearSpec::selection(cfg_.subcarriers)));
  if (cfg_.bypass_quantizer) {
    stack_.add(std::make_unique<IdentityBlock>(2 * m));
    stack_.add(std::make_unique<ReassembleBlock>(cfg_.subcarriers, false));
  } else {
    stack_.add(std::make_unique<SoftQuantizerBlock>(cons_, m, cfg_.tau, cfg_.train_tau));
    stack_.add(fixed_linear(FixedLinearSpec::constellation_map(cons_, m)));
    stack_.add(std::make_unique<ReassembleBlock>(cfg_.subcarriers, true));
  }
  stack_.add(fixed_linear(FixedLinearSpec::idft()));
  stack_.add(fixed_linear(FixedLinearSpec::cp_add()));
}

SoftQuantizerBlock& EmulationModel::quantizer() {
  auto* q = dynamic_cast<SoftQuantizerBlock*>(&stack_.at(kQuantizerIndex));
  if (!q) throw ConfigError("model has no quantizer (bypass configuration)");
  return *q;
}

const SoftQuantizerBlock& EmulationModel::quantizer() const {
  const auto* q = dynamic_cast<const SoftQuantizerBlock*>(&stack_.at(kQuantizerIndex));
  if (!q) throw ConfigError("model has no quantizer (bypass configuration)");
  return *q;
}

Vec EmulationModel::front_end(std::span<const double> block80) const {
  Vec cur(block80.begin(), block80.end());
  for (std::size_t i = 0; i < kQuantizerIndex; ++i) cur = stack_.at(i).forward(cur);
  return cur;
}

EmulationModel build_autoencoder(const ModelConfig& cfg) { return EmulationModel(cfg); }

std::size_t block_count(std::size_t samples) { return (samples + kBlock - 1) / kBlock; }

Vec signal_block(const dsp::ComplexSignal& sig, std::size_t b) {
  CVec blk(kBlock, cd(0.0, 0.0));
  for (std::size_t n = 0; n < kBlock && b * kBlock + n < sig.size(); ++n) blk[n] = sig.samples[b * kBlock + n];
  return stack(blk);
}

dsp::ComplexSignal EmulationModel::forward(const dsp::ComplexSignal& target, bool hard) const {
  const std::size_t nb = block_count(target.size());
  dsp::ComplexSignal out;
  out.sample_rate_hz = target.sample_rate_hz;
  out.samples.reserve(nb * kBlock);
  for (std::size_t b = 0; b < nb; ++b) {
    const BlockContext ctx{b};
    const Vec x = signal_block(target, b);
    Vec y;
    if (hard && !cfg_.bypass_quantizer) {
      Vec cur = quantizer().hard_forward(front_end(x));
      for (std::size_t i = kQuantizerIndex + 1; i < stack_.size(); ++i) cur = stack_.at(i).forward(cur, ctx);
      y = std::move(cur);
    } else {
      y = stack_.forward(x, ctx);
    }
    const CVec z = unstack(y);
    out.samples.insert(out.samples.end(), z.begin(), z.end());
  }
  return out;
}

CVec EmulationModel::reference(const dsp::ComplexSignal& target) const {
  const std::size_t nb = block_count(target.size());
  CVec ref(nb * kBlock, cd(0.0, 0.0));
  std::copy(target.samples.begin(), target.samples.end(), ref.begin());
  if (cfg_.bypass_quantizer || ref.empty()) return ref;
  if (cfg_.mode == EmulationMode::digital) {
    // Phase is only worth matching on what the target subcarriers can carry.
    std::vector<int> band = cfg_.subcarriers;
    const auto sel = FixedLinearSpec::cp_remove()
                         .then(FixedLinearSpec::dft())
                         .then(FixedLinearSpec::selection(band))
                         .then(FixedLinearSpec::reassemble(band))
                         .then(FixedLinearSpec::idft())
                         .then(FixedLinearSpec::cp_add());
    for (std::size_t b = 0; b < nb; ++b) {
      const Vec y = sel.apply(nn::stack(std::span<const cd>(ref).subspan(b * kBlock, kBlock)));
      const CVec yc = unstack(y);
      std::copy(yc.begin(), yc.end(), ref.begin() + static_cast<std::ptrdiff_t>(b * kBlock));
    }
  }
  double p = 0.0;
  for (const auto& v : ref) p += std::norm(v);
  p /= static_cast<double>(ref.size());
  if (p <= 0.0) return ref;
  // A data field with 52 unit-power bins averages 52/64^2 per sample.
  const double k = std::sqrt((static_cast<double>(wifi::kDataSubcarriers + wifi::kPilotSubcarriers.size()) /
                              static_cast<double>(kN * kN)) / p);
  for (auto& v : ref) v *= k;
  return ref;
}

// ---- loss ----

double loss(std::span<const cd> u, std::span<const cd> v, EmulationMode mode, CVec* grad) {
  if (u.size() != v.size()) {
    throw DimensionError("loss: length mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  }
  if (grad) grad->assign(u.size(), cd(0.0, 0.0));
  if (u.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(u.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (mode == EmulationMode::analog) {
      const cd e = u[i] - v[i];
      acc += std::norm(e);
      if (grad) (*grad)[i] = 2.0 * inv_n * e;
    } else {
      const double d = std::arg(u[i] * std::conj(v[i]));
      acc += d * d;
      const double p = std::norm(u[i]);
      if (grad && p > 0.0) (*grad)[i] = 2.0 * inv_n * d * cd(-u[i].imag(), u[i].real()) / p;
    }
  }
  return acc * inv_n;
}

// ---- training ----

namespace {

// Frozen front end, the constellation map, and a fused back end
// (reassemble -> IDFT -> CP-add) plus the pilot waveform per polarity.
struct FastPath {
  std::vector<Vec> z;
  CVec target;
  FixedLinearSpec cmap, cmap_t, back, back_t;
  Vec pilot_plus, pilot_minus;

  FastPath(const EmulationModel& model, const dsp::ComplexSignal& sig) : target(model.reference(sig)) {
    const auto& cfg = model.config();
    const std::size_t nb = block_count(sig.size());
    z.reserve(nb);
    for (std::size_t b = 0; b < nb; ++b) z.push_back(model.front_end(signal_block(sig, b)));
    const auto tail = FixedLinearSpec::idft().then(FixedLinearSpec::cp_add());
    cmap = FixedLinearSpec::constellation_map(model.constellation(), cfg.subcarriers.size());
    cmap_t = cmap.transpose();
    back = FixedLinearSpec::reassemble(cfg.subcarriers).then(tail);
    back_t = back.transpose();
    std::size_t plus = 0, minus = 0;
    for (std::size_t b = 0; b < 127; ++b) {
      (polarity_for(b) > 0 ? plus : minus) = b;
    }
    pilot_plus = tail.apply(pilot_bins(plus));
    pilot_minus = tail.apply(pilot_bins(minus));
  }

  std::size_t blocks() const { return z.size(); }

  CVec output(const SoftQuantizerBlock& q, bool hard) const {
    CVec out;
    out.reserve(target.size());
    for (std::size_t b = 0; b < blocks(); ++b) {
      const Vec qo = hard ? q.hard_forward(z[b]) : q.forward(z[b]);
      Vec y = back.apply(cmap.apply(qo));
      const Vec& pil = polarity_for(b) > 0 ? pilot_plus : pilot_minus;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += pil[i];
      const CVec yc = unstack(y);
      out.insert(out.end(), yc.begin(), yc.end());
    }
    return out;
  }

  double loss_and_grad(SoftQuantizerBlock& q, EmulationMode mode) const {
    for (auto* p : q.params()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    const CVec out = output(q, false);
    CVec g;
    const double l = loss(out, target, mode, &g);
    for (std::size_t b = 0; b < blocks(); ++b) {
      const Vec gy = stack(std::span<const cd>(g).subspan(b * kBlock, kBlock));
      q.backward(z[b], cmap_t.apply(back_t.apply(gy)));
    }
    return l;
  }

  double hard_loss(const SoftQuantizerBlock& q, EmulationMode mode) const {
    return loss(output(q, true), target, mode);
  }
};

struct Adam {
  std::vector<Vec> m, v;
  std::size_t t = 0;
};

}  // namespace

double loss_and_gradient(EmulationModel& model, const dsp::ComplexSignal& target, bool fast) {
  if (fast) return FastPath(model, target).loss_and_grad(model.quantizer(), model.config().mode);
  auto params = model.stack().params();
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  const std::size_t nb = block_count(target.size());
  const CVec ref = model.reference(target);
  const dsp::ComplexSignal out = model.forward(target, false);
  CVec g;
  const double l = loss(out.samples, ref, model.config().mode, &g);
  for (std::size_t b = 0; b < nb; ++b) {
    const Vec gy = stack(std::span<const cd>(g).subspan(b * kBlock, kBlock));
    model.stack().backward(signal_block(target, b), gy, BlockContext{b});
  }
  return l;
}

TrainResult train(EmulationModel& model, const dsp::ComplexSignal& target, const TrainConfig& cfg) {
  if (target.size() == 0 || target.size() % kBlock != 0) {
    throw DimensionError("train: target length must be a positive multiple of 80 samples");
  }
  if (!(cfg.lr > 0.0) || !(cfg.tau_floor > 0.0)) throw ConfigError("train: lr and tau floor must be positive");
  SoftQuantizerBlock& q = model.quantizer();
  const EmulationMode mode = model.config().mode;
  const FastPath fp(model, target);

  std::vector<Param*> params;
  for (auto* p : q.params()) {
    if (p->trainable) params.push_back(p);
  }
  Adam adam;
  for (auto* p : params) {
    adam.m.emplace_back(p->value.size(), 0.0);
    adam.v.emplace_back(p->value.size(), 0.0);
  }

  TrainResult res;
  const double tau0 = q.tau().value[0];
  const bool anneal = !q.tau().trainable;
  res.initial_hard_loss = fp.hard_loss(q, mode);
  res.best_hard_loss = res.initial_hard_loss;
  QuantizerParams best = q.quantizer_params();
  std::size_t since_best = 0;

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (anneal) q.tau().value[0] = std::max(cfg.tau_floor, tau0 * std::pow(cfg.tau_decay, static_cast<double>(e)));
    const double l = fp.loss_and_grad(q, mode);
    if (!std::isfinite(l)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(e) + " (tau " +
                          std::to_string(q.tau().value[0]) + ")");
    }
    ++adam.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double gk = p.grad[k];
        if (!std::isfinite(gk)) throw TrainingError("non-finite gradient in " + p.name + " at epoch " + std::to_string(e));
        adam.m[i][k] = cfg.beta1 * adam.m[i][k] + (1.0 - cfg.beta1) * gk;
        adam.v[i][k] = cfg.beta2 * adam.v[i][k] + (1.0 - cfg.beta2) * gk * gk;
        p.value[k] -= cfg.lr * (adam.m[i][k] / bc1) / (std::sqrt(adam.v[i][k] / bc2) + cfg.eps);
      }
    }
    if (q.tau().trainable) q.tau().value[0] = std::max(q.tau().value[0], cfg.tau_floor);

    const double hl = fp.hard_loss(q, mode);
    res.loss_history.push_back(l);
    res.hard_loss_history.push_back(hl);
    res.epochs_run = e + 1;
    if (hl < res.best_hard_loss) {
      res.best_hard_loss = hl;
      res.best_epoch = e + 1;
      best = q.quantizer_params();
      since_best = 0;
    } else {
      ++since_best;
    }
    res.best_history.push_back(res.best_hard_loss);
    const bool tau_settled = !anneal || q.tau().value[0] <= cfg.tau_floor;
    if (tau_settled && since_best >= cfg.patience) break;
  }
  q.set_quantizer_params(best);
  return res;
}

solver::IndexGrid infer_symbols(const EmulationModel& model, const dsp::ComplexSignal& target) {
  const auto& q = model.quantizer();
  solver::IndexGrid g;
  g.n_symbols = block_count(target.size());
  g.subcarriers = model.config().subcarriers;
  const std::size_t m = g.subcarriers.size();
  g.index.reserve(g.n_symbols * m);
  g.energy.reserve(g.n_symbols * m);
  for (std::size_t b = 0; b < g.n_symbols; ++b) {
    const Vec z = model.front_end(signal_block(target, b));
    const auto idx = q.hard_indices(z);
    g.index.insert(g.index.end(), idx.begin(), idx.end());
    for (std::size_t k = 0; k < m; ++k) g.energy.push_back(z[k] * z[k] + z[m + k] * z[m + k]);
  }
  return g;
}

// ---- gradient check ----

double grad_check(DiffBlock& block, dsp::Rng& rng, double h, const BlockContext& ctx) {
  Vec x(block.in_dim());
  // Keep the two largest magnitudes apart so max-abs style kinks stay
  // further than h from the probe.
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (auto& v : x) v = rng.gaussian();
    Vec mags(x.size());
    std::transform(x.begin(), x.end(), mags.begin(), [](double v) { return std::abs(v); });
    std::sort(mags.begin(), mags.end(), std::greater<>());
    const std::size_t half = x.size() / 2;
    Vec pairs(half);
    for (std::size_t i = 0; i < half; ++i) pairs[i] = std::hypot(x[i], x[half + i]);
    std::sort(pairs.begin(), pairs.end(), std::greater<>());
    const bool pairs_ok = pairs.size() < 2 || pairs[0] - pairs[1] > 1e3 * h;
    if ((mags.size() < 2 || mags[0] - mags[1] > 1e3 * h) && pairs_ok) break;
  }
  Vec g(block.out_dim());
  for (auto& v : g) v = rng.gaussian();

  auto params = block.params();
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  const Vec ana_x = block.backward(x, g, ctx);
  std::vector<Vec> ana_p;
  for (auto* p : params) ana_p.push_back(p->grad);

  auto objective = [&](std::span<const double> xin) { return dot(g, block.forward(xin, ctx)); };

  double scale = 0.0;
  for (double v : ana_x) scale = std::max(scale, std::abs(v));
  for (const auto& ap : ana_p) {
    for (double v : ap) scale = std::max(scale, std::abs(v));
  }
  scale = std::max(scale, 1e-12);

  double worst = 0.0;
  Vec xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = objective(xp);
    xp[i] = x[i] - h;
    const double fm = objective(xp);
    xp[i] = x[i];
    worst = std::max(worst, std::abs((fp - fm) / (2.0 * h) - ana_x[i]) / scale);
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& val = params[pi]->value;
    for (std::size_t k = 0; k < val.size(); ++k) {
      const double keep = val[k];
      val[k] = keep + h;
      const double fp = objective(x);
      val[k] = keep - h;
      const double fm = objective(x);
      val[k] = keep;
      worst = std::max(worst, std::abs((fp - fm) / (2.0 * h) - ana_p[pi][k]) / scale);
    }
  }
  return worst;
}

std::vector<GradCheckEntry> grad_check_model(const ModelConfig& cfg, dsp::Rng& rng) {
  EmulationModel model(cfg);
  if (!cfg.bypass_quantizer) {
    QuantizerParams p = model.quantizer_params();
    for (auto& s : p.scales) s = cd(1.0 + 0.2 * rng.gaussian(), 0.2 * rng.gaussian());
    model.set_quantizer_params(p);
  }
  std::vector<GradCheckEntry> out;
  const BlockContext ctx{0};
  for (std::size_t i = 0; i < model.stack().size(); ++i) {
    auto& b = model.stack().at(i);
    out.push_back({b.name(), grad_check(b, rng, 1e-5, ctx)});
  }
  out.push_back({"autoencoder", grad_check(model.stack(), rng, 1e-5, ctx)});
  return out;
}

// ---- persistence ----

namespace {
constexpr const char* kModelFormat = "ctc-emulation-model";
constexpr int kModelVersion = 1;
}  // namespace

std::string model_to_json(const EmulationModel& model) {
  using nlohmann::json;
  const auto& cfg = model.config();
  const QuantizerParams p = model.quantizer_params();
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["mode"] = to_string(cfg.mode);
  j["constellation"] = wifi::to_string(cfg.modulation);
  j["subcarriers"] = cfg.subcarriers;
  j["tau"] = p.tau;
  j["train_tau"] = cfg.train_tau;
  json scales = json::array();
  for (const auto& s : p.scales) scales.push_back({s.real(), s.imag()});
  j["scales"] = scales;
  return j.dump(2);
}

EmulationModel model_from_json(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw ConfigError("model file has wrong format tag");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) throw ConfigError("unsupported model version " + std::to_string(version));
    ModelConfig cfg;
    cfg.mode = parse_emulation_mode(j.at("mode").get<std::string>());
    cfg.modulation = wifi::parse_modulation(j.at("constellation").get<std::string>());
    cfg.subcarriers = j.at("subcarriers").get<std::vector<int>>();
    cfg.tau = j.at("tau").get<double>();
    cfg.train_tau = j.value("train_tau", false);
    EmulationModel model(cfg);
    QuantizerParams p;
    p.tau = cfg.tau;
    for (const auto& s : j.at("scales")) p.scales.emplace_back(s.at(0).get<double>(), s.at(1).get<double>());
    model.set_quantizer_params(p);
    return model;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
}

void save_model(const EmulationModel& model, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << model_to_json(model) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

EmulationModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open model file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace ctc::nn
