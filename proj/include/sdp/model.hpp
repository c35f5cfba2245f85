#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "vocab.hpp"

namespace sdp {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t context_len = 64;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t d_ff() const { return 4 * d_model; }

  void validate() const {
    if (vocab_size == 0) throw InvalidConfig("vocab_size must be positive");
    if (context_len == 0) throw InvalidConfig("context_len must be positive");
    if (d_model == 0 || n_heads == 0) throw InvalidConfig("d_model and n_heads must be positive");
    if (d_model % n_heads != 0) {
      throw InvalidConfig("d_model (" + std::to_string(d_model) + ") is not divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (n_layers == 0) throw InvalidConfig("n_layers must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// A named matrix inside the flat parameter buffer, row-major [rows x cols].
struct TensorView {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool is_weight = false;  // drawn from N(0, 0.02); otherwise bias (0) or norm scale (1)
  bool is_scale = false;
  std::size_t size() const { return rows * cols; }
};

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

// Canonical parameter order: token embedding, positional embedding, each block
// (pre-attention norm, q/k/v/output projections, pre-MLP norm, MLP), final
// norm, output projection.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelConfig& c) {
    const std::size_t d = c.d_model, f = c.d_ff(), v = c.vocab_size, t = c.context_len;
    wte_ = add("wte", v, d, true);
    wpe_ = add("wpe", t, d, true);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string p = "h" + std::to_string(l) + ".";
      LayerOffsets o{};
      o.ln1_g = add(p + "ln1.g", 1, d, false, true);
      o.ln1_b = add(p + "ln1.b", 1, d);
      o.wq = add(p + "attn.wq", d, d, true);
      o.bq = add(p + "attn.bq", 1, d);
      o.wk = add(p + "attn.wk", d, d, true);
      o.bk = add(p + "attn.bk", 1, d);
      o.wv = add(p + "attn.wv", d, d, true);
      o.bv = add(p + "attn.bv", 1, d);
      o.wo = add(p + "attn.wo", d, d, true);
      o.bo = add(p + "attn.bo", 1, d);
      o.ln2_g = add(p + "ln2.g", 1, d, false, true);
      o.ln2_b = add(p + "ln2.b", 1, d);
      o.w1 = add(p + "mlp.w1", d, f, true);
      o.b1 = add(p + "mlp.b1", 1, f);
      o.w2 = add(p + "mlp.w2", f, d, true);
      o.b2 = add(p + "mlp.b2", 1, d);
      layers_.push_back(o);
    }
    lnf_g_ = add("lnf.g", 1, d, false, true);
    lnf_b_ = add("lnf.b", 1, d);
    wout_ = add("out.w", d, v, true);
    bout_ = add("out.b", 1, v);
  }

  std::size_t total() const { return total_; }
  const std::vector<TensorView>& tensors() const { return tensors_; }
  const std::vector<LayerOffsets>& layers() const { return layers_; }
  std::size_t wte() const { return wte_; }
  std::size_t wpe() const { return wpe_; }
  std::size_t lnf_g() const { return lnf_g_; }
  std::size_t lnf_b() const { return lnf_b_; }
  std::size_t wout() const { return wout_; }
  std::size_t bout() const { return bout_; }

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool weight = false, bool scale = false) {
    tensors_.push_back({std::move(name), total_, rows, cols, weight, scale});
    const std::size_t off = total_;
    total_ += rows * cols;
    return off;
  }

  std::vector<TensorView> tensors_;
  std::vector<LayerOffsets> layers_;
  std::size_t total_ = 0;
  std::size_t wte_ = 0, wpe_ = 0, lnf_g_ = 0, lnf_b_ = 0, wout_ = 0, bout_ = 0;
};

// Model weights theta as one flat double buffer in canonical order. Gradients
// use the same type, so optimizers and checks work coordinate-wise.
class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(const ModelConfig& config) : config_(config), layout_(config), data_(layout_.total(), 0.0) {}

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t count() const noexcept { return data_.size(); }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* at(std::size_t offset) noexcept { return data_.data() + offset; }
  const double* at(std::size_t offset) const noexcept { return data_.data() + offset; }

  const TensorView& tensor(std::string_view name) const {
    for (const auto& t : layout_.tensors()) {
      if (t.name == name) return t;
    }
    throw InvalidConfig("no parameter tensor named " + std::string(name));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  friend bool operator==(const Parameters& l, const Parameters& r) {
    return l.config_ == r.config_ && l.data_ == r.data_;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<double> data_;
};

inline Parameters init_params(const ModelConfig& config) {
  config.validate();
  Parameters p(config);
  Rng rng = Rng::stream(config.seed, 0x494e4954ULL);
  for (const auto& t : p.layout().tensors()) {
    double* w = p.at(t.offset);
    for (std::size_t i = 0; i < t.size(); ++i) {
      w[i] = t.is_weight ? rng.normal(0.0, 0.02) : (t.is_scale ? 1.0 : 0.0);
    }
  }
  return p;
}

// Per-position next-token log-probabilities, row t predicting the token after position t.
class LogProbTable {
 public:
  LogProbTable() = default;
  LogProbTable(std::size_t rows, std::size_t vocab) : rows_(rows), vocab_(vocab), data_(rows * vocab) {}
  std::size_t rows() const noexcept { return rows_; }
  std::size_t vocab() const noexcept { return vocab_; }
  std::span<const double> row(std::size_t t) const { return {data_.data() + t * vocab_, vocab_}; }
  std::span<double> row(std::size_t t) { return {data_.data() + t * vocab_, vocab_}; }
  double at(std::size_t t, TokenId id) const { return data_[t * vocab_ + static_cast<std::size_t>(id)]; }

 private:
  std::size_t rows_ = 0, vocab_ = 0;
  std::vector<double> data_;
};

// Token ids with per-position loss weights. A weight applies to predicting
// ids[t] from ids[0..t), so mask[0] must be zero.
struct MaskedSequence {
  TokenIds ids;
  std::vector<double> mask;

  double weight_sum() const {
    double s = 0.0;
    for (double m : mask) s += m;
    return s;
  }
};

namespace detail {

inline constexpr double kLnEps = 1e-5;

// y[T x N] = x[T x K] W[K x N] + b
inline void linear(const double* x, const double* w, const double* b, double* y, std::size_t T, std::size_t K,
                   std::size_t N) {
  for (std::size_t t = 0; t < T; ++t) {
    double* __restrict yr = y + t * N;
    for (std::size_t n = 0; n < N; ++n) yr[n] = b[n];
    const double* xr = x + t * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double xv = xr[k];
      const double* __restrict wr = w + k * N;
      for (std::size_t n = 0; n < N; ++n) yr[n] += xv * wr[n];
    }
  }
}

// Accumulates dW, db and (when dx is non-null) writes dx for y = x W + b.
inline void linear_backward(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                            std::size_t T, std::size_t K, std::size_t N) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* __restrict dyr = dy + t * N;
    const double* xr = x + t * K;
    for (std::size_t n = 0; n < N; ++n) db[n] += dyr[n];
    for (std::size_t k = 0; k < K; ++k) {
      const double* __restrict wr = w + k * N;
      double* __restrict dwr = dw + k * N;
      const double xv = xr[k];
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        dwr[n] += xv * dyr[n];
        acc += wr[n] * dyr[n];
      }
      if (dx) dx[t * K + k] = acc;
    }
  }
}

inline void layernorm(const double* x, const double* g, const double* b, double* y, double* xhat, double* rstd,
                      std::size_t T, std::size_t D) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* xr = x + t * D;
    double mean = 0.0;
    for (std::size_t i = 0; i < D; ++i) mean += xr[i];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(D);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[t] = rs;
    for (std::size_t i = 0; i < D; ++i) {
      const double h = (xr[i] - mean) * rs;
      xhat[t * D + i] = h;
      y[t * D + i] = h * g[i] + b[i];
    }
  }
}

// dx is accumulated (+=) so it can feed a residual stream directly.
inline void layernorm_backward(const double* xhat, const double* rstd, const double* g, const double* dy,
                               double* dx, double* dg, double* db, std::size_t T, std::size_t D) {
  const double inv_d = 1.0 / static_cast<double>(D);
  for (std::size_t t = 0; t < T; ++t) {
    const double* xh = xhat + t * D;
    const double* dyr = dy + t * D;
    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      dg[i] += dyr[i] * xh[i];
      db[i] += dyr[i];
      const double dxh = dyr[i] * g[i];
      mean_dxh += dxh;
      mean_dxh_xh += dxh * xh[i];
    }
    mean_dxh *= inv_d;
    mean_dxh_xh *= inv_d;
    for (std::size_t i = 0; i < D; ++i) {
      const double dxh = dyr[i] * g[i];
      dx[t * D + i] += rstd[t] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
    }
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

inline double gelu_grad(double u) {
  const double inner = kGeluC * (u + 0.044715 * u * u * u);
  const double th = std::tanh(inner);
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

struct LayerCache {
  std::vector<double> x_in, xhat1, rstd1, h1, q, k, v, att, o, x_mid, xhat2, rstd2, h2, u, a;
};

// Activations kept for the backward pass.
struct Cache {
  std::size_t T = 0;
  std::vector<double> x0;
  std::vector<LayerCache> layers;
  std::vector<double> x_final, xhatf, rstdf, hf;
  LogProbTable logprobs;
};

inline void forward_impl(const Parameters& p, std::span<const TokenId> ids, Cache& c) {
  const ModelConfig& cfg = p.config();
  const ParamLayout& L = p.layout();
  const std::size_t T = ids.size(), D = cfg.d_model, F = cfg.d_ff(), V = cfg.vocab_size, H = cfg.n_heads;
  const std::size_t hd = cfg.head_dim();
  if (T > cfg.context_len) throw SequenceTooLong(T, cfg.context_len);
  c.T = T;
  c.x0.assign(T * D, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= V) throw InvalidId(static_cast<std::size_t>(ids[t]), V);
    const double* te = p.at(L.wte() + static_cast<std::size_t>(ids[t]) * D);
    const double* pe = p.at(L.wpe() + t * D);
    for (std::size_t i = 0; i < D; ++i) c.x0[t * D + i] = te[i] + pe[i];
  }
  c.layers.resize(cfg.n_layers);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> tmp(T * D);
  const std::vector<double>* x = &c.x0;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerOffsets& o = L.layers()[l];
    LayerCache& lc = c.layers[l];
    lc.x_in = *x;
    lc.xhat1.resize(T * D);
    lc.rstd1.resize(T);
    lc.h1.resize(T * D);
    layernorm(lc.x_in.data(), p.at(o.ln1_g), p.at(o.ln1_b), lc.h1.data(), lc.xhat1.data(), lc.rstd1.data(), T, D);
    lc.q.resize(T * D);
    lc.k.resize(T * D);
    lc.v.resize(T * D);
    linear(lc.h1.data(), p.at(o.wq), p.at(o.bq), lc.q.data(), T, D, D);
    linear(lc.h1.data(), p.at(o.wk), p.at(o.bk), lc.k.data(), T, D, D);
    linear(lc.h1.data(), p.at(o.wv), p.at(o.bv), lc.v.data(), T, D, D);
    lc.att.assign(H * T * T, 0.0);
    lc.o.assign(T * D, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        double* arow = lc.att.data() + (h * T + t) * T;
        const double* qt = lc.q.data() + t * D + h * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s <= t; ++s) {
          const double* ks = lc.k.data() + s * D + h * hd;
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dot += qt[i] * ks[i];
          arow[s] = dot * scale;
          mx = std::max(mx, arow[s]);
        }
        double sum = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          arow[s] = std::exp(arow[s] - mx);
          sum += arow[s];
        }
        double* ot = lc.o.data() + t * D + h * hd;
        for (std::size_t s = 0; s <= t; ++s) {
          arow[s] /= sum;
          const double* vs = lc.v.data() + s * D + h * hd;
          for (std::size_t i = 0; i < hd; ++i) ot[i] += arow[s] * vs[i];
        }
      }
    }
    linear(lc.o.data(), p.at(o.wo), p.at(o.bo), tmp.data(), T, D, D);
    lc.x_mid.resize(T * D);
    for (std::size_t i = 0; i < T * D; ++i) lc.x_mid[i] = lc.x_in[i] + tmp[i];
    lc.xhat2.resize(T * D);
    lc.rstd2.resize(T);
    lc.h2.resize(T * D);
    layernorm(lc.x_mid.data(), p.at(o.ln2_g), p.at(o.ln2_b), lc.h2.data(), lc.xhat2.data(), lc.rstd2.data(), T, D);
    lc.u.resize(T * F);
    lc.a.resize(T * F);
    linear(lc.h2.data(), p.at(o.w1), p.at(o.b1), lc.u.data(), T, D, F);
    for (std::size_t i = 0; i < T * F; ++i) lc.a[i] = gelu(lc.u[i]);
    linear(lc.a.data(), p.at(o.w2), p.at(o.b2), tmp.data(), T, F, D);
    std::vector<double>& next = (l + 1 < cfg.n_layers) ? c.layers[l + 1].x_in : c.x_final;
    next.resize(T * D);
    for (std::size_t i = 0; i < T * D; ++i) next[i] = lc.x_mid[i] + tmp[i];
    x = &next;
  }
  c.x_final = *x;
  c.xhatf.resize(T * D);
  c.rstdf.resize(T);
  c.hf.resize(T * D);
  layernorm(c.x_final.data(), p.at(L.lnf_g()), p.at(L.lnf_b()), c.hf.data(), c.xhatf.data(), c.rstdf.data(), T, D);
  c.logprobs = LogProbTable(T, V);
  for (std::size_t t = 0; t < T; ++t) {
    auto row = c.logprobs.row(t);
    linear(c.hf.data() + t * D, p.at(L.wout()), p.at(L.bout()), row.data(), 1, D, V);
    double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double z : row) sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    for (double& z : row) z -= lse;
  }
}

// Backpropagates dlogits (T x V) through the cached forward pass into grad.
inline void backward_impl(const Parameters& p, std::span<const TokenId> ids, const Cache& c,
                          const std::vector<double>& dlogits, Parameters& grad) {
  const ModelConfig& cfg = p.config();
  const ParamLayout& L = p.layout();
  const std::size_t T = c.T, D = cfg.d_model, F = cfg.d_ff(), V = cfg.vocab_size, H = cfg.n_heads;
  const std::size_t hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dhf(T * D, 0.0);
  linear_backward(c.hf.data(), p.at(L.wout()), dlogits.data(), dhf.data(), grad.at(L.wout()), grad.at(L.bout()), T,
                  D, V);
  std::vector<double> dx(T * D, 0.0);  // gradient w.r.t. the residual stream
  layernorm_backward(c.xhatf.data(), c.rstdf.data(), p.at(L.lnf_g()), dhf.data(), dx.data(), grad.at(L.lnf_g()),
                     grad.at(L.lnf_b()), T, D);

  std::vector<double> da(T * F), du(T * F), dh(T * D), d_o(T * D), dq(T * D), dk(T * D), dv(T * D), datt(T);
  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const LayerOffsets& o = L.layers()[l];
    const LayerCache& lc = c.layers[l];
    // MLP branch: x_out = x_mid + W2 gelu(W1 ln2(x_mid))
    linear_backward(lc.a.data(), p.at(o.w2), dx.data(), da.data(), grad.at(o.w2), grad.at(o.b2), T, F, D);
    for (std::size_t i = 0; i < T * F; ++i) du[i] = da[i] * gelu_grad(lc.u[i]);
    linear_backward(lc.h2.data(), p.at(o.w1), du.data(), dh.data(), grad.at(o.w1), grad.at(o.b1), T, D, F);
    layernorm_backward(lc.xhat2.data(), lc.rstd2.data(), p.at(o.ln2_g), dh.data(), dx.data(), grad.at(o.ln2_g),
                       grad.at(o.ln2_b), T, D);
    // Attention branch: x_mid = x_in + Wo attn(ln1(x_in))
    linear_backward(lc.o.data(), p.at(o.wo), dx.data(), d_o.data(), grad.at(o.wo), grad.at(o.bo), T, D, D);
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* arow = lc.att.data() + (h * T + t) * T;
        const double* dot_ = d_o.data() + t * D + h * hd;
        double weighted = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* vs = lc.v.data() + s * D + h * hd;
          double* dvs = dv.data() + s * D + h * hd;
          double g = 0.0;
          for (std::size_t i = 0; i < hd; ++i) {
            g += dot_[i] * vs[i];
            dvs[i] += arow[s] * dot_[i];
          }
          datt[s] = g;
          weighted += arow[s] * g;
        }
        const double* qt = lc.q.data() + t * D + h * hd;
        double* dqt = dq.data() + t * D + h * hd;
        for (std::size_t s = 0; s <= t; ++s) {
          const double ds = arow[s] * (datt[s] - weighted) * scale;
          const double* ks = lc.k.data() + s * D + h * hd;
          double* dks = dk.data() + s * D + h * hd;
          for (std::size_t i = 0; i < hd; ++i) {
            dqt[i] += ds * ks[i];
            dks[i] += ds * qt[i];
          }
        }
      }
    }
    std::vector<double> dh1(T * D, 0.0);
    linear_backward(lc.h1.data(), p.at(o.wq), dq.data(), dh.data(), grad.at(o.wq), grad.at(o.bq), T, D, D);
    for (std::size_t i = 0; i < T * D; ++i) dh1[i] += dh[i];
    linear_backward(lc.h1.data(), p.at(o.wk), dk.data(), dh.data(), grad.at(o.wk), grad.at(o.bk), T, D, D);
    for (std::size_t i = 0; i < T * D; ++i) dh1[i] += dh[i];
    linear_backward(lc.h1.data(), p.at(o.wv), dv.data(), dh.data(), grad.at(o.wv), grad.at(o.bv), T, D, D);
    for (std::size_t i = 0; i < T * D; ++i) dh1[i] += dh[i];
    layernorm_backward(lc.xhat1.data(), lc.rstd1.data(), p.at(o.ln1_g), dh1.data(), dx.data(), grad.at(o.ln1_g),
                       grad.at(o.ln1_b), T, D);
  }
  for (std::size_t t = 0; t < T; ++t) {
    double* gte = grad.at(L.wte() + static_cast<std::size_t>(ids[t]) * D);
    double* gpe = grad.at(L.wpe() + t * D);
    for (std::size_t i = 0; i < D; ++i) {
      gte[i] += dx[t * D + i];
      gpe[i] += dx[t * D + i];
    }
  }
}

}  // namespace detail

inline LogProbTable forward(const Parameters& params, std::span<const TokenId> ids) {
  detail::Cache cache;
  detail::forward_impl(params, ids, cache);
  return std::move(cache.logprobs);
}

// Sum over the continuation of log p(token | everything before it).
inline double sequence_logprob(const Parameters& params, std::span<const TokenId> context,
                               std::span<const TokenId> continuation) {
  if (continuation.empty()) return 0.0;
  if (context.empty()) throw std::invalid_argument("sequence_logprob needs a non-empty context");
  const std::size_t n = context.size() + continuation.size();
  if (n > params.config().context_len) throw SequenceTooLong(n, params.config().context_len);
  TokenIds ids(context.begin(), context.end());
  ids.insert(ids.end(), continuation.begin(), continuation.end());
  const LogProbTable lp = forward(params, ids);
  double total = 0.0;
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    const std::size_t t = context.size() + i;
    total += lp.at(t - 1, ids[t]);
  }
  return total;
}

// -sum_t mask_t log p(ids_t | ids_<t).
inline double masked_nll(const Parameters& params, const MaskedSequence& ms) {
  if (ms.ids.size() != ms.mask.size()) throw std::invalid_argument("mask length differs from sequence length");
  if (ms.ids.size() > params.config().context_len) throw SequenceTooLong(ms.ids.size(), params.config().context_len);
  if (!ms.mask.empty() && ms.mask[0] != 0.0) throw std::invalid_argument("the first position has no prediction");
  bool any = false;
  for (double m : ms.mask) any |= m != 0.0;
  if (!any) return 0.0;
  const LogProbTable lp = forward(params, ms.ids);
  double nll = 0.0;
  for (std::size_t t = 1; t < ms.ids.size(); ++t) {
    if (ms.mask[t] != 0.0) nll -= ms.mask[t] * lp.at(t - 1, ms.ids[t]);
  }
  return nll;
}

struct LossAndGradients {
  double loss = 0.0;          // mean masked NLL per unit of mask weight
  double nll_sum = 0.0;       // sum of weighted NLL over the batch
  double weight_sum = 0.0;    // total mask weight
  Parameters grad;
};

// Exact gradient of the mean masked NLL over the batch. Sequences are processed
// in batch order so the floating-point reduction is reproducible.
inline LossAndGradients loss_and_gradients(const Parameters& params, std::span<const MaskedSequence> batch) {
  LossAndGradients out;
  out.grad = Parameters(params.config());
  for (const auto& ms : batch) {
    if (ms.ids.size() != ms.mask.size()) throw std::invalid_argument("mask length differs from sequence length");
    if (ms.ids.size() > params.config().context_len) throw SequenceTooLong(ms.ids.size(), params.config().context_len);
    if (!ms.mask.empty() && ms.mask[0] != 0.0) throw std::invalid_argument("the first position has no prediction");
    out.weight_sum += ms.weight_sum();
  }
  if (out.weight_sum == 0.0) return out;
  const double inv = 1.0 / out.weight_sum;
  const std::size_t V = params.config().vocab_size;
  detail::Cache cache;
  for (const auto& ms : batch) {
    if (ms.weight_sum() == 0.0) continue;
    detail::forward_impl(params, ms.ids, cache);
    const std::size_t T = ms.ids.size();
    std::vector<double> dlogits(T * V, 0.0);
    for (std::size_t t = 1; t < T; ++t) {
      const double w = ms.mask[t];
      if (w == 0.0) continue;
      auto row = cache.logprobs.row(t - 1);
      out.nll_sum -= w * row[static_cast<std::size_t>(ms.ids[t])];
      double* d = dlogits.data() + (t - 1) * V;
      for (std::size_t v = 0; v < V; ++v) d[v] = w * inv * std::exp(row[v]);
      d[static_cast<std::size_t>(ms.ids[t])] -= w * inv;
    }
    detail::backward_impl(params, ms.ids, cache, dlogits, out.grad);
  }
  out.loss = out.nll_sum * inv;
  return out;
}

inline Parameters gradients(const Parameters& params, std::span<const MaskedSequence> batch) {
  return loss_and_gradients(params, batch).grad;
}

// Greedy when temperature is 0, otherwise sampling from softmax(logits / temperature).
struct SamplingPolicy {
  double temperature = 0.0;
  static SamplingPolicy greedy() { return {0.0}; }
  static SamplingPolicy with_temperature(double tau) { return {tau}; }
};

inline TokenId pick_token(std::span<const double> logprobs, const SamplingPolicy& policy, Rng& rng) {
  if (policy.temperature <= 0.0) {
    return static_cast<TokenId>(std::max_element(logprobs.begin(), logprobs.end()) - logprobs.begin());
  }
  const double mx = *std::max_element(logprobs.begin(), logprobs.end());
  std::vector<double> w(logprobs.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp((logprobs[i] - mx) / policy.temperature);
  return static_cast<TokenId>(rng.categorical(w));
}

// Autoregressive continuation of prompt. Stops after emitting any token in
// stop (which is kept as the last element), after max_len tokens, or when the
// context window is full.
inline TokenIds generate(const Parameters& params, std::span<const TokenId> prompt, const SamplingPolicy& policy,
                         Rng& rng, std::size_t max_len, std::span<const TokenId> stop) {
  const std::size_t ctx = params.config().context_len;
  if (prompt.size() > ctx) throw SequenceTooLong(prompt.size(), ctx);
  if (prompt.empty()) throw std::invalid_argument("generate needs a non-empty prompt");
  TokenIds seq(prompt.begin(), prompt.end());
  TokenIds out;
  while (out.size() < max_len && seq.size() < ctx) {
    const LogProbTable lp = forward(params, seq);
    const TokenId next = pick_token(lp.row(seq.size() - 1), policy, rng);
    out.push_back(next);
    seq.push_back(next);
    if (std::find(stop.begin(), stop.end(), next) != stop.end()) break;
  }
  return out;
}

}  // namespace sdp
