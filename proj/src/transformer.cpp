#include "nbscreen/set_transformer.hpp"

#include <cmath>

namespace nbscreen::tf {

void ModelConfig::validate() const {
  if (d < 1 || h < 1 || d % h != 0) {
    throw std::invalid_argument("model config: d must be a positive multiple of h");
  }
  if (L < 1) {
    throw std::invalid_argument("model config: L must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("model config: dropout must lie in [0, 1)");
  }
  if (ff_mult < 1 || cross_blocks < 0) {
    throw std::invalid_argument("model config: ff_mult/cross_blocks out of range");
  }
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.shape = std::move(shape);
  std::int64_t n = 1;
  for (int s : t.shape) {
    n *= s;
  }
  t.v.assign(static_cast<std::size_t>(n), 0.0);
  return t;
}

namespace {

TransformerWeights build_weights(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d;
  const int ff = cfg.ff_dim();
  TransformerWeights w;
  w.config = cfg;
  w.input_scale = Tensor::zeros({1});
  w.input_shift = Tensor::zeros({1});
  auto make_attn = [&] {
    AttentionWeights a;
    a.wq = Tensor::zeros({d, d});
    a.bq = Tensor::zeros({d});
    a.wk = Tensor::zeros({d, d});
    a.bk = Tensor::zeros({d});
    a.wv = Tensor::zeros({d, d});
    a.bv = Tensor::zeros({d});
    a.wo = Tensor::zeros({d, d});
    a.bo = Tensor::zeros({d});
    return a;
  };
  auto make_ln = [&] {
    return LayerNormWeights{Tensor::zeros({d}), Tensor::zeros({d})};
  };
  auto make_ff = [&] {
    return FeedForwardWeights{Tensor::zeros({d, ff}), Tensor::zeros({ff}),
                              Tensor::zeros({ff, d}), Tensor::zeros({d})};
  };
  for (auto& path : w.path) {
    path.embed_w = Tensor::zeros({1, d});
    path.embed_b = Tensor::zeros({d});
    path.blocks.resize(static_cast<std::size_t>(cfg.L));
    for (auto& b : path.blocks) {
      b.ln1 = make_ln();
      b.attn = make_attn();
      b.ln2 = make_ln();
      b.ff = make_ff();
    }
    path.cross.resize(static_cast<std::size_t>(cfg.cross_blocks));
    for (auto& c : path.cross) {
      c.ln_self = make_ln();
      c.self_attn = make_attn();
      c.ln_cross = make_ln();
      c.cross_attn = make_attn();
      c.ln_ff = make_ln();
      c.ff = make_ff();
    }
    path.final_ln = make_ln();
  }
  const int d4 = 4 * d;
  w.head.w1 = Tensor::zeros({d4, d4});
  w.head.b1 = Tensor::zeros({d4});
  w.head.w2 = Tensor::zeros({d4, d4});
  w.head.b2 = Tensor::zeros({d4});
  w.head.w3 = Tensor::zeros({d4, 3});
  w.head.b3 = Tensor::zeros({3});
  w.target_scale = Tensor::zeros({3});
  w.target_shift = Tensor::zeros({3});
  return w;
}

inline double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::int64_t TransformerWeights::parameter_count() const {
  std::int64_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

TransformerWeights zeros_like(const TransformerWeights& w) {
  return build_weights(w.config);
}

TransformerWeights init_model(const ModelConfig& cfg, RngStream& rng) {
  TransformerWeights w = build_weights(cfg);
  w.visit([&](const std::string& name, Tensor& t) {
    if (ends_with(name, ".gamma") || name == "input_scale" ||
        name == "target_scale") {
      for (double& x : t.v) {
        x = 1.0;
      }
    } else if (t.shape.size() == 2) {
      const double limit = std::sqrt(6.0 / (t.shape[0] + t.shape[1]));
      for (double& x : t.v) {
        x = to_f32(limit * (2.0 * rng.uniform01() - 1.0));
      }
    }
    // biases, shifts and LN offsets stay zero
  });
  return w;
}

void TrainConfig::validate() const {
  if (n_epoch_problems < 1 || batch_size < 1 || epochs < 1 ||
      validation_size < 1) {
    throw std::invalid_argument("train config: counts must be positive");
  }
  if (!(learning_rate > 0.0) || weight_decay < 0.0 ||
      !(plateau_factor > 0.0) || plateau_factor > 1.0 || plateau_patience < 1) {
    throw std::invalid_argument("train config: invalid optimizer setting");
  }
  if (!(loss_weights.w_mu > 0.0) || !(loss_weights.w_beta > 0.0) ||
      !(loss_weights.w_alpha > 0.0)) {
    throw std::invalid_argument("train config: loss weights must be positive");
  }
}

double loss(const Prediction& pred, const Prediction& target,
            const LossWeights& lw) {
  const double dmu = pred.mu - target.mu;
  const double dbeta = pred.beta - target.beta;
  const double dalpha = pred.alpha - target.alpha;
  return lw.w_mu * dmu * dmu + lw.w_beta * dbeta * dbeta +
         lw.w_alpha * dalpha * dalpha;
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

namespace {

using Vec = std::vector<double>;

constexpr double kLnEps = 1e-5;

// out[n x dout] = in[n x din] * w + b
void linear_fwd(const Vec& in, int n, int din, const Tensor& w, const Tensor& b,
                Vec& out) {
  const int dout = w.cols();
  out.assign(static_cast<std::size_t>(n) * dout, 0.0);
  for (int i = 0; i < n; ++i) {
    double* o = out.data() + static_cast<std::size_t>(i) * dout;
    for (int j = 0; j < dout; ++j) {
      o[j] = b.v[j];
    }
    const double* row = in.data() + static_cast<std::size_t>(i) * din;
    for (int k = 0; k < din; ++k) {
      const double a = row[k];
      const double* wr = w.data() + static_cast<std::size_t>(k) * dout;
      for (int j = 0; j < dout; ++j) {
        o[j] += a * wr[j];
      }
    }
  }
}

// din_acc += dout * w^T ; dw += in^T * dout ; db += colsum(dout)
void linear_bwd(const Vec& in, int n, int din, const Tensor& w,
                const Vec& dout, Vec& din_acc, Tensor& dw, Tensor& db) {
  const int dout_dim = w.cols();
  for (int i = 0; i < n; ++i) {
    const double* go = dout.data() + static_cast<std::size_t>(i) * dout_dim;
    const double* row = in.data() + static_cast<std::size_t>(i) * din;
    double* gi = din_acc.data() + static_cast<std::size_t>(i) * din;
    for (int j = 0; j < dout_dim; ++j) {
      db.v[j] += go[j];
    }
    for (int k = 0; k < din; ++k) {
      const double* wr = w.data() + static_cast<std::size_t>(k) * dout_dim;
      double* dwr = dw.data() + static_cast<std::size_t>(k) * dout_dim;
      double acc = 0.0;
      const double a = row[k];
      for (int j = 0; j < dout_dim; ++j) {
        acc += go[j] * wr[j];
        dwr[j] += a * go[j];
      }
      gi[k] += acc;
    }
  }
}

struct LnTape {
  Vec xhat;  // normalized rows
  Vec rstd;  // per-row 1/sqrt(var + eps)
};

void ln_fwd(const Vec& x, int n, int d, const LayerNormWeights& w, Vec& out,
            LnTape* tape) {
  out.resize(static_cast<std::size_t>(n) * d);
  if (tape) {
    tape->xhat.resize(out.size());
    tape->rstd.resize(static_cast<std::size_t>(n));
  }
  for (int i = 0; i < n; ++i) {
    const double* row = x.data() + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int c = 0; c < d; ++c) {
      mean += row[c];
    }
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      const double t = row[c] - mean;
      var += t * t;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    double* o = out.data() + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) {
      const double xh = (row[c] - mean) * rstd;
      o[c] = w.gamma.v[c] * xh + w.beta.v[c];
      if (tape) {
        tape->xhat[static_cast<std::size_t>(i) * d + c] = xh;
      }
    }
    if (tape) {
      tape->rstd[static_cast<std::size_t>(i)] = rstd;
    }
  }
}

void ln_bwd(const LayerNormWeights& w, const LnTape& tape, int n, int d,
            const Vec& dout, Vec& dx_acc, LayerNormWeights& dw) {
  for (int i = 0; i < n; ++i) {
    const double* go = dout.data() + static_cast<std::size_t>(i) * d;
    const double* xh = tape.xhat.data() + static_cast<std::size_t>(i) * d;
    const double rstd = tape.rstd[static_cast<std::size_t>(i)];
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (int c = 0; c < d; ++c) {
      const double dxhat = go[c] * w.gamma.v[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xh[c];
      dw.gamma.v[c] += go[c] * xh[c];
      dw.beta.v[c] += go[c];
    }
    double* gi = dx_acc.data() + static_cast<std::size_t>(i) * d;
    const double inv_d = 1.0 / d;
    for (int c = 0; c < d; ++c) {
      const double dxhat = go[c] * w.gamma.v[c];
      gi[c] += rstd * (dxhat - inv_d * sum_dxhat - xh[c] * inv_d * sum_dxhat_xhat);
    }
  }
}

struct AttnTape {
  Vec xq, xkv;  // layer inputs as seen by the projections
  Vec q, k, v;
  Vec probs;    // h * nq * nk
  Vec concat;   // nq x d
};

void attn_fwd(const Vec& xq, int nq, const Vec& xkv, int nk, int d, int h,
              const AttentionWeights& w, Vec& out, AttnTape* tape) {
  const int dk = d / h;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Vec q;
  Vec k;
  Vec v;
  linear_fwd(xq, nq, d, w.wq, w.bq, q);
  linear_fwd(xkv, nk, d, w.wk, w.bk, k);
  linear_fwd(xkv, nk, d, w.wv, w.bv, v);
  Vec probs(static_cast<std::size_t>(h) * nq * nk);
  Vec concat(static_cast<std::size_t>(nq) * d, 0.0);
  Vec scores(static_cast<std::size_t>(nk));
  for (int hh = 0; hh < h; ++hh) {
    const int off = hh * dk;
    for (int i = 0; i < nq; ++i) {
      const double* qi = q.data() + static_cast<std::size_t>(i) * d + off;
      double max_s = -1e300;
      for (int j = 0; j < nk; ++j) {
        const double* kj = k.data() + static_cast<std::size_t>(j) * d + off;
        double s = 0.0;
        for (int t = 0; t < dk; ++t) {
          s += qi[t] * kj[t];
        }
        s *= scale;
        scores[static_cast<std::size_t>(j)] = s;
        max_s = std::max(max_s, s);
      }
      double denom = 0.0;
      for (int j = 0; j < nk; ++j) {
        const double e = std::exp(scores[static_cast<std::size_t>(j)] - max_s);
        scores[static_cast<std::size_t>(j)] = e;
        denom += e;
      }
      double* prow =
          probs.data() + (static_cast<std::size_t>(hh) * nq + i) * nk;
      for (int j = 0; j < nk; ++j) {
        prow[j] = scores[static_cast<std::size_t>(j)] / denom;
      }
      double* crow = concat.data() + static_cast<std::size_t>(i) * d + off;
      for (int j = 0; j < nk; ++j) {
        const double pij = prow[j];
        const double* vj = v.data() + static_cast<std::size_t>(j) * d + off;
        for (int t = 0; t < dk; ++t) {
          crow[t] += pij * vj[t];
        }
      }
    }
  }
  linear_fwd(concat, nq, d, w.wo, w.bo, out);
  if (tape) {
    tape->xq = xq;
    tape->xkv = xkv;
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->probs = std::move(probs);
    tape->concat = std::move(concat);
  }
}

void attn_bwd(const AttentionWeights& w, const AttnTape& tape, int nq, int nk,
              int d, int h, const Vec& dout, Vec& dxq_acc, Vec& dxkv_acc,
              AttentionWeights& dw) {
  const int dk = d / h;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Vec dconcat(static_cast<std::size_t>(nq) * d, 0.0);
  linear_bwd(tape.concat, nq, d, w.wo, dout, dconcat, dw.wo, dw.bo);
  Vec dq(static_cast<std::size_t>(nq) * d, 0.0);
  Vec dkk(static_cast<std::size_t>(nk) * d, 0.0);
  Vec dv(static_cast<std::size_t>(nk) * d, 0.0);
  Vec dp(static_cast<std::size_t>(nk));
  for (int hh = 0; hh < h; ++hh) {
    const int off = hh * dk;
    for (int i = 0; i < nq; ++i) {
      const double* prow =
          tape.probs.data() + (static_cast<std::size_t>(hh) * nq + i) * nk;
      const double* dcrow =
          dconcat.data() + static_cast<std::size_t>(i) * d + off;
      double dot_pp = 0.0;
      for (int j = 0; j < nk; ++j) {
        const double* vj = tape.v.data() + static_cast<std::size_t>(j) * d + off;
        double acc = 0.0;
        for (int t = 0; t < dk; ++t) {
          acc += dcrow[t] * vj[t];
          // dV accumulation folded below to reuse the loop
        }
        dp[static_cast<std::size_t>(j)] = acc;
        dot_pp += acc * prow[j];
        double* dvj = dv.data() + static_cast<std::size_t>(j) * d + off;
        const double pij = prow[j];
        for (int t = 0; t < dk; ++t) {
          dvj[t] += pij * dcrow[t];
        }
      }
      const double* qi = tape.q.data() + static_cast<std::size_t>(i) * d + off;
      double* dqi = dq.data() + static_cast<std::size_t>(i) * d + off;
      for (int j = 0; j < nk; ++j) {
        const double ds = prow[j] * (dp[static_cast<std::size_t>(j)] - dot_pp) * scale;
        const double* kj = tape.k.data() + static_cast<std::size_t>(j) * d + off;
        double* dkj = dkk.data() + static_cast<std::size_t>(j) * d + off;
        for (int t = 0; t < dk; ++t) {
          dqi[t] += ds * kj[t];
          dkj[t] += ds * qi[t];
        }
      }
    }
  }
  linear_bwd(tape.xq, nq, d, w.wq, dq, dxq_acc, dw.wq, dw.bq);
  linear_bwd(tape.xkv, nk, d, w.wk, dkk, dxkv_acc, dw.wk, dw.bk);
  linear_bwd(tape.xkv, nk, d, w.wv, dv, dxkv_acc, dw.wv, dw.bv);
}

// tanh-parameterized GELU: x * sigmoid(2 * c0 * (x + c1 x^3)).
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

inline double gelu(double x) {
  const double w = 2.0 * kGeluC0 * (x + kGeluC1 * x * x * x);
  return x / (1.0 + std::exp(-w));
}

inline double gelu_grad(double x) {
  const double w = 2.0 * kGeluC0 * (x + kGeluC1 * x * x * x);
  const double s = 1.0 / (1.0 + std::exp(-w));
  const double dw = 2.0 * kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
  return s + x * s * (1.0 - s) * dw;
}

struct FfTape {
  Vec x, pre1, act1;
};

void ff_fwd(const Vec& x, int n, int d, const FeedForwardWeights& w, Vec& out,
            FfTape* tape) {
  const int ff = w.w1.cols();
  Vec pre1;
  linear_fwd(x, n, d, w.w1, w.b1, pre1);
  Vec act1(pre1.size());
  for (std::size_t i = 0; i < pre1.size(); ++i) {
    act1[i] = gelu(pre1[i]);
  }
  linear_fwd(act1, n, ff, w.w2, w.b2, out);
  if (tape) {
    tape->x = x;
    tape->pre1 = std::move(pre1);
    tape->act1 = std::move(act1);
  }
}

void ff_bwd(const FeedForwardWeights& w, const FfTape& tape, int n, int d,
            const Vec& dout, Vec& dx_acc, FeedForwardWeights& dw) {
  const int ff = w.w1.cols();
  Vec dact1(static_cast<std::size_t>(n) * ff, 0.0);
  linear_bwd(tape.act1, n, ff, w.w2, dout, dact1, dw.w2, dw.b2);
  for (std::size_t i = 0; i < dact1.size(); ++i) {
    dact1[i] *= gelu_grad(tape.pre1[i]);
  }
  linear_bwd(tape.x, n, d, w.w1, dact1, dx_acc, dw.w1, dw.b1);
}

struct DropTape {
  Vec scale;  // per-element multiplier (0 or 1/keep)
  bool active = false;
};

void dropout_fwd(Vec& x, double rate, RngStream* rng, DropTape* tape) {
  if (rng == nullptr || rate <= 0.0) {
    if (tape) {
      tape->active = false;
    }
    return;
  }
  const double keep = 1.0 - rate;
  if (tape) {
    tape->active = true;
    tape->scale.resize(x.size());
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = rng->uniform01() < keep ? 1.0 / keep : 0.0;
    x[i] *= s;
    if (tape) {
      tape->scale[i] = s;
    }
  }
}

void dropout_bwd(const DropTape& tape, Vec& dx) {
  if (!tape.active) {
    return;
  }
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] *= tape.scale[i];
  }
}

inline void add_into(Vec& x, const Vec& delta) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] += delta[i];
  }
}

struct SelfBlockTape {
  LnTape ln1;
  AttnTape attn;
  DropTape drop1;
  LnTape ln2;
  FfTape ff;
  DropTape drop2;
};

struct CrossBlockTape {
  LnTape ln_self;
  AttnTape self_attn;
  DropTape drop1;
  LnTape ln_cross;
  AttnTape cross_attn;
  DropTape drop2;
  LnTape ln_ff;
  FfTape ff;
  DropTape drop3;
};

struct PathTape {
  Vec ystar;  // raw y* per element
  Vec x0;     // scaled inputs, n x 1
  std::vector<SelfBlockTape> blocks;
  std::vector<CrossBlockTape> cross;
  LnTape final_ln;
  Vec normed;  // final_ln output
};

struct HeadTape {
  Vec pooled[2];  // phi_1, phi_2
  Vec xi;
  Vec pre1, act1;
  DropTape drop1;
  Vec pre2, act2;
  DropTape drop2;
  double raw[3] = {0.0, 0.0, 0.0};
};

struct ForwardTape {
  std::array<PathTape, 2> path;
  std::array<Vec, 2> state;  // running [n x d] states
  HeadTape head;
};

void self_block_fwd(const SelfBlockWeights& w, int n, int d, int h,
                    double dropout, RngStream* rng, Vec& x,
                    SelfBlockTape* tape) {
  Vec normed;
  ln_fwd(x, n, d, w.ln1, normed, tape ? &tape->ln1 : nullptr);
  Vec branch;
  attn_fwd(normed, n, normed, n, d, h, w.attn, branch,
           tape ? &tape->attn : nullptr);
  dropout_fwd(branch, dropout, rng, tape ? &tape->drop1 : nullptr);
  add_into(x, branch);
  ln_fwd(x, n, d, w.ln2, normed, tape ? &tape->ln2 : nullptr);
  ff_fwd(normed, n, d, w.ff, branch, tape ? &tape->ff : nullptr);
  dropout_fwd(branch, dropout, rng, tape ? &tape->drop2 : nullptr);
  add_into(x, branch);
}

// dx holds dL/d(output state) on entry and dL/d(input state) on exit.
void self_block_bwd(const SelfBlockWeights& w, const SelfBlockTape& tape,
                    int n, int d, int h, Vec& dx, SelfBlockWeights& dw) {
  Vec dbranch = dx;  // residual: gradient flows into the ff branch unchanged
  dropout_bwd(tape.drop2, dbranch);
  Vec dnormed(static_cast<std::size_t>(n) * d, 0.0);
  ff_bwd(w.ff, tape.ff, n, d, dbranch, dnormed, dw.ff);
  ln_bwd(w.ln2, tape.ln2, n, d, dnormed, dx, dw.ln2);

  dbranch = dx;
  dropout_bwd(tape.drop1, dbranch);
  std::fill(dnormed.begin(), dnormed.end(), 0.0);
  attn_bwd(w.attn, tape.attn, n, n, d, h, dbranch, dnormed, dnormed, dw.attn);
  ln_bwd(w.ln1, tape.ln1, n, d, dnormed, dx, dw.ln1);
}

void cross_block_fwd(const CrossBlockWeights& w, int n, int d, int h,
                     double dropout, RngStream* rng, Vec& x, const Vec& memory,
                     int n_mem, CrossBlockTape* tape) {
  Vec normed;
  ln_fwd(x, n, d, w.ln_self, normed, tape ? &tape->ln_self : nullptr);
  Vec branch;
  attn_fwd(normed, n, normed, n, d, h, w.self_attn, branch,
           tape ? &tape->self_attn : nullptr);
  dropout_fwd(branch, dropout, rng, tape ? &tape->drop1 : nullptr);
  add_into(x, branch);

  ln_fwd(x, n, d, w.ln_cross, normed, tape ? &tape->ln_cross : nullptr);
  attn_fwd(normed, n, memory, n_mem, d, h, w.cross_attn, branch,
           tape ? &tape->cross_attn : nullptr);
  dropout_fwd(branch, dropout, rng, tape ? &tape->drop2 : nullptr);
  add_into(x, branch);

  ln_fwd(x, n, d, w.ln_ff, normed, tape ? &tape->ln_ff : nullptr);
  ff_fwd(normed, n, d, w.ff, branch, tape ? &tape->ff : nullptr);
  dropout_fwd(branch, dropout, rng, tape ? &tape->drop3 : nullptr);
  add_into(x, branch);
}

// dx: dL/d(output) -> dL/d(input); dmemory accumulates the key/value-side
// gradient for the opposite pathway's pre-block state.
void cross_block_bwd(const CrossBlockWeights& w, const CrossBlockTape& tape,
                     int n, int d, int h, int n_mem, Vec& dx, Vec& dmemory,
                     CrossBlockWeights& dw) {
  Vec dbranch = dx;
  dropout_bwd(tape.drop3, dbranch);
  Vec dnormed(static_cast<std::size_t>(n) * d, 0.0);
  ff_bwd(w.ff, tape.ff, n, d, dbranch, dnormed, dw.ff);
  ln_bwd(w.ln_ff, tape.ln_ff, n, d, dnormed, dx, dw.ln_ff);

  dbranch = dx;
  dropout_bwd(tape.drop2, dbranch);
  std::fill(dnormed.begin(), dnormed.end(), 0.0);
  attn_bwd(w.cross_attn, tape.cross_attn, n, n_mem, d, h, dbranch, dnormed,
           dmemory, dw.cross_attn);
  ln_bwd(w.ln_cross, tape.ln_cross, n, d, dnormed, dx, dw.ln_cross);

  dbranch = dx;
  dropout_bwd(tape.drop1, dbranch);
  std::fill(dnormed.begin(), dnormed.end(), 0.0);
  attn_bwd(w.self_attn, tape.self_attn, n, n, d, h, dbranch, dnormed, dnormed,
           dw.self_attn);
  ln_bwd(w.ln_self, tape.ln_self, n, d, dnormed, dx, dw.ln_self);
}

void check_set_sizes(const GroupView& g) {
  const std::size_t n1 = g.y1.size();
  const std::size_t n2 = g.y2.size();
  if (n1 < 2 || n1 > 10 || n2 < 2 || n2 > 10) {
    throw std::invalid_argument(
        "labels: transformer supports set sizes between 2 and 10");
  }
}

Prediction forward_impl(const TransformerWeights& w, const Problem& p,
                        ForwardTape* tape, RngStream* rng) {
  p.validate();
  const GroupView g = group_view(p);
  check_set_sizes(g);
  const ModelConfig& cfg = w.config;
  const int d = cfg.d;
  const double rate = cfg.dropout;

  ForwardTape local;
  ForwardTape& tp = tape ? *tape : local;

  const std::vector<std::int64_t>* ys[2] = {&g.y1, &g.y2};
  const std::vector<double>* ls[2] = {&g.l1, &g.l2};
  std::array<int, 2> n{static_cast<int>(g.y1.size()),
                       static_cast<int>(g.y2.size())};

  // stem + self-attention stacks
  for (int pw = 0; pw < 2; ++pw) {
    PathTape& pt = tp.path[static_cast<std::size_t>(pw)];
    pt.ystar.resize(static_cast<std::size_t>(n[pw]));
    pt.x0.resize(static_cast<std::size_t>(n[pw]));
    for (int i = 0; i < n[pw]; ++i) {
      const double ystar =
          transform_input(static_cast<double>((*ys[pw])[i]), (*ls[pw])[i]);
      pt.ystar[static_cast<std::size_t>(i)] = ystar;
      pt.x0[static_cast<std::size_t>(i)] =
          w.input_scale.v[0] * ystar + w.input_shift.v[0];
    }
    Vec& x = tp.state[static_cast<std::size_t>(pw)];
    linear_fwd(pt.x0, n[pw], 1, w.path[pw].embed_w, w.path[pw].embed_b, x);
    pt.blocks.resize(w.path[pw].blocks.size());
    for (std::size_t b = 0; b < w.path[pw].blocks.size(); ++b) {
      self_block_fwd(w.path[pw].blocks[b], n[pw], d, cfg.h, rate, rng, x,
                     tape ? &pt.blocks[b] : nullptr);
    }
    pt.cross.resize(w.path[pw].cross.size());
  }

  // bidirectional cross-attention; both directions read the same snapshot
  for (int level = 0; level < cfg.cross_blocks; ++level) {
    const Vec snapshot0 = tp.state[0];
    const Vec snapshot1 = tp.state[1];
    cross_block_fwd(w.path[0].cross[static_cast<std::size_t>(level)], n[0], d,
                    cfg.h, rate, rng, tp.state[0], snapshot1, n[1],
                    tape ? &tp.path[0].cross[static_cast<std::size_t>(level)]
                         : nullptr);
    cross_block_fwd(w.path[1].cross[static_cast<std::size_t>(level)], n[1], d,
                    cfg.h, rate, rng, tp.state[1], snapshot0, n[0],
                    tape ? &tp.path[1].cross[static_cast<std::size_t>(level)]
                         : nullptr);
  }

  // final norm + mean pooling
  for (int pw = 0; pw < 2; ++pw) {
    PathTape& pt = tp.path[static_cast<std::size_t>(pw)];
    ln_fwd(tp.state[static_cast<std::size_t>(pw)], n[pw], d, w.path[pw].final_ln,
           pt.normed, tape ? &pt.final_ln : nullptr);
    Vec& pooled = tp.head.pooled[static_cast<std::size_t>(pw)];
    pooled.assign(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n[pw]; ++i) {
      const double* row = pt.normed.data() + static_cast<std::size_t>(i) * d;
      for (int c = 0; c < d; ++c) {
        pooled[static_cast<std::size_t>(c)] += row[c];
      }
    }
    for (int c = 0; c < d; ++c) {
      pooled[static_cast<std::size_t>(c)] /= n[pw];
    }
  }

  // xi = [phi1; phi2; phi1 - phi2; phi1 * phi2]
  HeadTape& ht = tp.head;
  ht.xi.resize(static_cast<std::size_t>(4) * d);
  for (int c = 0; c < d; ++c) {
    const double a = ht.pooled[0][static_cast<std::size_t>(c)];
    const double b = ht.pooled[1][static_cast<std::size_t>(c)];
    ht.xi[static_cast<std::size_t>(c)] = a;
    ht.xi[static_cast<std::size_t>(d + c)] = b;
    ht.xi[static_cast<std::size_t>(2 * d + c)] = a - b;
    ht.xi[static_cast<std::size_t>(3 * d + c)] = a * b;
  }

  linear_fwd(ht.xi, 1, 4 * d, w.head.w1, w.head.b1, ht.pre1);
  ht.act1.resize(ht.pre1.size());
  for (std::size_t i = 0; i < ht.pre1.size(); ++i) {
    ht.act1[i] = gelu(ht.pre1[i]);
  }
  dropout_fwd(ht.act1, rate, rng, tape ? &ht.drop1 : nullptr);
  linear_fwd(ht.act1, 1, 4 * d, w.head.w2, w.head.b2, ht.pre2);
  ht.act2.resize(ht.pre2.size());
  for (std::size_t i = 0; i < ht.pre2.size(); ++i) {
    ht.act2[i] = gelu(ht.pre2[i]);
  }
  dropout_fwd(ht.act2, rate, rng, tape ? &ht.drop2 : nullptr);
  Vec out3;
  linear_fwd(ht.act2, 1, 4 * d, w.head.w3, w.head.b3, out3);
  ht.raw[0] = out3[0];
  ht.raw[1] = out3[1];
  ht.raw[2] = out3[2];

  Prediction pred;
  pred.mu = w.target_scale.v[0] * out3[0] + w.target_shift.v[0];
  pred.beta = w.target_scale.v[1] * out3[1] + w.target_shift.v[1];
  pred.alpha = w.target_scale.v[2] * out3[2] + w.target_shift.v[2];
  return pred;
}

}  // namespace

Prediction forward(const TransformerWeights& w, const Problem& p) {
  return forward_impl(w, p, nullptr, nullptr);
}

double backward(const TransformerWeights& w, const Problem& p,
                const Prediction& target, const LossWeights& lw,
                TransformerWeights* grads, RngStream* dropout_rng) {
  ForwardTape tape;
  const Prediction pred = forward_impl(w, p, &tape, dropout_rng);
  const double loss_value = loss(pred, target, lw);

  const ModelConfig& cfg = w.config;
  const int d = cfg.d;
  const GroupView g = group_view(p);
  std::array<int, 2> n{static_cast<int>(g.y1.size()),
                       static_cast<int>(g.y2.size())};

  // loss -> prediction
  const double dpred[3] = {2.0 * lw.w_mu * (pred.mu - target.mu),
                           2.0 * lw.w_beta * (pred.beta - target.beta),
                           2.0 * lw.w_alpha * (pred.alpha - target.alpha)};
  // prediction -> raw head outputs and target scales
  Vec dout3(3);
  for (int k = 0; k < 3; ++k) {
    dout3[static_cast<std::size_t>(k)] = dpred[k] * w.target_scale.v[k];
    grads->target_scale.v[k] += dpred[k] * tape.head.raw[k];
    grads->target_shift.v[k] += dpred[k];
  }

  HeadTape& ht = tape.head;
  Vec dact2(static_cast<std::size_t>(4) * d, 0.0);
  linear_bwd(ht.act2, 1, 4 * d, w.head.w3, dout3, dact2, grads->head.w3,
             grads->head.b3);
  dropout_bwd(ht.drop2, dact2);
  for (std::size_t i = 0; i < dact2.size(); ++i) {
    dact2[i] *= gelu_grad(ht.pre2[i]);
  }
  Vec dact1(static_cast<std::size_t>(4) * d, 0.0);
  linear_bwd(ht.act1, 1, 4 * d, w.head.w2, dact2, dact1, grads->head.w2,
             grads->head.b2);
  dropout_bwd(ht.drop1, dact1);
  for (std::size_t i = 0; i < dact1.size(); ++i) {
    dact1[i] *= gelu_grad(ht.pre1[i]);
  }
  Vec dxi(static_cast<std::size_t>(4) * d, 0.0);
  linear_bwd(ht.xi, 1, 4 * d, w.head.w1, dact1, dxi, grads->head.w1,
             grads->head.b1);

  // xi -> pooled vectors
  std::array<Vec, 2> dpooled;
  dpooled[0].assign(static_cast<std::size_t>(d), 0.0);
  dpooled[1].assign(static_cast<std::size_t>(d), 0.0);
  for (int c = 0; c < d; ++c) {
    const double a = ht.pooled[0][static_cast<std::size_t>(c)];
    const double b = ht.pooled[1][static_cast<std::size_t>(c)];
    const double g0 = dxi[static_cast<std::size_t>(c)];
    const double g1 = dxi[static_cast<std::size_t>(d + c)];
    const double g2 = dxi[static_cast<std::size_t>(2 * d + c)];
    const double g3 = dxi[static_cast<std::size_t>(3 * d + c)];
    dpooled[0][static_cast<std::size_t>(c)] = g0 + g2 + g3 * b;
    dpooled[1][static_cast<std::size_t>(c)] = g1 - g2 + g3 * a;
  }

  // pooled -> final_ln input; running state gradients
  std::array<Vec, 2> dstate;
  for (int pw = 0; pw < 2; ++pw) {
    PathTape& pt = tape.path[static_cast<std::size_t>(pw)];
    Vec dnormed(static_cast<std::size_t>(n[pw]) * d);
    for (int i = 0; i < n[pw]; ++i) {
      for (int c = 0; c < d; ++c) {
        dnormed[static_cast<std::size_t>(i) * d + c] =
            dpooled[static_cast<std::size_t>(pw)][static_cast<std::size_t>(c)] /
            n[pw];
      }
    }
    dstate[static_cast<std::size_t>(pw)].assign(
        static_cast<std::size_t>(n[pw]) * d, 0.0);
    ln_bwd(w.path[pw].final_ln, pt.final_ln, n[pw], d, dnormed,
           dstate[static_cast<std::size_t>(pw)],
           grads->path[pw].final_ln);
  }

  // cross blocks in reverse; the key/value gradients cross over
  for (int level = cfg.cross_blocks - 1; level >= 0; --level) {
    Vec dmem0(static_cast<std::size_t>(n[0]) * d, 0.0);
    Vec dmem1(static_cast<std::size_t>(n[1]) * d, 0.0);
    cross_block_bwd(w.path[0].cross[static_cast<std::size_t>(level)],
                    tape.path[0].cross[static_cast<std::size_t>(level)], n[0],
                    d, cfg.h, n[1], dstate[0], dmem1,
                    grads->path[0].cross[static_cast<std::size_t>(level)]);
    cross_block_bwd(w.path[1].cross[static_cast<std::size_t>(level)],
                    tape.path[1].cross[static_cast<std::size_t>(level)], n[1],
                    d, cfg.h, n[0], dstate[1], dmem0,
                    grads->path[1].cross[static_cast<std::size_t>(level)]);
    add_into(dstate[0], dmem0);
    add_into(dstate[1], dmem1);
  }

  // self stacks, stem, input scaling
  for (int pw = 0; pw < 2; ++pw) {
    PathTape& pt = tape.path[static_cast<std::size_t>(pw)];
    Vec& dx = dstate[static_cast<std::size_t>(pw)];
    for (std::size_t b = w.path[pw].blocks.size(); b-- > 0;) {
      self_block_bwd(w.path[pw].blocks[b], pt.blocks[b], n[pw], d, cfg.h, dx,
                     grads->path[pw].blocks[b]);
    }
    Vec dx0(static_cast<std::size_t>(n[pw]), 0.0);
    linear_bwd(pt.x0, n[pw], 1, w.path[pw].embed_w, dx, dx0,
               grads->path[pw].embed_w, grads->path[pw].embed_b);
    for (int i = 0; i < n[pw]; ++i) {
      grads->input_scale.v[0] +=
          dx0[static_cast<std::size_t>(i)] * pt.ystar[static_cast<std::size_t>(i)];
      grads->input_shift.v[0] += dx0[static_cast<std::size_t>(i)];
    }
  }

  return loss_value;
}

}  // namespace nbscreen::tf
