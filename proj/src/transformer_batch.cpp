#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <utility>
#include <vector>

#include "nbscreen/set_transformer.hpp"

namespace nbscreen::tf {

namespace {

using FVec = std::vector<float>;

FVec to_f32(const Tensor& t) {
  FVec out(t.v.size());
  for (std::size_t i = 0; i < t.v.size(); ++i) {
    out[i] = static_cast<float>(t.v[i]);
  }
  return out;
}

struct FAttn {
  FVec wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FLn {
  FVec gamma, beta;
};
struct FFf {
  FVec w1, b1, w2, b2;
};
struct FSelfBlock {
  FLn ln1;
  FAttn attn;
  FLn ln2;
  FFf ff;
};
struct FCrossBlock {
  FLn ln_self;
  FAttn self_attn;
  FLn ln_cross;
  FAttn cross_attn;
  FLn ln_ff;
  FFf ff;
};
struct FPath {
  FVec embed_w, embed_b;
  std::vector<FSelfBlock> blocks;
  std::vector<FCrossBlock> cross;
  FLn final_ln;
};

FAttn pack_attn(const AttentionWeights& a) {
  return {to_f32(a.wq), to_f32(a.bq), to_f32(a.wk), to_f32(a.bk),
          to_f32(a.wv), to_f32(a.bv), to_f32(a.wo), to_f32(a.bo)};
}
FLn pack_ln(const LayerNormWeights& l) { return {to_f32(l.gamma), to_f32(l.beta)}; }
FFf pack_ff(const FeedForwardWeights& f) {
  return {to_f32(f.w1), to_f32(f.b1), to_f32(f.w2), to_f32(f.b2)};
}

// Exponential with a Cody-Waite reduction and a degree-6 polynomial; pure
// arithmetic so the batch loops vectorize. About 1e-7 relative accuracy.
inline float fast_expf(float x) {
  constexpr float kLog2e = 1.442695040888963f;
  constexpr float kC1 = 0.693359375f;
  constexpr float kC2 = -2.12194440e-4f;
  x = std::min(88.0f, std::max(-87.0f, x));
  const float z = x * kLog2e;
  const float n = std::floor(z + 0.5f);
  x -= n * kC1;
  x -= n * kC2;
  float p = 1.9875691500e-4f;
  p = p * x + 1.3981999507e-3f;
  p = p * x + 8.3334519073e-3f;
  p = p * x + 4.1665795894e-2f;
  p = p * x + 1.6666665459e-1f;
  p = p * x + 5.0000001201e-1f;
  const float r = p * x * x + x + 1.0f;
  const std::int32_t bits = (static_cast<std::int32_t>(n) + 127) << 23;
  float scale;
  std::memcpy(&scale, &bits, sizeof(scale));
  return r * scale;
}

// C[M x N] = A[M x K] * W[K x N] (+ bias per output column when b != null).
// Register-tiled 4x32 micro-kernel; W rows are reloaded once per four A rows.
template <int JT>
inline void gemm_tile(const float* __restrict__ a, int rows, int k,
                      const float* __restrict__ w, int n, int j0,
                      const float* __restrict__ b, float* __restrict__ c,
                      std::size_t i0) {
  float acc[4][JT];
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < JT; ++j) {
      acc[r][j] = b != nullptr ? b[j0 + j] : 0.0f;
    }
  }
  for (int kk = 0; kk < k; ++kk) {
    const float* __restrict__ wr = w + static_cast<std::size_t>(kk) * n + j0;
    for (int r = 0; r < rows; ++r) {
      const float av = a[(i0 + static_cast<std::size_t>(r)) * k + kk];
      for (int j = 0; j < JT; ++j) {
        acc[r][j] += av * wr[j];
      }
    }
  }
  for (int r = 0; r < rows; ++r) {
    float* crow = c + (i0 + static_cast<std::size_t>(r)) * n + j0;
    for (int j = 0; j < JT; ++j) {
      crow[j] = acc[r][j];
    }
  }
}

void fgemm(const float* __restrict__ a, int m, int k,
           const float* __restrict__ w, int n, const float* __restrict__ b,
           float* __restrict__ c) {
  constexpr int JT = 32;
  for (int i0 = 0; i0 < m; i0 += 4) {
    const int rows = std::min(4, m - i0);
    int j0 = 0;
    for (; j0 + JT <= n; j0 += JT) {
      if (rows == 4) {
        gemm_tile<JT>(a, 4, k, w, n, j0, b, c, static_cast<std::size_t>(i0));
      } else {
        gemm_tile<JT>(a, rows, k, w, n, j0, b, c, static_cast<std::size_t>(i0));
      }
    }
    // column tail
    for (int i = i0; i < i0 + rows; ++i) {
      const float* __restrict__ arow = a + static_cast<std::size_t>(i) * k;
      float* __restrict__ crow = c + static_cast<std::size_t>(i) * n;
      for (int j = j0; j < n; ++j) {
        crow[j] = b != nullptr ? b[j] : 0.0f;
      }
      for (int kk = 0; kk < k; ++kk) {
        const float av = arow[kk];
        const float* __restrict__ wrow = w + static_cast<std::size_t>(kk) * n;
        for (int j = j0; j < n; ++j) {
          crow[j] += av * wrow[j];
        }
      }
    }
  }
}

void layer_norm_rows(const float* __restrict__ x, int rows, int d,
                     const FLn& w, float* __restrict__ out) {
  constexpr float kEps = 1e-5f;
  for (int i = 0; i < rows; ++i) {
    const float* row = x + static_cast<std::size_t>(i) * d;
    float mean = 0.0f;
    for (int c = 0; c < d; ++c) {
      mean += row[c];
    }
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (int c = 0; c < d; ++c) {
      const float t = row[c] - mean;
      var += t * t;
    }
    var /= static_cast<float>(d);
    const float rstd = 1.0f / std::sqrt(var + kEps);
    float* o = out + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) {
      o[c] = w.gamma[static_cast<std::size_t>(c)] * ((row[c] - mean) * rstd) +
             w.beta[static_cast<std::size_t>(c)];
    }
  }
}

// Same tanh-parameterized GELU as the reference double path.
inline float gelu_f(float x) {
  const float w = 1.5957691216057308f * (x + 0.044715f * x * x * x);
  return x / (1.0f + fast_expf(-w));
}

// Softmax attention for one problem: query rows [q0, q0+nq), key/value rows
// [k0, k0+nk) of the projected buffers; output written to concat rows.
void attend_problem(const float* q, const float* k, const float* v, int d,
                    int h, int q0, int nq, int k0, int nk, float* concat) {
  const int dk = d / h;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  float scores[16];
  for (int hh = 0; hh < h; ++hh) {
    const int off = hh * dk;
    for (int i = 0; i < nq; ++i) {
      const float* qi = q + static_cast<std::size_t>(q0 + i) * d + off;
      float max_s = -1e30f;
      for (int j = 0; j < nk; ++j) {
        const float* kj = k + static_cast<std::size_t>(k0 + j) * d + off;
        float s = 0.0f;
        for (int t = 0; t < dk; ++t) {
          s += qi[t] * kj[t];
        }
        s *= scale;
        scores[j] = s;
        max_s = std::max(max_s, s);
      }
      float denom = 0.0f;
      for (int j = 0; j < nk; ++j) {
        scores[j] = fast_expf(scores[j] - max_s);
        denom += scores[j];
      }
      const float inv = 1.0f / denom;
      float* crow = concat + static_cast<std::size_t>(q0 + i) * d + off;
      for (int t = 0; t < dk; ++t) {
        crow[t] = 0.0f;
      }
      for (int j = 0; j < nk; ++j) {
        const float p = scores[j] * inv;
        const float* vj = v + static_cast<std::size_t>(k0 + j) * d + off;
        for (int t = 0; t < dk; ++t) {
          crow[t] += p * vj[t];
        }
      }
    }
  }
}

}  // namespace

struct BatchedForward::Impl {
  ModelConfig cfg;
  float in_scale = 1.0f;
  float in_shift = 0.0f;
  std::array<FPath, 2> path;
  FVec head_w1, head_b1, head_w2, head_b2, head_w3, head_b3;
  float t_scale[3] = {1.0f, 1.0f, 1.0f};
  float t_shift[3] = {0.0f, 0.0f, 0.0f};

  explicit Impl(const TransformerWeights& w) : cfg(w.config) {
    cfg.validate();
    in_scale = static_cast<float>(w.input_scale.v[0]);
    in_shift = static_cast<float>(w.input_shift.v[0]);
    for (int p = 0; p < 2; ++p) {
      path[p].embed_w = to_f32(w.path[p].embed_w);
      path[p].embed_b = to_f32(w.path[p].embed_b);
      for (const auto& b : w.path[p].blocks) {
        path[p].blocks.push_back(
            {pack_ln(b.ln1), pack_attn(b.attn), pack_ln(b.ln2), pack_ff(b.ff)});
      }
      for (const auto& c : w.path[p].cross) {
        path[p].cross.push_back({pack_ln(c.ln_self), pack_attn(c.self_attn),
                                 pack_ln(c.ln_cross), pack_attn(c.cross_attn),
                                 pack_ln(c.ln_ff), pack_ff(c.ff)});
      }
      path[p].final_ln = pack_ln(w.path[p].final_ln);
    }
    head_w1 = to_f32(w.head.w1);
    head_b1 = to_f32(w.head.b1);
    head_w2 = to_f32(w.head.w2);
    head_b2 = to_f32(w.head.b2);
    head_w3 = to_f32(w.head.w3);
    head_b3 = to_f32(w.head.b3);
    for (int k = 0; k < 3; ++k) {
      t_scale[k] = static_cast<float>(w.target_scale.v[static_cast<std::size_t>(k)]);
      t_shift[k] = static_cast<float>(w.target_shift.v[static_cast<std::size_t>(k)]);
    }
  }

  // One homogeneous group of problems sharing (n1, n2).
  void run_group(const std::vector<const Problem*>& group, int n1, int n2,
                 std::vector<Prediction>& out,
                 const std::vector<std::size_t>& slots) const {
    const int batch = static_cast<int>(group.size());
    const int d = cfg.d;
    const int ff = cfg.ff_dim();
    const std::array<int, 2> n{n1, n2};
    std::array<int, 2> rows{batch * n1, batch * n2};

    std::array<FVec, 2> state;
    FVec normed, q, k, v, concat, branch, hidden;
    for (int p = 0; p < 2; ++p) {
      // y* -> scaled -> embed
      FVec x0(static_cast<std::size_t>(rows[p]));
      for (int g = 0; g < batch; ++g) {
        const Problem& prob = *group[static_cast<std::size_t>(g)];
        int slot = 0;
        for (std::size_t i = 0; i < prob.size(); ++i) {
          if (prob.labels[i] != p) {
            continue;
          }
          const double ystar = transform_input(
              static_cast<double>(prob.counts[i]), prob.exposures[i]);
          x0[static_cast<std::size_t>(g * n[p] + slot)] =
              in_scale * static_cast<float>(ystar) + in_shift;
          ++slot;
        }
      }
      state[p].assign(static_cast<std::size_t>(rows[p]) * d, 0.0f);
      fgemm(x0.data(), rows[p], 1, path[p].embed_w.data(), d,
            path[p].embed_b.data(), state[p].data());

      // self-attention stack
      for (const auto& blk : path[p].blocks) {
        normed.resize(state[p].size());
        layer_norm_rows(state[p].data(), rows[p], d, blk.ln1, normed.data());
        q.resize(state[p].size());
        k.resize(state[p].size());
        v.resize(state[p].size());
        concat.assign(state[p].size(), 0.0f);
        fgemm(normed.data(), rows[p], d, blk.attn.wq.data(), d,
              blk.attn.bq.data(), q.data());
        fgemm(normed.data(), rows[p], d, blk.attn.wk.data(), d,
              blk.attn.bk.data(), k.data());
        fgemm(normed.data(), rows[p], d, blk.attn.wv.data(), d,
              blk.attn.bv.data(), v.data());
        for (int g = 0; g < batch; ++g) {
          attend_problem(q.data(), k.data(), v.data(), d, cfg.h, g * n[p], n[p],
                         g * n[p], n[p], concat.data());
        }
        branch.resize(state[p].size());
        fgemm(concat.data(), rows[p], d, blk.attn.wo.data(), d,
              blk.attn.bo.data(), branch.data());
        for (std::size_t i = 0; i < state[p].size(); ++i) {
          state[p][i] += branch[i];
        }
        layer_norm_rows(state[p].data(), rows[p], d, blk.ln2, normed.data());
        hidden.resize(static_cast<std::size_t>(rows[p]) * ff);
        fgemm(normed.data(), rows[p], d, blk.ff.w1.data(), ff, blk.ff.b1.data(),
              hidden.data());
        for (float& x : hidden) {
          x = gelu_f(x);
        }
        fgemm(hidden.data(), rows[p], ff, blk.ff.w2.data(), d, blk.ff.b2.data(),
              branch.data());
        for (std::size_t i = 0; i < state[p].size(); ++i) {
          state[p][i] += branch[i];
        }
      }
    }

    // bidirectional cross blocks on shared snapshots
    for (int level = 0; level < cfg.cross_blocks; ++level) {
      const std::array<FVec, 2> snap = state;
      for (int p = 0; p < 2; ++p) {
        const auto& blk = path[p].cross[static_cast<std::size_t>(level)];
        const int other = 1 - p;

        normed.resize(state[p].size());
        layer_norm_rows(state[p].data(), rows[p], d, blk.ln_self, normed.data());
        q.resize(state[p].size());
        k.resize(state[p].size());
        v.resize(state[p].size());
        concat.assign(state[p].size(), 0.0f);
        fgemm(normed.data(), rows[p], d, blk.self_attn.wq.data(), d,
              blk.self_attn.bq.data(), q.data());
        fgemm(normed.data(), rows[p], d, blk.self_attn.wk.data(), d,
              blk.self_attn.bk.data(), k.data());
        fgemm(normed.data(), rows[p], d, blk.self_attn.wv.data(), d,
              blk.self_attn.bv.data(), v.data());
        for (int g = 0; g < batch; ++g) {
          attend_problem(q.data(), k.data(), v.data(), d, cfg.h, g * n[p], n[p],
                         g * n[p], n[p], concat.data());
        }
        branch.resize(state[p].size());
        fgemm(concat.data(), rows[p], d, blk.self_attn.wo.data(), d,
              blk.self_attn.bo.data(), branch.data());
        for (std::size_t i = 0; i < state[p].size(); ++i) {
          state[p][i] += branch[i];
        }

        layer_norm_rows(state[p].data(), rows[p], d, blk.ln_cross, normed.data());
        FVec kk(static_cast<std::size_t>(rows[other]) * d);
        FVec vv(kk.size());
        fgemm(snap[other].data(), rows[other], d, blk.cross_attn.wk.data(), d,
              blk.cross_attn.bk.data(), kk.data());
        fgemm(snap[other].data(), rows[other], d, blk.cross_attn.wv.data(), d,
              blk.cross_attn.bv.data(), vv.data());
        fgemm(normed.data(), rows[p], d, blk.cross_attn.wq.data(), d,
              blk.cross_attn.bq.data(), q.data());
        concat.assign(state[p].size(), 0.0f);
        for (int g = 0; g < batch; ++g) {
          attend_problem(q.data(), kk.data(), vv.data(), d, cfg.h, g * n[p],
                         n[p], g * n[other], n[other], concat.data());
        }
        fgemm(concat.data(), rows[p], d, blk.cross_attn.wo.data(), d,
              blk.cross_attn.bo.data(), branch.data());
        for (std::size_t i = 0; i < state[p].size(); ++i) {
          state[p][i] += branch[i];
        }

        layer_norm_rows(state[p].data(), rows[p], d, blk.ln_ff, normed.data());
        hidden.resize(static_cast<std::size_t>(rows[p]) * ff);
        fgemm(normed.data(), rows[p], d, blk.ff.w1.data(), ff, blk.ff.b1.data(),
              hidden.data());
        for (float& x : hidden) {
          x = gelu_f(x);
        }
        fgemm(hidden.data(), rows[p], ff, blk.ff.w2.data(), d, blk.ff.b2.data(),
              branch.data());
        for (std::size_t i = 0; i < state[p].size(); ++i) {
          state[p][i] += branch[i];
        }
      }
    }

    // final norm, mean pool, bilinear combine, head
    FVec xi(static_cast<std::size_t>(batch) * 4 * d, 0.0f);
    for (int p = 0; p < 2; ++p) {
      normed.resize(state[p].size());
      layer_norm_rows(state[p].data(), rows[p], d, path[p].final_ln,
                      normed.data());
      for (int g = 0; g < batch; ++g) {
        float* dst = xi.data() + static_cast<std::size_t>(g) * 4 * d +
                     static_cast<std::size_t>(p) * d;
        for (int i = 0; i < n[p]; ++i) {
          const float* row =
              normed.data() + static_cast<std::size_t>(g * n[p] + i) * d;
          for (int c = 0; c < d; ++c) {
            dst[c] += row[c];
          }
        }
        const float inv = 1.0f / static_cast<float>(n[p]);
        for (int c = 0; c < d; ++c) {
          dst[c] *= inv;
        }
      }
    }
    for (int g = 0; g < batch; ++g) {
      float* row = xi.data() + static_cast<std::size_t>(g) * 4 * d;
      for (int c = 0; c < d; ++c) {
        row[2 * d + c] = row[c] - row[d + c];
        row[3 * d + c] = row[c] * row[d + c];
      }
    }

    const int d4 = 4 * d;
    FVec h1(static_cast<std::size_t>(batch) * d4);
    fgemm(xi.data(), batch, d4, head_w1.data(), d4, head_b1.data(), h1.data());
    for (float& x : h1) {
      x = gelu_f(x);
    }
    FVec h2(static_cast<std::size_t>(batch) * d4);
    fgemm(h1.data(), batch, d4, head_w2.data(), d4, head_b2.data(), h2.data());
    for (float& x : h2) {
      x = gelu_f(x);
    }
    FVec o3(static_cast<std::size_t>(batch) * 3);
    fgemm(h2.data(), batch, d4, head_w3.data(), 3, head_b3.data(), o3.data());

    for (int g = 0; g < batch; ++g) {
      Prediction pred;
      pred.mu = t_scale[0] * o3[static_cast<std::size_t>(g) * 3 + 0] + t_shift[0];
      pred.beta = t_scale[1] * o3[static_cast<std::size_t>(g) * 3 + 1] + t_shift[1];
      pred.alpha = t_scale[2] * o3[static_cast<std::size_t>(g) * 3 + 2] + t_shift[2];
      out[slots[static_cast<std::size_t>(g)]] = pred;
    }
  }
};

BatchedForward::BatchedForward(const TransformerWeights& w)
    : impl_(std::make_unique<Impl>(w)) {}
BatchedForward::~BatchedForward() = default;
BatchedForward::BatchedForward(BatchedForward&&) noexcept = default;

std::vector<Prediction> BatchedForward::run(
    const std::vector<Problem>& problems) const {
  std::vector<Prediction> out(problems.size());
  // group by design so each group runs as one packed batch
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    problems[i].validate();
    int n1 = 0;
    for (int x : problems[i].labels) {
      n1 += x == 0;
    }
    const int n2 = static_cast<int>(problems[i].size()) - n1;
    if (n1 < 2 || n1 > 10 || n2 < 2 || n2 > 10) {
      throw std::invalid_argument(
          "labels: transformer supports set sizes between 2 and 10");
    }
    groups[{n1, n2}].push_back(i);
  }
  for (const auto& [design, slots] : groups) {
    std::vector<const Problem*> group;
    group.reserve(slots.size());
    for (std::size_t idx : slots) {
      group.push_back(&problems[idx]);
    }
    impl_->run_group(group, design.first, design.second, out, slots);
  }
  return out;
}

Prediction BatchedForward::run_one(const Problem& p) const {
  return run(std::vector<Problem>{p})[0];
}

}  // namespace nbscreen::tf
