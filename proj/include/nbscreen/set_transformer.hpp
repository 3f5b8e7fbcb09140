#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "nbscreen/nb_model.hpp"
#include "nbscreen/synth.hpp"

namespace nbscreen::tf {

// Architecture knobs. The trained configuration in the write-up is
// d = 128, h = 8, L = 3, dropout 0.1; ff_mult and cross_blocks default to
// the standard 4x feed-forward and one bidirectional cross-attention block.
struct ModelConfig {
  int d = 128;
  int h = 8;
  int L = 3;
  double dropout = 0.1;
  int ff_mult = 4;
  int cross_blocks = 1;

  int ff_dim() const { return d * ff_mult; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  static Tensor zeros(std::vector<int> shape);
  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerNormWeights {
  Tensor gamma, beta;
};

struct FeedForwardWeights {
  Tensor w1, b1, w2, b2;
};

struct SelfBlockWeights {
  LayerNormWeights ln1;
  AttentionWeights attn;
  LayerNormWeights ln2;
  FeedForwardWeights ff;
};

// Decoder-style cross block: self-attention, cross-attention against the
// other set's representations, feed-forward; pre-norm residuals throughout.
struct CrossBlockWeights {
  LayerNormWeights ln_self;
  AttentionWeights self_attn;
  LayerNormWeights ln_cross;
  AttentionWeights cross_attn;
  LayerNormWeights ln_ff;
  FeedForwardWeights ff;
};

struct PathwayWeights {
  Tensor embed_w, embed_b;  // 1 -> d projection of the scaled y* scalar
  std::vector<SelfBlockWeights> blocks;
  std::vector<CrossBlockWeights> cross;
  LayerNormWeights final_ln;
};

struct HeadWeights {
  Tensor w1, b1, w2, b2, w3, b3;  // 4d -> 4d -> 4d -> 3
};

// Full parameter set. The two set pathways are independent towers; the
// input/target scale tensors are the learned constant factors applied to
// y* and to each regression target.
struct TransformerWeights {
  ModelConfig config;
  Tensor input_scale, input_shift;    // [1]
  std::array<PathwayWeights, 2> path;
  HeadWeights head;
  Tensor target_scale, target_shift;  // [3]

  std::int64_t parameter_count() const;

  // Enumerates every tensor with a stable name, in serialization order.
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;
};

// Zero tensors with the same shapes; used as a gradient accumulator.
TransformerWeights zeros_like(const TransformerWeights& w);

// Scaled-uniform (Glorot) initialization, deterministic in the stream.
// Values are exactly representable in f32 so that a save/load round trip
// is the identity.
TransformerWeights init_model(const ModelConfig& cfg, RngStream& rng);

struct Prediction {
  double mu = 0.0;
  double beta = 0.0;
  double alpha = 0.0;
};

// Reference forward pass: double precision, dropout disabled, deterministic.
// Requires 2 <= |Y1| <= 10 and 2 <= |Y2| <= 10.
Prediction forward(const TransformerWeights& w, const Problem& p);

struct LossWeights {
  double w_mu = 1.0;
  double w_beta = 1.0;
  double w_alpha = 2.0;
};

double loss(const Prediction& pred, const Prediction& target,
            const LossWeights& lw);

// Runs forward (with dropout when dropout_rng is given), backpropagates the
// weighted squared-error loss and accumulates parameter gradients into
// *grads. Returns the loss value.
double backward(const TransformerWeights& w, const Problem& p,
                const Prediction& target, const LossWeights& lw,
                TransformerWeights* grads, RngStream* dropout_rng = nullptr);

struct TrainConfig {
  int n_epoch_problems = 100000;
  int batch_size = 32;
  int epochs = 100;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  LossWeights loss_weights;
  int validation_size = 2000;
  int threads = 1;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  TransformerWeights weights;  // best-validation checkpoint
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double init_val_loss = 0.0;  // validation loss before the first update
};

// Raised when the loss stops being finite; carries the epochs completed so
// far so callers can keep the partial log.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what, std::vector<EpochLog> log)
      : std::runtime_error(what), partial_log(std::move(log)) {}
  std::vector<EpochLog> partial_log;
};

// AdamW with ReduceLROnPlateau over freshly sampled synthetic problems.
// Bit-reproducible when cfg.threads == 1.
TrainResult train(const ModelConfig& cfg_model, const TrainConfig& cfg_train,
                  const Priors& priors, RngStream& rng,
                  const std::function<void(const EpochLog&)>& epoch_callback = {});

// NBTF weight file (see docs/weights_format.md): magic + version + JSON
// header with config and tensor index + little-endian f32 payload.
void save_weights(const TransformerWeights& w, const std::string& path);
TransformerWeights load_weights(const std::string& path);

// Batched f32 inference engine used by the benchmarks: packs the weights
// once and evaluates whole problem sets grouped by design. Agrees with
// forward() to f32 accuracy.
class BatchedForward {
 public:
  explicit BatchedForward(const TransformerWeights& w);
  ~BatchedForward();
  BatchedForward(BatchedForward&&) noexcept;

  std::vector<Prediction> run(const std::vector<Problem>& problems) const;
  Prediction run_one(const Problem& p) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

template <typename F>
void TransformerWeights::visit(F&& f) {
  auto attn = [&](const std::string& prefix, AttentionWeights& a) {
    f(prefix + ".wq", a.wq);
    f(prefix + ".bq", a.bq);
    f(prefix + ".wk", a.wk);
    f(prefix + ".bk", a.bk);
    f(prefix + ".wv", a.wv);
    f(prefix + ".bv", a.bv);
    f(prefix + ".wo", a.wo);
    f(prefix + ".bo", a.bo);
  };
  auto ln = [&](const std::string& prefix, LayerNormWeights& l) {
    f(prefix + ".gamma", l.gamma);
    f(prefix + ".beta", l.beta);
  };
  auto ff = [&](const std::string& prefix, FeedForwardWeights& w2) {
    f(prefix + ".w1", w2.w1);
    f(prefix + ".b1", w2.b1);
    f(prefix + ".w2", w2.w2);
    f(prefix + ".b2", w2.b2);
  };
  f("input_scale", input_scale);
  f("input_shift", input_shift);
  for (int p = 0; p < 2; ++p) {
    const std::string pp = "path" + std::to_string(p);
    f(pp + ".embed_w", path[p].embed_w);
    f(pp + ".embed_b", path[p].embed_b);
    for (std::size_t b = 0; b < path[p].blocks.size(); ++b) {
      const std::string bp = pp + ".block" + std::to_string(b);
      ln(bp + ".ln1", path[p].blocks[b].ln1);
      attn(bp + ".attn", path[p].blocks[b].attn);
      ln(bp + ".ln2", path[p].blocks[b].ln2);
      ff(bp + ".ff", path[p].blocks[b].ff);
    }
    for (std::size_t c = 0; c < path[p].cross.size(); ++c) {
      const std::string cp = pp + ".cross" + std::to_string(c);
      ln(cp + ".ln_self", path[p].cross[c].ln_self);
      attn(cp + ".self_attn", path[p].cross[c].self_attn);
      ln(cp + ".ln_cross", path[p].cross[c].ln_cross);
      attn(cp + ".cross_attn", path[p].cross[c].cross_attn);
      ln(cp + ".ln_ff", path[p].cross[c].ln_ff);
      ff(cp + ".ff", path[p].cross[c].ff);
    }
    ln(pp + ".final_ln", path[p].final_ln);
  }
  f("head.w1", head.w1);
  f("head.b1", head.b1);
  f("head.w2", head.w2);
  f("head.b2", head.b2);
  f("head.w3", head.w3);
  f("head.b3", head.b3);
  f("target_scale", target_scale);
  f("target_shift", target_shift);
}

template <typename F>
void TransformerWeights::visit(F&& f) const {
  const_cast<TransformerWeights*>(this)->visit(
      [&](const std::string& name, Tensor& t) {
        f(name, static_cast<const Tensor&>(t));
      });
}

}  // namespace nbscreen::tf
