#include <algorithm>
#include <cmath>
#include <limits>

#include "nbscreen/parallel.hpp"
#include "nbscreen/set_transformer.hpp"

namespace nbscreen::tf {

namespace {

std::vector<Tensor*> tensor_list(TransformerWeights& w) {
  std::vector<Tensor*> out;
  w.visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

void zero_tensors(TransformerWeights& w) {
  w.visit([](const std::string&, Tensor& t) {
    std::fill(t.v.begin(), t.v.end(), 0.0);
  });
}

void scale_tensors(TransformerWeights& w, double s) {
  w.visit([s](const std::string&, Tensor& t) {
    for (double& x : t.v) {
      x *= s;
    }
  });
}

void add_tensors(TransformerWeights& dst, const TransformerWeights& src) {
  auto d = tensor_list(dst);
  auto s = tensor_list(const_cast<TransformerWeights&>(src));
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d[i]->v.size(); ++j) {
      d[i]->v[j] += s[i]->v[j];
    }
  }
}

// Decoupled weight decay Adam (AdamW).
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  TransformerWeights m;
  TransformerWeights v;

  explicit AdamW(const TransformerWeights& w)
      : m(zeros_like(w)), v(zeros_like(w)) {}

  void step(double lr, double weight_decay, TransformerWeights& w,
            const TransformerWeights& grads) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    auto wt = tensor_list(w);
    auto gt = tensor_list(const_cast<TransformerWeights&>(grads));
    auto mt = tensor_list(m);
    auto vt = tensor_list(v);
    for (std::size_t i = 0; i < wt.size(); ++i) {
      for (std::size_t j = 0; j < wt[i]->v.size(); ++j) {
        const double g = gt[i]->v[j];
        double& mm = mt[i]->v[j];
        double& vv = vt[i]->v[j];
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g * g;
        const double mhat = mm / bc1;
        const double vhat = vv / bc2;
        double& x = wt[i]->v[j];
        x -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x);
      }
    }
  }
};

struct TrainingPair {
  Problem problem;
  Prediction target;
};

TrainingPair make_pair_from_stream(const Priors& priors, RngStream stream) {
  auto theta_rng = stream.substream(0);
  auto data_rng = stream.substream(1);
  const auto [theta, design] = sample_theta(priors, theta_rng);
  TrainingPair out;
  out.problem = generate_problem(theta, design, data_rng);
  out.target = Prediction{theta.mu, theta.beta, theta.alpha()};
  return out;
}

}  // namespace

TrainResult train(const ModelConfig& cfg_model, const TrainConfig& cfg_train,
                  const Priors& priors, RngStream& rng,
                  const std::function<void(const EpochLog&)>& epoch_callback) {
  cfg_model.validate();
  cfg_train.validate();
  priors.validate();
  const int threads = resolve_threads(cfg_train.threads);
  const LossWeights lw = cfg_train.loss_weights;

  auto init_rng = rng.substream(0);
  TransformerWeights w = init_model(cfg_model, init_rng);

  // Fixed held-out validation set, never resampled.
  const auto val_rng = rng.substream(1);
  std::vector<TrainingPair> val(static_cast<std::size_t>(cfg_train.validation_size));
  parallel_for(static_cast<std::int64_t>(val.size()), threads,
               [&](std::int64_t i) {
                 val[static_cast<std::size_t>(i)] = make_pair_from_stream(
                     priors, val_rng.substream(static_cast<std::uint64_t>(i)));
               });

  auto validation_loss = [&](const TransformerWeights& ww) {
    std::vector<double> losses(val.size());
    parallel_for(static_cast<std::int64_t>(val.size()), threads,
                 [&](std::int64_t i) {
                   const auto& pair = val[static_cast<std::size_t>(i)];
                   losses[static_cast<std::size_t>(i)] =
                       loss(forward(ww, pair.problem), pair.target, lw);
                 });
    double sum = 0.0;
    for (double x : losses) {
      sum += x;
    }
    return sum / static_cast<double>(losses.size());
  };

  const auto data_rng = rng.substream(2);
  AdamW opt(w);
  double lr = cfg_train.learning_rate;

  const int n_batches =
      (cfg_train.n_epoch_problems + cfg_train.batch_size - 1) / cfg_train.batch_size;
  const int workers = std::max(1, threads);

  std::vector<TransformerWeights> partials;
  partials.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) {
    partials.push_back(zeros_like(w));
  }
  TransformerWeights grads = zeros_like(w);

  TrainResult result;
  result.weights = w;
  result.best_epoch = -1;
  result.init_val_loss = validation_loss(w);
  double best_val = std::numeric_limits<double>::infinity();
  double sched_best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  for (int epoch = 0; epoch < cfg_train.epochs; ++epoch) {
    double epoch_loss_sum = 0.0;
    std::int64_t epoch_loss_count = 0;
    for (int batch = 0; batch < n_batches; ++batch) {
      const int count = std::min(cfg_train.batch_size,
                                 cfg_train.n_epoch_problems -
                                     batch * cfg_train.batch_size);
      // fresh synthetic pairs for this batch
      std::vector<TrainingPair> pairs(static_cast<std::size_t>(count));
      std::vector<RngStream> dropout_streams;
      dropout_streams.reserve(static_cast<std::size_t>(count));
      for (int j = 0; j < count; ++j) {
        const std::uint64_t global_index =
            static_cast<std::uint64_t>(epoch) *
                static_cast<std::uint64_t>(cfg_train.n_epoch_problems) +
            static_cast<std::uint64_t>(batch) *
                static_cast<std::uint64_t>(cfg_train.batch_size) +
            static_cast<std::uint64_t>(j);
        const auto stream = data_rng.substream(global_index);
        pairs[static_cast<std::size_t>(j)] = make_pair_from_stream(priors, stream);
        dropout_streams.push_back(stream.substream(2));
      }

      std::vector<double> losses(static_cast<std::size_t>(count), 0.0);
      const int chunk = (count + workers - 1) / workers;
      parallel_for(workers, workers, [&](std::int64_t worker) {
        TransformerWeights& acc = partials[static_cast<std::size_t>(worker)];
        zero_tensors(acc);
        const int lo = static_cast<int>(worker) * chunk;
        const int hi = std::min(count, lo + chunk);
        for (int j = lo; j < hi; ++j) {
          RngStream dropout = dropout_streams[static_cast<std::size_t>(j)];
          losses[static_cast<std::size_t>(j)] =
              backward(w, pairs[static_cast<std::size_t>(j)].problem,
                       pairs[static_cast<std::size_t>(j)].target, lw, &acc,
                       cfg_model.dropout > 0.0 ? &dropout : nullptr);
        }
      });

      zero_tensors(grads);
      for (int worker = 0; worker < workers; ++worker) {
        add_tensors(grads, partials[static_cast<std::size_t>(worker)]);
      }
      scale_tensors(grads, 1.0 / count);

      double batch_loss = 0.0;
      for (double x : losses) {
        batch_loss += x;
      }
      batch_loss /= count;
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("training loss became non-finite at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batch),
                               result.log);
      }
      epoch_loss_sum += batch_loss * count;
      epoch_loss_count += count;

      opt.step(lr, cfg_train.weight_decay, w, grads);
    }

    const double val_loss = validation_loss(w);
    if (!std::isfinite(val_loss)) {
      throw TrainingDiverged(
          "validation loss became non-finite at epoch " + std::to_string(epoch),
          result.log);
    }
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = epoch_loss_sum / static_cast<double>(epoch_loss_count);
    row.val_loss = val_loss;
    row.lr = lr;
    result.log.push_back(row);
    if (epoch_callback) {
      epoch_callback(row);
    }

    if (val_loss < best_val) {
      best_val = val_loss;
      result.weights = w;
      result.best_epoch = epoch;
    }
    // ReduceLROnPlateau with relative threshold 1e-4
    if (val_loss < sched_best * (1.0 - 1e-4)) {
      sched_best = val_loss;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= cfg_train.plateau_patience) {
        lr = std::max(lr * cfg_train.plateau_factor, 1e-7);
        bad_epochs = 0;
      }
    }
  }
  return result;
}

}  // namespace nbscreen::tf
