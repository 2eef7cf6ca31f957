#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "reat/attacks.hpp"
#include "reat/datasets.hpp"
#include "reat/evalkit.hpp"
#include "reat/losses.hpp"
#include "reat/models.hpp"
#include "reat/rebalance.hpp"

namespace reat {

enum class Method { pgd_at, reat };

inline Method method_from(const std::string& s) {
  if (s == "pgd-at") return Method::pgd_at;
  if (s == "reat") return Method::reat;
  throw std::invalid_argument("unknown method '" + s + "'");
}
inline const char* method_name(Method m) { return m == Method::pgd_at ? "pgd-at" : "reat"; }

struct TrainConfig {
  Method method = Method::pgd_at;
  LtLoss lt_loss = LtLoss::bsl;
  size_t epochs = 30;
  size_t batch_size = 64;
  double lr0 = 0.1;
  std::vector<double> decay_points = {0.75, 0.9375};  // fractions of total epochs
  double decay_factor = 0.1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  double lambda_tail = 1.0;
  AttackConfig gen_attack;  // AE generation attack
  uint64_t seed = 1;
  bool augment = false;
  bool log_ae_distances = true;
  size_t probe_samples = 500;
  int probe_steps = 10;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be > 0");
    if (lambda_tail < 0.0) throw std::invalid_argument("train: lambda_tail must be >= 0");
    if (decay_factor <= 0.0) throw std::invalid_argument("train: decay_factor must be > 0");
    double prev = 0.0;
    for (double p : decay_points) {
      if (p <= 0.0 || p >= 1.0)
        throw std::invalid_argument("train: decay points must be inside (0,1)");
      if (p <= prev) throw std::invalid_argument("train: decay points must ascend");
      prev = p;
    }
    gen_attack.validate();
  }
};

// lr0 * factor^(number of decay points passed); points are fractions of the
// total epoch budget, floored to epoch indices.
inline double lr_at_epoch(const TrainConfig& cfg, size_t epoch) {
  double lr = cfg.lr0;
  for (double p : cfg.decay_points) {
    size_t at = static_cast<size_t>(std::floor(p * static_cast<double>(cfg.epochs)));
    if (epoch >= at) lr *= cfg.decay_factor;
  }
  return lr;
}

struct EpochStats {
  size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  uint64_t ae_count = 0;
  double ae_entropy = 0.0;  // normalized
  double probe_robust_acc = -1.0;
  AePredictionCounts counts;
  EffectiveNumbers effective;
  RblWeights next_weights;
};

// Weights used in epoch k derive only from epoch k-1 counts; the first
// epoch uses the clean class counts as prior.
struct TrainState {
  ModelState model;
  std::vector<Tensor> velocity;
  size_t epoch = 0;
  AePredictionCounts counts;
  RblWeights weights;

  static TrainState init(const ModelSpec& spec, const ClassCounts& clean_counts) {
    TrainState st;
    st.model = init_model(spec);
    st.velocity.reserve(st.model.params.size());
    for (const Tensor& p : st.model.params) st.velocity.push_back(Tensor(p.shape));
    st.counts = AePredictionCounts(spec.classes);
    AePredictionCounts prior(spec.classes);
    for (size_t i = 0; i < clean_counts.classes(); ++i) prior.n[i] = clean_counts.n[i];
    st.weights = rbl_weights(effective_numbers(prior, clean_counts));
    return st;
  }
};

namespace detail {
inline void augment_batch(Tensor& batch, const Shape& sample_shape, RandomStream& rng) {
  if (sample_shape.size() != 3)
    throw std::invalid_argument("augment: requires {channels,h,w} samples");
  size_t b = batch.shape[0], c = sample_shape[0], h = sample_shape[1], w = sample_shape[2];
  constexpr size_t kPad = 4;
  std::vector<double> padded((h + 2 * kPad) * (w + 2 * kPad));
  for (size_t s = 0; s < b; ++s) {
    bool flip = rng.uniform() < 0.5;
    size_t dy = rng.index(2 * kPad + 1);
    size_t dx = rng.index(2 * kPad + 1);
    for (size_t ch = 0; ch < c; ++ch) {
      double* img = &batch.data[(s * c + ch) * h * w];
      std::fill(padded.begin(), padded.end(), 0.0);
      for (size_t i = 0; i < h; ++i)
        for (size_t j = 0; j < w; ++j) {
          size_t jj = flip ? (w - 1 - j) : j;
          padded[(i + kPad) * (w + 2 * kPad) + (j + kPad)] = img[i * w + jj];
        }
      for (size_t i = 0; i < h; ++i)
        for (size_t j = 0; j < w; ++j)
          img[i * w + j] = padded[(i + dy) * (w + 2 * kPad) + (j + dx)];
    }
  }
}
}  // namespace detail

using AeSnapshot = std::map<size_t, std::pair<int, std::vector<double>>>;

// One pass over the training data: generate AEs per batch, record their
// predicted labels, update parameters on the composite loss, refresh the
// re-balancing weights from the epoch's accumulator at the boundary.
// `ae_capture`, when set, receives this epoch's AEs keyed by sample id.
inline EpochStats train_epoch(TrainState& st, const LabeledDataset& train,
                              const ClassCounts& counts, const ClassPartition& partition,
                              const OmegaWeights& omega, const TrainConfig& cfg,
                              AeSnapshot* ae_capture = nullptr) {
  cfg.validate();
  EpochStats stats;
  stats.epoch = st.epoch;
  stats.lr = lr_at_epoch(cfg, st.epoch);
  double lambda = cfg.method == Method::reat ? cfg.lambda_tail : 0.0;
  LossParams loss_params;
  loss_params.lambda_tail = lambda;

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  RandomStream shuffle_rng = RandomStream::derived(cfg.seed, st.epoch, 0x5u);
  shuffle_rng.shuffle(order);
  RandomStream aug_rng = RandomStream::derived(cfg.seed, st.epoch, 0xau);

  double loss_sum = 0.0;
  size_t batches = 0;
  for (size_t start = 0; start < train.size(); start += cfg.batch_size, ++batches) {
    size_t end = std::min(train.size(), start + cfg.batch_size);
    std::span<const size_t> idx(order.data() + start, end - start);
    Tensor xb = assemble_batch(train, idx);
    std::vector<int> yb = batch_labels(train, idx);
    if (cfg.augment) detail::augment_batch(xb, train.sample_shape, aug_rng);

    AttackConfig gen = cfg.gen_attack;
    gen.seed = derive_seed(cfg.seed, st.epoch, 0x6du);
    gen.class_weights = st.weights.w;
    Tensor xadv = pgd_attack(st.model, xb, yb, gen, batches);
    if (ae_capture) {
      size_t ss = train.sample_size();
      for (size_t i = 0; i < idx.size(); ++i)
        (*ae_capture)[idx[i]] = {yb[i], std::vector<double>(xadv.data.begin() + i * ss,
                                                            xadv.data.begin() + (i + 1) * ss)};
    }

    ModelGraph g = build_model_graph(st.model.spec, idx.size(), false, true);
    bind_params(g, st.model);
    g.rec.bind(g.x, xadv);
    Var loss = total_loss(g.rec, cfg.lt_loss, g.logits, g.features, yb, counts, omega, partition,
                          loss_params);
    try {
      g.rec.forward();
      g.rec.backward(loss, Tensor::scalar(1.0));
    } catch (const std::exception& e) {
      throw std::runtime_error("train_epoch: aborted on batch " + std::to_string(batches) + ": " +
                               e.what());
    }
    loss_sum += g.rec.value(loss).data[0];
    record_predictions(st.counts, predict_labels(g.rec.value(g.logits)));

    for (size_t p = 0; p < st.model.params.size(); ++p) {
      const Tensor& grad = g.rec.grad(g.params[p]);
      Tensor& v = st.velocity[p];
      Tensor& theta = st.model.params[p];
      for (size_t i = 0; i < theta.numel(); ++i) {
        v.data[i] = cfg.momentum * v.data[i] -
                    stats.lr * (grad.data[i] + cfg.weight_decay * theta.data[i]);
        theta.data[i] += v.data[i];
      }
    }
  }

  stats.mean_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
  stats.counts = st.counts;
  stats.ae_count = st.counts.total();
  AeHistogram hist;
  hist.counts.assign(st.counts.n.begin(), st.counts.n.end());
  stats.ae_entropy = hist.normalized_entropy();
  stats.effective = effective_numbers(st.counts, counts);
  stats.next_weights = rbl_weights(stats.effective);

  st.weights = stats.next_weights;
  st.counts.reset();
  ++st.epoch;
  st.model.epoch = st.epoch;
  return stats;
}

struct TrainArtifacts {
  std::string final_checkpoint;
  std::string best_checkpoint;  // empty when no probe ran
  std::string metrics_csv;
  std::string rebalance_csv;
  std::string ae_distances_csv;  // empty when disabled
  size_t best_epoch = 0;
  double best_probe_acc = -1.0;
  std::vector<EpochStats> epochs;
};

// Full run: all epochs, per-epoch metrics, best-robust checkpoint selected
// by a fixed PGD probe on held-out data, final checkpoint at the end.
inline TrainArtifacts run_training(const TrainConfig& cfg, const ModelSpec& spec,
                                   const LabeledDataset& train, const ClassCounts& counts,
                                   const LabeledDataset& holdout, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  ClassPartition partition = partition_classes(spec.classes);
  OmegaWeights omega = omega_weights(counts);
  TrainState st = TrainState::init(spec, counts);

  TrainArtifacts art;
  art.metrics_csv = out_dir + "/metrics.csv";
  art.rebalance_csv = out_dir + "/rebalance.csv";
  std::ofstream metrics(art.metrics_csv);
  std::ofstream rebalance(art.rebalance_csv);
  if (!metrics || !rebalance)
    throw std::runtime_error("run_training: cannot write metrics files in " + out_dir);
  metrics << "epoch,lr,train_loss,ae_count,ae_entropy,probe_robust_acc\n";
  rebalance << "epoch,class,n,E,w,omega\n";

  std::ofstream distances;
  if (cfg.log_ae_distances) {
    art.ae_distances_csv = out_dir + "/ae_distances.csv";
    distances.open(art.ae_distances_csv);
    distances << "epoch,class,count,mean_dist,max_dist\n";
  }

  size_t probe_n = std::min(cfg.probe_samples, holdout.size());
  std::vector<size_t> probe_idx(probe_n);
  std::iota(probe_idx.begin(), probe_idx.end(), 0);
  AttackConfig probe = cfg.gen_attack;
  probe.name = "probe";
  probe.steps = cfg.probe_steps;
  probe.objective = AttackObjective::ce;
  probe.step_rule = StepRule::sign;
  probe.logit_scale = 1.0;
  probe.random_start = true;
  probe.seed = derive_seed(cfg.seed, 0x9eu);
  probe.class_weights.clear();

  auto probe_accuracy = [&]() -> double {
    if (probe_n == 0) return 0.0;
    size_t correct = 0;
    size_t bi = 0;
    for (size_t start = 0; start < probe_n; start += 128, ++bi) {
      size_t end = std::min(probe_n, start + 128);
      std::span<const size_t> idx(probe_idx.data() + start, end - start);
      Tensor xb = assemble_batch(holdout, idx);
      std::vector<int> yb = batch_labels(holdout, idx);
      Tensor xadv = pgd_attack(st.model, xb, yb, probe, bi);
      std::vector<int> pred = predict_labels(forward(st.model, xadv).logits);
      for (size_t i = 0; i < idx.size(); ++i)
        if (pred[i] == yb[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probe_n);
  };

  // previous epoch's AEs by sample id, for the consecutive-distance log
  AeSnapshot prev_aes, cur_aes;

  for (size_t e = 0; e < cfg.epochs; ++e) {
    cur_aes.clear();
    EpochStats stats = train_epoch(st, train, counts, partition, omega, cfg,
                                   cfg.log_ae_distances ? &cur_aes : nullptr);

    if (cfg.log_ae_distances) {
      if (!prev_aes.empty()) {
        auto per_class = consecutive_ae_distances(prev_aes, cur_aes);
        for (const auto& [cls, dists] : per_class) {
          double sum = 0.0, mx = 0.0;
          for (double d : dists) {
            sum += d;
            mx = std::max(mx, d);
          }
          distances << e << "," << cls << "," << dists.size() << ","
                    << fmt_double(sum / static_cast<double>(dists.size())) << ","
                    << fmt_double(mx) << "\n";
        }
      }
      prev_aes.swap(cur_aes);
    }

    stats.probe_robust_acc = probe_accuracy();
    if (stats.probe_robust_acc > art.best_probe_acc) {
      art.best_probe_acc = stats.probe_robust_acc;
      art.best_epoch = e;
      art.best_checkpoint = out_dir + "/ckpt_best.bin";
      st.model.rng_digest = RandomStream::derived(cfg.seed, st.epoch).state_digest();
      save_checkpoint(st.model, art.best_checkpoint);
    }

    metrics << stats.epoch << "," << fmt_double(stats.lr) << "," << fmt_double(stats.mean_loss)
            << "," << stats.ae_count << "," << fmt_double(stats.ae_entropy) << ","
            << fmt_double(stats.probe_robust_acc) << "\n";
    for (size_t ci = 0; ci < spec.classes; ++ci)
      rebalance << stats.epoch << "," << (ci + 1) << "," << stats.counts.n[ci] << ","
                << fmt_double(stats.effective.value[ci]) << ","
                << fmt_double(stats.next_weights.w[ci]) << "," << fmt_double(omega.omega[ci])
                << "\n";
    art.epochs.push_back(std::move(stats));
  }

  st.model.rng_digest = RandomStream::derived(cfg.seed, st.epoch).state_digest();
  art.final_checkpoint = out_dir + "/ckpt_final.bin";
  save_checkpoint(st.model, art.final_checkpoint);
  return art;
}

}  // namespace reat
