#include "dpd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "dpd/errors.hpp"

namespace dpd {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ArgumentError("train: learning rate must be positive");
  if (!(decay_factor > 0.0)) throw ArgumentError("train: decay factor must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ArgumentError("train: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ArgumentError("train: weight decay must be non-negative");
  if (epochs == 0) throw ArgumentError("train: epochs must be positive");
  if (batch_size == 0) throw ArgumentError("train: batch size must be positive");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) {
      throw ArgumentError("train: decay epochs must be strictly increasing");
    }
    if (decay_epochs[i] >= epochs) throw ArgumentError("train: decay epoch beyond the last epoch");
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.base_lr;
  for (std::size_t e : cfg.decay_epochs) {
    if (epoch >= e) lr *= cfg.decay_factor;
  }
  return lr;
}

void SgdMomentum::step(const std::vector<ParamRef>& params, double lr) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const ParamRef& p : params) velocity_.emplace_back(p.value.size(), 0.0);
  }
  if (velocity_.size() != params.size()) throw ArgumentError("sgd: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef& p = params[i];
    std::vector<double>& v = velocity_[i];
    if (v.size() != p.value.size()) throw ArgumentError("sgd: parameter '" + p.layer + "' changed size");
    const double decay = p.decay ? weight_decay_ : 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum_ * v[j] + (p.grad[j] + decay * p.value[j]);
      p.value[j] -= lr * v[j];
    }
  }
}

std::string TrainingLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,step,lr,loss,train_acc,test_acc\n";
  char line[160];
  for (const LogRow& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.6g,%.6f,%.4f,%.4f\n", r.epoch, r.step, r.lr, r.loss, r.train_acc,
                  r.test_acc);
    out << line;
  }
  return out.str();
}

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  std::size_t correct = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.c; ++k) {
      if (logits.at(n, k, 0, 0) > logits.at(n, best, 0, 0)) best = k;
    }
    if (static_cast<int>(best) == labels[n]) ++correct;
  }
  return correct;
}

}  // namespace

double evaluate_accuracy(Network& net, const Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor x = gather_batch(ds, idx, &labels);
    correct += count_correct(net.forward(x, false), labels);
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

TrainingLog train(Network& net, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                  const std::function<void(const LogRow&)>& on_epoch) {
  cfg.validate();
  train_set.validate();
  if (train_set.size() == 0) throw ArgumentError("train: empty training set");
  if (train_set.class_count != net.spec().num_classes) {
    throw ArgumentError("train: dataset has " + std::to_string(train_set.class_count) +
                        " classes, network has " + std::to_string(net.spec().num_classes));
  }

  Rng shuffle_rng = Rng(cfg.seed).fork(1);
  Rng augment_rng = Rng(cfg.seed).fork(2);
  SgdMomentum sgd(cfg.momentum, cfg.weight_decay);
  const std::vector<ParamRef> params = net.parameters();
  TrainingLog log;
  std::vector<std::size_t> order(train_set.size());
  std::vector<int> labels;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    bool stopped = false;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      Tensor x = gather_batch(train_set, std::span(order).subspan(begin, end - begin), &labels);
      if (cfg.augment) x = augment_batch(augment_rng, x);

      net.zero_grad();
      const Tensor logits = net.forward(x, true);
      const LossResult lr_out = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(lr_out.loss)) {
        throw DivergenceError(static_cast<long>(step), "loss is " + std::to_string(lr_out.loss));
      }
      net.backward(lr_out.grad);
      sgd.step(params, lr);
      ++step;

      loss_sum += lr_out.loss;
      ++batches;
      correct += count_correct(logits, labels);
      seen += labels.size();
      if (cfg.max_steps && step >= cfg.max_steps) {
        stopped = true;
        break;
      }
    }

    LogRow row;
    row.epoch = epoch;
    row.step = step;
    row.lr = lr;
    row.loss = loss_sum / static_cast<double>(batches);
    row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    row.test_acc = test_set ? evaluate_accuracy(net, *test_set) : std::numeric_limits<double>::quiet_NaN();
    log.rows.push_back(row);
    if (on_epoch) on_epoch(row);
    if (stopped) break;
  }
  return log;
}

}  // namespace dpd
