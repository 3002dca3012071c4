#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpd/dataset.hpp"
#include "dpd/network.hpp"

namespace dpd {

/// SGD recipe. Defaults are the CIFAR schedule: 300 epochs of batch 128,
/// lr 0.1 divided by 10 at epochs 150 and 225, momentum 0.9, weight decay
/// 1e-4 on conv and FC weights.
struct TrainConfig {
  double base_lr = 0.1;
  std::vector<std::size_t> decay_epochs{150, 225};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool augment = true;
  // Stop after this many optimizer steps; 0 runs every epoch.
  std::size_t max_steps = 0;

  // Throws ArgumentError.
  void validate() const;
};

// base_lr * factor^(number of decay epochs <= epoch); epochs count from 0.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

/// v <- mu * v + (g + lambda * w); w <- w - lr * v. Weight decay only touches
/// parameters flagged for it.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<ParamRef>& params, double lr);
  const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed
  double lr = 0.0;
  double loss = 0.0;       // mean minibatch loss over the epoch
  double train_acc = 0.0;  // running accuracy on the augmented minibatches
  double test_acc = 0.0;   // NaN without a test split
};

struct TrainingLog {
  std::vector<LogRow> rows;

  // Header `epoch,step,lr,loss,train_acc,test_acc`.
  std::string to_csv() const;
};

// Top-1 accuracy in inference mode.
double evaluate_accuracy(Network& net, const Dataset& ds, std::size_t batch_size = 256);

// Trains in place. Each epoch visits a fresh permutation (drawn from the seed)
// and keeps the final partial batch. A non-finite loss throws DivergenceError.
TrainingLog train(Network& net, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                  const std::function<void(const LogRow&)>& on_epoch = {});

}  // namespace dpd
