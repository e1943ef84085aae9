#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qus/nn/unet.hpp"
#include "qus/sample.hpp"

namespace qus::nn {

struct TrainConfig {
  double lr = 0.0005;
  double beta1 = 0.9;  // Adam first-moment decay ("momentum")
  std::size_t batch_size = 16;
  double lr_drop_factor = 0.5;
  int lr_patience_epochs = 4;
  int early_stop_epochs = 20;
  int max_epochs = 300;
  std::uint64_t rng_seed = 0;
};

// lr >= 0 (zero freezes parameters), 0 < drop factor < 1, patience >= 1.
void validate(const TrainConfig& cfg);

// Plateau schedule with early stopping.  The baseline metric (validation
// score of the untrained model, "epoch 0") seeds the best-so-far, so a
// stagnant signal never counts as improvement.  observe() is called once
// per epoch (1-based): improvement means a strictly higher metric; the stop
// condition (early_stop_epochs epochs without improvement) is evaluated
// first; otherwise, on every lr_patience_epochs-th epoch, a stall of at
// least that length multiplies lr by lr_drop_factor.
class LrScheduleTracker {
 public:
  LrScheduleTracker(const TrainConfig& cfg, double baseline_metric);

  struct Decision {
    bool improved = false;
    bool stop = false;
    double lr = 0.0;  // rate to use from the next epoch on
  };

  Decision observe(int epoch, double metric);

  double lr() const { return lr_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  double lr_;
  double drop_;
  int patience_;
  int stop_after_;
  double best_;
  int best_epoch_ = 0;
};

struct HistoryRow {
  int epoch = 0;          // 1-based
  double train_loss = 0;  // mean per-sample dice loss over the epoch
  double val_dice = 0;    // mean hard dice (threshold 0.5) on validation
  double lr = 0;          // rate in effect during this epoch
};

struct TrainResult {
  ParamMap best_params;  // snapshot with the best validation dice
  double best_val_dice = 0.0;
  int best_epoch = 0;  // 0 = the untrained baseline was never beaten
  std::vector<HistoryRow> history;
};

// Mini-batch training with per-epoch seeded shuffling, Adam updates, the
// plateau schedule above, and best-on-validation parameter selection.
// Samples must match the network's configured input dims.  Throws
// ParameterError on empty sets.
TrainResult train(UNet& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg);

// Convenience overload that builds the network and seeds initialization
// with cfg.rng_seed.
TrainResult train(const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const NetworkConfig& net_cfg, const TrainConfig& cfg);

// Mean hard Dice (threshold 0.5) of the network over the samples,
// inference mode.
double validation_dice(UNet& net, const std::vector<Sample>& samples,
                       std::size_t batch_size);

// CSV: header "epoch,train_loss,val_dice,lr", full-precision values so
// identical runs produce identical files.
void write_history_csv(const std::string& path,
                       const std::vector<HistoryRow>& history);

// Packs samples[indices] into an input tensor and a binary target tensor.
std::pair<Tensor4, Tensor4> pack_batch(const std::vector<Sample>& samples,
                                       const std::vector<std::size_t>& indices);

}  // namespace qus::nn
