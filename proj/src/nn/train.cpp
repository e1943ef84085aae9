#include "qus/nn/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "qus/errors.hpp"
#include "qus/nn/loss.hpp"
#include "qus/rng.hpp"

namespace qus::nn {

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0)) throw ParameterError("lr must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0))
    throw ParameterError("beta1 must lie in [0, 1)");
  if (cfg.batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (!(cfg.lr_drop_factor > 0.0 && cfg.lr_drop_factor < 1.0))
    throw ParameterError("lr_drop_factor must lie in (0, 1)");
  if (cfg.lr_patience_epochs < 1)
    throw ParameterError("lr_patience_epochs must be >= 1");
  if (cfg.early_stop_epochs < 1)
    throw ParameterError("early_stop_epochs must be >= 1");
  if (cfg.max_epochs < 1) throw ParameterError("max_epochs must be >= 1");
}

LrScheduleTracker::LrScheduleTracker(const TrainConfig& cfg,
                                     double baseline_metric)
    : lr_(cfg.lr),
      drop_(cfg.lr_drop_factor),
      patience_(cfg.lr_patience_epochs),
      stop_after_(cfg.early_stop_epochs),
      best_(baseline_metric) {
  validate(cfg);
}

LrScheduleTracker::Decision LrScheduleTracker::observe(int epoch,
                                                       double metric) {
  if (epoch < 1) throw ParameterError("epochs are 1-based");
  Decision d;
  if (metric > best_) {
    best_ = metric;
    best_epoch_ = epoch;
    d.improved = true;
  }
  const int stall = epoch - best_epoch_;
  if (stall >= stop_after_) {
    d.stop = true;
  } else if (epoch % patience_ == 0 && stall >= patience_) {
    lr_ *= drop_;
  }
  d.lr = lr_;
  return d;
}

std::pair<Tensor4, Tensor4> pack_batch(
    const std::vector<Sample>& samples,
    const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ParameterError("empty batch");
  const Sample& first = samples.at(indices[0]);
  const std::size_t h = first.image.rows();
  const std::size_t w = first.image.cols();
  Tensor4 x(indices.size(), 1, h, w);
  Tensor4 t(indices.size(), 1, h, w);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Sample& s = samples.at(indices[b]);
    if (s.image.rows() != h || s.image.cols() != w ||
        s.mask.rows() != h || s.mask.cols() != w)
      throw ShapeError("samples in a batch must share dims");
    double* xp = x.plane(b, 0);
    double* tp = t.plane(b, 0);
    for (std::size_t i = 0; i < h * w; ++i) {
      xp[i] = s.image.storage()[i];
      tp[i] = s.mask.storage()[i] ? 1.0 : 0.0;
    }
  }
  return {std::move(x), std::move(t)};
}

double validation_dice(UNet& net, const std::vector<Sample>& samples,
                       std::size_t batch_size) {
  if (samples.empty()) throw ParameterError("empty validation set");
  double total = 0.0;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    indices.resize(end - start);
    std::iota(indices.begin(), indices.end(), start);
    auto [x, t] = pack_batch(samples, indices);
    const Tensor4 pred = net.forward(x, /*training=*/false);
    const std::size_t per = pred.h * pred.w;
    for (std::size_t b = 0; b < pred.n; ++b) {
      const double* pp = pred.plane(b, 0);
      const double* tp = t.plane(b, 0);
      std::size_t inter = 0, p_on = 0, t_on = 0;
      for (std::size_t i = 0; i < per; ++i) {
        const bool p = pp[i] >= 0.5;
        const bool tr = tp[i] != 0.0;
        inter += static_cast<std::size_t>(p && tr);
        p_on += static_cast<std::size_t>(p);
        t_on += static_cast<std::size_t>(tr);
      }
      total += (p_on + t_on) == 0
                   ? 1.0
                   : 2.0 * static_cast<double>(inter) /
                         static_cast<double>(p_on + t_on);
    }
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train(UNet& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const TrainConfig& cfg) {
  validate(cfg);
  if (train_set.empty() || val_set.empty())
    throw ParameterError("training and validation sets must be non-empty");
  const NetworkConfig& nc = net.config();
  for (const Sample& s : train_set)
    if (s.image.rows() != nc.input_h || s.image.cols() != nc.input_w)
      throw ShapeError("training sample dims do not match the network");

  TrainResult result;
  result.best_val_dice = validation_dice(net, val_set, cfg.batch_size);
  result.best_epoch = 0;
  result.best_params = net.params();
  LrScheduleTracker tracker(cfg, result.best_val_dice);
  AdamState adam;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> batch;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(
                                                      epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr_used = tracker.lr();
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + cfg.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
      auto [x, t] = pack_batch(train_set, batch);
      std::shared_ptr<UNetCache> cache;
      const Tensor4 pred = net.forward_cached(x, /*training=*/true, cache);
      loss_sum += dice_loss(pred, t) * static_cast<double>(batch.size());
      const Tensor4 dpred = dice_loss_backward(pred, t);
      const ParamMap grads = net.backward(*cache, dpred);
      adam_step(net.params(), grads, adam, lr_used, cfg.beta1);
    }
    const double train_loss =
        loss_sum / static_cast<double>(train_set.size());
    const double val = validation_dice(net, val_set, cfg.batch_size);
    const LrScheduleTracker::Decision dec = tracker.observe(epoch, val);
    if (dec.improved) {
      result.best_params = net.params();
      result.best_val_dice = val;
      result.best_epoch = epoch;
    }
    result.history.push_back({epoch, train_loss, val, lr_used});
    if (dec.stop) break;
  }
  return result;
}

TrainResult train(const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const NetworkConfig& net_cfg, const TrainConfig& cfg) {
  UNet net(net_cfg);
  net.init_params(cfg.rng_seed);
  return train(net, train_set, val_set, cfg);
}

void write_history_csv(const std::string& path,
                       const std::vector<HistoryRow>& history) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "epoch,train_loss,val_dice,lr\n";
  char line[160];
  for (const HistoryRow& row : history) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", row.epoch,
                  row.train_loss, row.val_dice, row.lr);
    os << line;
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace qus::nn
