#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ampgrad/amplification.hpp"
#include "ampgrad/data.hpp"
#include "ampgrad/model.hpp"
#include "ampgrad/schedule.hpp"

namespace ampgrad {

struct TrainHooks {
  std::function<void(int phase_index, const AmpSelection&)> on_selection;
  std::function<void(int epoch, Model<float>&)> on_epoch_end;  // after the epoch's record
};

struct TrainOptions {
  int batch_size = 128;
  LayerTypeSet layer_types = {.batchnorm = true};
  GroupOptions group_options;
  AmpPoint amp_point = AmpPoint::kInputSide;
  std::string checkpoint_path;      // when set, last-good state is kept here
  std::string selection_dump_path;  // when set, one selection line per amplified phase
  TrainHooks hooks;
};

// Top-1 accuracy in percent, eval mode (BN running stats). Side-effect free.
inline double evaluate(Model<float>& model, const Dataset& test_set, int batch_size = 512) {
  if (test_set.size() == 0) throw ArgumentError("evaluate: test set is empty");
  std::vector<size_t> order(static_cast<size_t>(test_set.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  int64_t correct = 0;
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    const size_t count = std::min(static_cast<size_t>(batch_size), order.size() - at);
    auto [batch, labels] = make_batch(test_set, order, at, count);
    Tape<float> tape;
    ValueRef x = tape.leaf(std::move(batch));
    ValueRef logits = model.forward(tape, x, Mode::kEval);
    const Tensor<float>& out = tape.value(logits);
    const int64_t k = out.dim(1);
    for (size_t i = 0; i < count; ++i) {
      const float* row = out.data.data() + static_cast<int64_t>(i) * k;
      int32_t best = 0;
      for (int64_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = static_cast<int32_t>(j);
      if (best == labels[i]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test_set.size());
}

// Algorithm: walk the schedule phases; per phase set the learning rate, draw
// and install the amp layers when beta > 0, run the phase's epochs with
// mini-batch SGD, then reset amplification and evaluate. Batch order per
// epoch comes from (seed, epoch) alone so runs with equal seeds see identical
// batches regardless of amplification settings.
inline std::vector<MetricsRecord> train(Model<float>& model, const Schedule& schedule,
                                        const Dataset& train_set, const Dataset& test_set,
                                        uint64_t seed, const TrainOptions& opts = {}) {
  if (train_set.size() == 0) throw ArgumentError("train: training set is empty");
  if (test_set.size() == 0) throw ArgumentError("train: test set is empty");
  if (opts.batch_size <= 0) throw ArgumentError("train: batch_size must be positive");
  validate_phases(schedule.phases);

  std::ofstream selection_dump;
  if (!opts.selection_dump_path.empty()) {
    selection_dump.open(opts.selection_dump_path, std::ios::trunc);
    if (!selection_dump) throw IoError("cannot open selection dump: " + opts.selection_dump_path);
  }

  std::vector<MetricsRecord> records;
  const int64_t n = train_set.size();

  for (int phase = 1; phase <= schedule.phase_count(); ++phase) {
    const PhaseParams& params = schedule.phases[static_cast<size_t>(phase - 1)];
    if (params.amplified()) {
      AmpSelection sel =
          get_gradient_amp_layers(model, params.beta, opts.layer_types,
                                  derive_stream(seed, RngDomain::kAmpSelect,
                                                static_cast<uint64_t>(phase)),
                                  opts.group_options);
      sel.gamma = params.gamma;
      apply_amplification(model, sel);
      if (selection_dump.is_open()) dump_selection(selection_dump, phase, sel);
      if (opts.hooks.on_selection) opts.hooks.on_selection(phase, sel);
    }

    for (int epoch = schedule.phase_start(phase); epoch <= params.end_epoch; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      auto shuffle_rng = make_stream(seed, RngDomain::kShuffle, static_cast<uint64_t>(epoch));
      const std::vector<size_t> order = random_permutation(static_cast<size_t>(n), shuffle_rng);

      double loss_sum = 0.0;
      int64_t correct = 0;
      for (size_t at = 0; at < order.size(); at += static_cast<size_t>(opts.batch_size)) {
        const size_t count = std::min(static_cast<size_t>(opts.batch_size), order.size() - at);
        auto [batch, labels] = make_batch(train_set, order, at, count);
        Tape<float> tape;
        ValueRef x = tape.leaf(std::move(batch));
        auto [loss, logits] = model.forward_loss(tape, x, labels, Mode::kTrain);
        const double loss_value = static_cast<double>(tape.value(loss).data[0]);
        if (!std::isfinite(loss_value))
          throw NumericError("train: non-finite loss at phase " + std::to_string(phase) +
                             ", epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(at / static_cast<size_t>(opts.batch_size)) +
                             (opts.checkpoint_path.empty()
                                  ? ""
                                  : "; last-good checkpoint: " + opts.checkpoint_path));
        const Tensor<float>& out = tape.value(logits);
        const int64_t k = out.dim(1);
        for (size_t i = 0; i < count; ++i) {
          const float* row = out.data.data() + static_cast<int64_t>(i) * k;
          int32_t best = 0;
          for (int64_t j = 1; j < k; ++j)
            if (row[j] > row[best]) best = static_cast<int32_t>(j);
          if (best == labels[i]) ++correct;
        }
        loss_sum += loss_value * static_cast<double>(count);

        GradientMap<float> grads = backward(tape, loss, opts.amp_point);
        sgd_step(model, grads, params.lr);
      }

      MetricsRecord rec;
      rec.epoch = epoch;
      rec.phase_index = phase;
      rec.lr = params.lr;
      rec.beta = params.beta;
      rec.gamma = params.amplified() ? params.gamma : 1.0;
      rec.train_loss = loss_sum / static_cast<double>(n);
      rec.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
      rec.test_acc = evaluate(model, test_set);
      rec.seed = seed;
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
      records.push_back(rec);

      if (!opts.checkpoint_path.empty()) save_checkpoint(model, opts.checkpoint_path);
      if (opts.hooks.on_epoch_end) opts.hooks.on_epoch_end(epoch, model);
    }

    remove_amplification(model);
  }
  return records;
}

}  // namespace ampgrad
