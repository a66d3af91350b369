#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "dynwin/corpus.hpp"
#include "dynwin/error.hpp"
#include "dynwin/networks.hpp"

namespace dynwin {

struct TrainConfig {
  double learning_rate = 0.02;
  std::size_t epochs = 40;
  bool shuffle = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_acc = 0.0;
};

struct TrainState {
  std::size_t epoch = 0;
  double running_loss = 0.0;
  std::vector<EpochRecord> history;
  double best_dev_acc = -1.0;
  std::size_t best_epoch = 0;  // 0: the initial model
};

struct AccuracyCounts {
  std::size_t correct = 0;
  std::size_t tokens = 0;
  std::size_t unseen_gold = 0;  // gold tags outside the model's tag set
  double accuracy() const {
    return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  }
};

// One pass of online SGD: every sentence gets its own forward (train mode,
// fresh dropout masks), backward and update. Returns the mean sentence loss.
inline double sgd_epoch(Tagger& model, std::span<const Example> train, const TrainConfig& cfg,
                        Rng& rng) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.shuffle) rng.shuffle(order);
  double total = 0.0;
  for (std::size_t i : order) {
    total += model.loss_and_grad(train[i], Mode::Train, &rng);
    model.sgd_step(cfg.learning_rate);
  }
  return train.empty() ? 0.0 : total / static_cast<double>(train.size());
}

// 1-best accuracy in test mode. Tokens whose gold tag is the RARE bucket are
// always counted wrong. Sentences are split across `workers` threads and the
// integer counts summed, so the result does not depend on the worker count.
inline AccuracyCounts count_correct(const Tagger& model, std::span<const Example> data,
                                    std::size_t workers = 1) {
  auto run = [&](std::size_t begin, std::size_t end, AccuracyCounts& out) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto pred = model.tag(data[i].tokens);
      for (std::size_t t = 0; t < pred.size(); ++t) {
        ++out.tokens;
        if (data[i].gold[t] == TagSet::kRare)
          ++out.unseen_gold;
        else if (pred[t] == data[i].gold[t])
          ++out.correct;
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, data.size()));
  std::vector<AccuracyCounts> parts(workers);
  if (workers == 1) {
    run(0, data.size(), parts[0]);
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (data.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = std::min(data.size(), w * chunk);
      const std::size_t e = std::min(data.size(), b + chunk);
      threads.emplace_back(run, b, e, std::ref(parts[w]));
    }
    for (auto& th : threads) th.join();
  }
  AccuracyCounts total;
  for (const auto& p : parts) {
    total.correct += p.correct;
    total.tokens += p.tokens;
    total.unseen_gold += p.unseen_gold;
  }
  return total;
}

inline double evaluate_accuracy(const Tagger& model, std::span<const Example> data,
                                std::size_t workers = 1) {
  if (data.empty()) throw DataError("evaluate_accuracy: empty data set");
  const auto counts = count_correct(model, data, workers);
  if (counts.tokens == 0) throw DataError("evaluate_accuracy: data set has no tokens");
  return counts.accuracy();
}

struct TrainResult {
  Tagger best;
  TrainState state;
};

using Evaluator = std::function<double(const Tagger&, std::size_t epoch)>;
using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs the full epoch budget, evaluating on dev after each epoch and keeping
// the snapshot with the highest dev accuracy (earliest on ties). With zero
// epochs the initial model is returned and the history is empty.
inline TrainResult train_loop(Tagger model, std::span<const Example> train,
                              std::span<const Example> dev, const TrainConfig& cfg,
                              const Evaluator& evaluator = {},
                              const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw DataError("train_loop: empty training set");
  if (dev.empty()) throw DataError("train_loop: empty development set");
  Rng rng(cfg.seed);
  TrainState state;
  std::optional<Tagger> best;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const double loss = sgd_epoch(model, train, cfg, rng);
    const double acc = evaluator ? evaluator(model, e) : evaluate_accuracy(model, dev);
    state.epoch = e;
    state.running_loss = loss;
    EpochRecord rec{e, loss, acc};
    state.history.push_back(rec);
    if (acc > state.best_dev_acc) {
      state.best_dev_acc = acc;
      state.best_epoch = e;
      best = model;
    }
    if (on_epoch) on_epoch(rec);
  }
  if (!best) return {std::move(model), std::move(state)};
  return {std::move(*best), std::move(state)};
}

}  // namespace dynwin
