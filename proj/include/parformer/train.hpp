#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "parformer/data.hpp"
#include "parformer/network.hpp"

namespace parformer {

struct TrainConfig {
  int steps = 200;
  int batch_size = 16;
  double lr = 1e-3;
  int warmup_steps = 10;
  bool cosine = true;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  int eval_interval = 50;
  /// Empty path trains on the built-in synthetic data for the task.
  std::string dataset_path;
  /// Best-validation checkpoint target; empty writes nothing.
  std::string checkpoint_path;
  int synthetic_train = 512;
  int synthetic_val = 128;

  void validate() const;
};

struct MetricRecord {
  int64_t step = 0;
  std::string split;    // train | val
  double loss = 0.0;    // mean cross-entropy, nats
  double metric = 0.0;  // top1 (classify) or perplexity (lm)
  double seconds = 0.0; // wall clock since training start; not deterministic
};

std::string metric_name(Task task);
/// One key=value line; loss/metric carry full double precision so identical
/// runs produce identical lines (the sec field is excluded from that
/// contract).
std::string format_metric(const MetricRecord& r, Task task);

struct EvalResult {
  double loss = 0.0;
  double metric = 0.0;
  int64_t count = 0;  // samples (classify) or tokens (lm)
};

/// Exact pass in index order, eval mode, one sample at a time, so the result
/// cannot depend on any batching choice.
EvalResult evaluate_classify(const Network& net, const ImageDataset& ds,
                             const std::vector<int>& indices);
/// Non-overlapping context-length windows over bytes [begin, end).
EvalResult evaluate_lm(const Network& net, const TextDataset& ds, size_t begin, size_t end);

struct TrainResult {
  Network net;
  std::vector<MetricRecord> records;
  bool diverged = false;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double best_val_metric = 0.0;
  int64_t best_val_step = -1;
  /// Final-step training-split evaluation (full pass, eval mode).
  EvalResult final_train;
};

/// Deterministic for a fixed (config, seed, dataset); emits one metric line
/// per record to `log` when given. On divergence stops early with the best
/// checkpoint so far already on disk.
TrainResult train(const NetworkConfig& ncfg, const TrainConfig& tcfg, std::ostream* log);

}  // namespace parformer
