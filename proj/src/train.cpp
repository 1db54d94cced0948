#include "parformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "parformer/checkpoint.hpp"
#include "parformer/optim.hpp"
#include "parformer/rng.hpp"

namespace parformer {

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
  if (warmup_steps < 0) throw std::invalid_argument("warmup steps must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (eval_interval < 1) throw std::invalid_argument("eval interval must be >= 1");
  if (synthetic_train < 1 || synthetic_val < 1)
    throw std::invalid_argument("synthetic split sizes must be >= 1");
}

std::string metric_name(Task task) { return task == Task::classify ? "top1" : "ppl"; }

std::string format_metric(const MetricRecord& r, Task task) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "step=%lld split=%s loss=%.17g %s=%.17g sec=%.3f",
                static_cast<long long>(r.step), r.split.c_str(), r.loss,
                metric_name(task).c_str(), r.metric, r.seconds);
  return buf;
}

namespace {

const char kDefaultPattern[] = "the quick brown fox jumps over the lazy dog and then naps here.\n";

// -log softmax(row)[label], and the argmax, in plain stable arithmetic.
double row_cross_entropy(const double* row, int64_t n, int label, int* argmax) {
  double mx = row[0];
  int am = 0;
  for (int64_t j = 1; j < n; ++j)
    if (row[j] > mx) {
      mx = row[j];
      am = static_cast<int>(j);
    }
  double z = 0.0;
  for (int64_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
  if (argmax) *argmax = am;
  return -(row[label] - mx) + std::log(z);
}

// std::shuffle's draw sequence is implementation-defined; this one is pinned.
void fisher_yates(std::vector<int>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

EvalResult evaluate_classify(const Network& net, const ImageDataset& ds,
                             const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("evaluate_classify: no samples");
  NoGradScope eval_only;
  double total = 0.0;
  int64_t correct = 0;
  for (int i : indices) {
    ImageBatch b = ds.batch({i});
    Tensor logits = net.forward_classify(b.images);
    if (b.labels[0] < 0 || b.labels[0] >= static_cast<int>(logits.dim(1)))
      throw std::invalid_argument("evaluate_classify: label out of range");
    int am = 0;
    total += row_cross_entropy(logits.data().data(), logits.dim(1), b.labels[0], &am);
    correct += am == b.labels[0] ? 1 : 0;
  }
  EvalResult r;
  r.count = static_cast<int64_t>(indices.size());
  r.loss = total / static_cast<double>(r.count);
  r.metric = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

EvalResult evaluate_lm(const Network& net, const TextDataset& ds, size_t begin, size_t end) {
  if (end > ds.size() || begin >= end || end - begin < 2)
    throw std::invalid_argument("evaluate_lm: byte range too small");
  NoGradScope eval_only;
  const int64_t v = net.cfg.vocab_size;
  const int len =
      static_cast<int>(std::min<size_t>(static_cast<size_t>(net.cfg.context), end - begin - 1));
  double total = 0.0;
  int64_t tokens = 0;
  for (size_t off = begin; off + static_cast<size_t>(len) + 1 <= end;
       off += static_cast<size_t>(len)) {
    const std::vector<int> w = ds.window(off, len);
    const std::vector<int> inputs(w.begin(), w.begin() + len);
    Tensor out = net.forward_lm({inputs});
    const double* base = out.data().data();
    for (int t = 0; t < len; ++t) {
      total += row_cross_entropy(base + t * v, v, w[static_cast<size_t>(t) + 1], nullptr);
      ++tokens;
    }
  }
  EvalResult r;
  r.count = tokens;
  r.loss = total / static_cast<double>(tokens);
  r.metric = std::exp(r.loss);
  return r;
}

TrainResult train(const NetworkConfig& ncfg, const TrainConfig& tcfg, std::ostream* log) {
  ncfg.validate();
  tcfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  TrainResult res;
  res.net = build_network(ncfg, tcfg.seed);
  Adam opt(res.net.parameters(), AdamConfig{0.9, 0.999, 1e-8, tcfg.weight_decay});
  std::mt19937_64 data_rng(mix_seed(tcfg.seed, 0x64617461, 0));
  std::mt19937_64 model_rng(mix_seed(tcfg.seed, 0x6d6f646c, 0));

  ImageDataset images;
  TextDataset text;
  std::vector<int> train_idx, val_idx;
  size_t text_train_end = 0;
  if (ncfg.task == Task::classify) {
    int val_count;
    if (tcfg.dataset_path.empty()) {
      images = ImageDataset::synthetic_patterned(
          tcfg.synthetic_train + tcfg.synthetic_val, ncfg.channels, ncfg.image_size,
          ncfg.patch_size, ncfg.num_classes, mix_seed(tcfg.seed, 0x696d6773, 0));
      val_count = tcfg.synthetic_val;
    } else {
      images = ImageDataset::load(tcfg.dataset_path);
      if (images.channels != ncfg.channels || images.height != ncfg.image_size ||
          images.width != ncfg.image_size)
        throw std::invalid_argument("dataset geometry does not match the network config");
      val_count = std::max(1, images.count / 10);
    }
    const int train_count = images.count - val_count;
    if (train_count < tcfg.batch_size)
      throw std::invalid_argument("training split smaller than one batch");
    train_idx.resize(static_cast<size_t>(train_count));
    std::iota(train_idx.begin(), train_idx.end(), 0);
    val_idx.resize(static_cast<size_t>(val_count));
    std::iota(val_idx.begin(), val_idx.end(), train_count);
  } else {
    text = tcfg.dataset_path.empty() ? TextDataset::repeated(kDefaultPattern, 8192)
                                     : TextDataset::from_file(tcfg.dataset_path);
    const size_t ctx = static_cast<size_t>(ncfg.context);
    const size_t val_len = std::max(ctx + 1, text.size() / 10);
    if (text.size() < val_len + ctx + 2)
      throw std::invalid_argument("text corpus too small for this context length");
    text_train_end = text.size() - val_len;
  }

  auto run_val = [&](int64_t step_no) {
    const EvalResult ev = ncfg.task == Task::classify
                              ? evaluate_classify(res.net, images, val_idx)
                              : evaluate_lm(res.net, text, text_train_end, text.size());
    MetricRecord r{step_no, "val", ev.loss, ev.metric, elapsed()};
    res.records.push_back(r);
    if (log) *log << format_metric(r, ncfg.task) << "\n" << std::flush;
    if (ev.loss < res.best_val_loss) {
      res.best_val_loss = ev.loss;
      res.best_val_metric = ev.metric;
      res.best_val_step = step_no;
      if (!tcfg.checkpoint_path.empty()) save_checkpoint(tcfg.checkpoint_path, res.net);
    }
  };

  std::vector<int> perm = train_idx;
  size_t cursor = perm.size();  // forces a shuffle before the first batch
  for (int s = 0; s < tcfg.steps; ++s) {
    const double lr = lr_at(s, tcfg.steps, tcfg.warmup_steps, tcfg.lr, tcfg.cosine);
    double train_loss, train_metric = 0.0;
    Tape tape;
    {
      TapeScope recording(tape);
      Tensor loss;
      if (ncfg.task == Task::classify) {
        std::vector<int> idx(static_cast<size_t>(tcfg.batch_size));
        for (int& ix : idx) {
          if (cursor == perm.size()) {
            fisher_yates(perm, data_rng);
            cursor = 0;
          }
          ix = perm[cursor++];
        }
        ImageBatch batch = images.batch(idx);
        Tensor logits = res.net.forward_classify(batch.images, true, &model_rng);
        loss = cross_entropy_mean(logits, batch.labels);
        int64_t correct = 0;
        for (int64_t b = 0; b < logits.dim(0); ++b) {
          int am = 0;
          row_cross_entropy(logits.data().data() + b * logits.dim(1), logits.dim(1),
                            batch.labels[static_cast<size_t>(b)], &am);
          correct += am == batch.labels[static_cast<size_t>(b)] ? 1 : 0;
        }
        train_metric = static_cast<double>(correct) / static_cast<double>(logits.dim(0));
      } else {
        const size_t ctx = static_cast<size_t>(ncfg.context);
        std::vector<std::vector<int>> inputs(static_cast<size_t>(tcfg.batch_size));
        std::vector<int> targets;
        targets.reserve(static_cast<size_t>(tcfg.batch_size) * ctx);
        for (auto& row : inputs) {
          const size_t off = data_rng() % (text_train_end - ctx);
          const std::vector<int> w = text.window(off, ncfg.context);
          row.assign(w.begin(), w.begin() + ncfg.context);
          targets.insert(targets.end(), w.begin() + 1, w.end());
        }
        Tensor out = res.net.forward_lm(inputs, true, &model_rng);
        Tensor flat = reshape(out, {static_cast<int64_t>(tcfg.batch_size) * ncfg.context,
                                    ncfg.vocab_size});
        loss = cross_entropy_mean(flat, targets);
        train_metric = std::exp(loss.value());
      }
      train_loss = loss.value();
      if (std::isfinite(train_loss)) tape.backward(loss);
    }
    if (!std::isfinite(train_loss)) {
      res.diverged = true;
      if (log) *log << "diverged step=" << s + 1 << " loss=" << train_loss << "\n" << std::flush;
      break;
    }
    opt.step(lr);
    opt.zero_grad();
    if ((s + 1) % tcfg.eval_interval == 0 || s + 1 == tcfg.steps) {
      MetricRecord r{s + 1, "train", train_loss, train_metric, elapsed()};
      res.records.push_back(r);
      if (log) *log << format_metric(r, ncfg.task) << "\n" << std::flush;
      run_val(s + 1);
    }
  }

  if (!res.diverged) {
    res.final_train = ncfg.task == Task::classify
                          ? evaluate_classify(res.net, images, train_idx)
                          : evaluate_lm(res.net, text, 0, text_train_end);
  }
  return res;
}

}  // namespace parformer
