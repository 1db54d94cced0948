#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace parformer {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> data;   // row-major
  std::vector<double> grad;   // empty until backward touches it
  bool requires_grad = false;
};

/// Value-semantic handle to a shared dense f64 tensor. Copies alias the same
/// storage, so a parameter handed to several layers is genuinely shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  /// Grad-enabled leaf (a trainable parameter).
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  /// Value of a scalar (1-element) tensor.
  double value() const;
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  /// Gradient buffer; allocated as zeros on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
};

/// Reverse-mode tape. Ops are recorded in forward order; backward() replays
/// them exactly once in reverse. One tape per thread at a time.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(loss)/d(loss)=1 and runs every recorded backward rule in
  /// reverse. loss must be scalar.
  void backward(const Tensor& loss);

  void record(const char* name, std::function<void()> fn);
  size_t size() const { return ops_.size(); }
  /// Names in recording order (introspection for tests).
  std::vector<std::string> op_names() const;

  static Tape* active();

 private:
  struct Op {
    const char* name;
    std::function<void()> fn;
  };
  std::vector<Op> ops_;
};

/// Makes `tape` the active recording target for the current thread.
struct TapeScope {
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Suspends recording (pure evaluation).
struct NoGradScope {
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

// Elementwise / shape ops. All ops allocate a fresh output and never mutate
// inputs; backward rules accumulate into .grad of grad-enabled inputs.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// a + c*b, the integrator update primitive. c=1 reproduces add() bit-exactly.
Tensor add_scaled(const Tensor& a, const Tensor& b, double c);
/// [m x n] + [n], broadcast over rows (bias add).
Tensor add_rowvec(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor softmax_rows(const Tensor& a);
/// Entries strictly above the diagonal are replaced by -1e30, which underflows
/// to probability exactly 0.0 through softmax_rows.
Tensor causal_mask(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);
/// Exact-erf GELU.
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);

/// Gathers rows of `table` by id; duplicate ids accumulate gradient.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
/// Mean over rows of -log softmax(logits)[i, labels[i]], in nats.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);
/// Inverted dropout: kept entries scale by 1/(1-p). Caller handles eval mode
/// (this always draws a mask).
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

void backward(Tape& tape, const Tensor& loss);

}  // namespace parformer
