#include "parformer/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace parformer {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::vector<double>& ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

// Records `fn` if any input is grad-enabled and a tape is active; the output
// becomes grad-enabled in that case.
void finalize(const char* name, std::initializer_list<const Tensor*> inputs,
              Tensor& out, std::function<void()> fn) {
  bool rg = false;
  for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  if (rg && g_active_tape) {
    out.set_requires_grad(true);
    g_active_tape->record(name, std::move(fn));
  }
}

void check_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    std::ostringstream os;
    os << op << ": expected rank-" << rank << " tensor, got " << shape_str(t.shape());
    throw std::invalid_argument(os.str());
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape());
    throw std::invalid_argument(os.str());
  }
}

constexpr double kMaskValue = -1e30;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = std::make_shared<TensorNode>();
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
  }
  n->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    std::ostringstream os;
    os << "from_data: " << shape_str(shape) << " needs " << shape_numel(shape)
       << " values, got " << data.size();
    throw std::invalid_argument(os.str());
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value(): tensor " + shape_str(shape()) + " is not scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw std::invalid_argument("at(): index rank mismatch");
  int64_t flat = 0;
  size_t i = 0;
  for (int64_t v : idx) {
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->data[static_cast<size_t>(flat)];
}

std::vector<double>& Tensor::grad() { return ensure_grad(*node_); }

const std::vector<double>& Tensor::grad() const { return ensure_grad(*node_); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* name, std::function<void()> fn) {
  ops_.push_back(Op{name, std::move(fn)});
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const Op& op : ops_) names.emplace_back(op.name);
  return names;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  ensure_grad(*loss.node())[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->fn();
}

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = prev_; }

// ---------------------------------------------------------------------------
// elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("add", {&a, &b}, r, [an = a.node(), bn = b.node(), on = r.node()] {
    if (on->grad.empty()) return;
    const auto& go = on->grad;
    if (an->requires_grad) {
      auto& ga = ensure_grad(*an);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad(*bn);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("sub", {&a, &b}, r, [an = a.node(), bn = b.node(), on = r.node()] {
    if (on->grad.empty()) return;
    const auto& go = on->grad;
    if (an->requires_grad) {
      auto& ga = ensure_grad(*an);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad(*bn);
      for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("mul", {&a, &b}, r, [an = a.node(), bn = b.node(), on = r.node()] {
    if (on->grad.empty()) return;
    const auto& go = on->grad;
    if (an->requires_grad) {
      auto& ga = ensure_grad(*an);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad(*bn);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * an->data[i];
    }
  });
  return r;
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("scale", {&a}, r, [an = a.node(), on = r.node(), c] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& ga = ensure_grad(*an);
    for (size_t i = 0; i < on->grad.size(); ++i) ga[i] += c * on->grad[i];
  });
  return r;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, double c) {
  check_same_shape("add_scaled", a, b);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c * b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("add_scaled", {&a, &b}, r, [an = a.node(), bn = b.node(), on = r.node(), c] {
    if (on->grad.empty()) return;
    const auto& go = on->grad;
    if (an->requires_grad) {
      auto& ga = ensure_grad(*an);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad(*bn);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += c * go[i];
    }
  });
  return r;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  check_rank("add_rowvec", a, 2);
  check_rank("add_rowvec", b, 1);
  const int64_t m = a.dim(0), n = a.dim(1);
  if (b.dim(0) != n) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out[static_cast<size_t>(i * n + j)] = a.data()[static_cast<size_t>(i * n + j)] + b.data()[static_cast<size_t>(j)];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("add_rowvec", {&a, &b}, r, [an = a.node(), bn = b.node(), on = r.node(), m, n] {
    if (on->grad.empty()) return;
    const auto& go = on->grad;
    if (an->requires_grad) {
      auto& ga = ensure_grad(*an);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad(*bn);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gb[static_cast<size_t>(j)] += go[static_cast<size_t>(i * n + j)];
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd + p * n;
      double* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Tensor r = Tensor::from_data({m, n}, std::move(out));
  finalize("matmul", {&a, &b}, r, [an = a.node(), bn = b.node(), on = r.node(), m, k, n] {
    if (on->grad.empty()) return;
    const auto& go = on->grad;
    if (an->requires_grad) {
      auto& ga = ensure_grad(*an);
      // dA = dC B^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (int64_t j = 0; j < n; ++j) acc += go[static_cast<size_t>(i * n + j)] * bn->data[static_cast<size_t>(p * n + j)];
          ga[static_cast<size_t>(i * k + p)] += acc;
        }
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad(*bn);
      // dB = A^T dC
      for (int64_t p = 0; p < k; ++p)
        for (int64_t i = 0; i < m; ++i) {
          const double aip = an->data[static_cast<size_t>(i * k + p)];
          for (int64_t j = 0; j < n; ++j) gb[static_cast<size_t>(p * n + j)] += aip * go[static_cast<size_t>(i * n + j)];
        }
    }
  });
  return r;
}

Tensor transpose(const Tensor& a) {
  check_rank("transpose", a, 2);
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.data()[static_cast<size_t>(i * n + j)];
  Tensor r = Tensor::from_data({n, m}, std::move(out));
  finalize("transpose", {&a}, r, [an = a.node(), on = r.node(), m, n] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& ga = ensure_grad(*an);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ga[static_cast<size_t>(i * n + j)] += on->grad[static_cast<size_t>(j * m + i)];
  });
  return r;
}

// ---------------------------------------------------------------------------
// nonlinearities

Tensor softmax_rows(const Tensor& a) {
  check_rank("softmax_rows", a, 2);
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mx = row[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      out[static_cast<size_t>(i * n + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] /= denom;
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("softmax_rows", {&a}, r, [an = a.node(), on = r.node(), m, n] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& ga = ensure_grad(*an);
    // dx_j = p_j * (dp_j - sum_k p_k dp_k), per row
    for (int64_t i = 0; i < m; ++i) {
      const double* p = on->data.data() + i * n;
      const double* gp = on->grad.data() + i * n;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += p[j] * gp[j];
      for (int64_t j = 0; j < n; ++j) ga[static_cast<size_t>(i * n + j)] += p[j] * (gp[j] - dot);
    }
  });
  return r;
}

Tensor causal_mask(const Tensor& a) {
  check_rank("causal_mask", a, 2);
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out[static_cast<size_t>(i * n + j)] = (j > i) ? kMaskValue : a.data()[static_cast<size_t>(i * n + j)];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  finalize("causal_mask", {&a}, r, [an = a.node(), on = r.node(), m, n] {
    if (on->grad.empty() || !an->requires_grad) return;
    auto& ga = ensure_grad(*an);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j <= std::min(i, n - 1); ++j)
        ga[static_cast<size_t>(i * n + j)] += on->grad[static_cast<size_t>(i * n + j)];
  });
  return r;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
  const int64_t d = x.shape().back();
  check_rank("layer_norm(gamma)", gamma, 1);
  check_rank("layer_norm(beta)", beta, 1);
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw std::invalid_argument("layer_norm: affine params " + shape_str(gamma.shape()) +
                                "/" + shape_str(beta.shape()) + " do not match last dim of " +
                                shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / d;
  std::vector<double> out(x.data().size());
  std::vector<double> xhat(x.data().size());
  std::vector<double> inv(static_cast<size_t>(rows));
  for (int64_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv[static_cast<size_t>(i)] = istd;
    for (int64_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * istd;
      xhat[static_cast<size_t>(i * d + j)] = h;
      out[static_cast<size_t>(i * d + j)] = gamma.data()[static_cast<size_t>(j)] * h + beta.data()[static_cast<size_t>(j)];
    }
  }
  Tensor r = Tensor::from_data(x.shape(), std::move(out));
  finalize("layer_norm", {&x, &gamma, &beta}, r,
           [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = r.node(),
            xhat = std::move(xhat), inv = std::move(inv), rows, d] {
             if (on->grad.empty()) return;
             const auto& go = on->grad;
             if (gn->requires_grad) {
               auto& gg = ensure_grad(*gn);
               for (int64_t i = 0; i < rows; ++i)
                 for (int64_t j = 0; j < d; ++j)
                   gg[static_cast<size_t>(j)] += go[static_cast<size_t>(i * d + j)] * xhat[static_cast<size_t>(i * d + j)];
             }
             if (bn->requires_grad) {
               auto& gb = ensure_grad(*bn);
               for (int64_t i = 0; i < rows; ++i)
                 for (int64_t j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += go[static_cast<size_t>(i * d + j)];
             }
             if (xn->requires_grad) {
               auto& gx = ensure_grad(*xn);
               // dx = istd * (dh - mean(dh) - xhat * mean(dh*xhat)), dh = dy*gamma
               for (int64_t i = 0; i < rows; ++i) {
                 double mean_dh = 0.0, mean_dhh = 0.0;
                 for (int64_t j = 0; j < d; ++j) {
                   const double dh = go[static_cast<size_t>(i * d + j)] * gn->data[static_cast<size_t>(j)];
                   mean_dh += dh;
                   mean_dhh += dh * xhat[static_cast<size_t>(i * d + j)];
                 }
                 mean_dh /= static_cast<double>(d);
                 mean_dhh /= static_cast<double>(d);
                 const double istd = inv[static_cast<size_t>(i)];
                 for (int64_t j = 0; j < d; ++j) {
                   const double dh = go[static_cast<size_t>(i * d + j)] * gn->data[static_cast<size_t>(j)];
                   gx[static_cast<size_t>(i * d + j)] +=
                       istd * (dh - mean_dh - xhat[static_cast<size_t>(i * d + j)] * mean_dhh);
                 }
               }
             }
           });
  return r;
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  Tensor r = Tensor::from_data(x.shape(), std::move(out));
  finalize("gelu", {&x}, r, [xn = x.node(), on = r.node()] {
    if (on->grad.empty() || !xn->requires_grad) return;
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    auto& gx = ensure_grad(*xn);
    for (size_t i = 0; i < on->grad.size(); ++i) {
      const double v = xn->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += on->grad[i] * (cdf + v * pdf);
    }
  });
  return r;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor r = Tensor::scalar(acc);
  finalize("sum", {&x}, r, [xn = x.node(), on = r.node()] {
    if (on->grad.empty() || !xn->requires_grad) return;
    auto& gx = ensure_grad(*xn);
    const double g = on->grad[0];
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return r;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                                " changes element count");
  }
  Tensor r = Tensor::from_data(std::move(shape), x.data());
  finalize("reshape", {&x}, r, [xn = x.node(), on = r.node()] {
    if (on->grad.empty() || !xn->requires_grad) return;
    auto& gx = ensure_grad(*xn);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i];
  });
  return r;
}

// ---------------------------------------------------------------------------
// assembly ops

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int64_t n = parts[0].dim(1);
  int64_t rows = 0;
  for (const Tensor& p : parts) {
    check_rank("concat_rows", p, 2);
    if (p.dim(1) != n) {
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                                  " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows * n));
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor r = Tensor::from_data({rows, n}, std::move(out));

  bool rg = false;
  for (const Tensor& p : parts) rg = rg || p.requires_grad();
  if (rg && Tape::active()) {
    r.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) nodes.push_back(p.node());
    Tape::active()->record("concat_rows", [nodes = std::move(nodes), on = r.node()] {
      if (on->grad.empty()) return;
      size_t off = 0;
      for (const auto& pn : nodes) {
        if (pn->requires_grad) {
          auto& gp = ensure_grad(*pn);
          for (size_t i = 0; i < gp.size(); ++i) gp[i] += on->grad[off + i];
        }
        off += pn->data.size();
      }
    });
  }
  return r;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int64_t m = parts[0].dim(0);
  int64_t cols = 0;
  for (const Tensor& p : parts) {
    check_rank("concat_cols", p, 2);
    if (p.dim(0) != m) {
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                                  " vs " + shape_str(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(m * cols));
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t pn = p.dim(1);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < pn; ++j)
        out[static_cast<size_t>(i * cols + off + j)] = p.data()[static_cast<size_t>(i * pn + j)];
    off += pn;
  }
  Tensor r = Tensor::from_data({m, cols}, std::move(out));

  bool rg = false;
  for (const Tensor& p : parts) rg = rg || p.requires_grad();
  if (rg && Tape::active()) {
    r.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    Tape::active()->record("concat_cols", [nodes = std::move(nodes), on = r.node(), m, cols] {
      if (on->grad.empty()) return;
      int64_t off = 0;
      for (const auto& pn : nodes) {
        const int64_t w = pn->shape[1];
        if (pn->requires_grad) {
          auto& gp = ensure_grad(*pn);
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j)
              gp[static_cast<size_t>(i * w + j)] += on->grad[static_cast<size_t>(i * cols + off + j)];
        }
        off += w;
      }
    });
  }
  return r;
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
  check_rank("slice_rows", x, 2);
  const int64_t m = x.dim(0), n = x.dim(1);
  if (r0 < 0 || r1 > m || r0 >= r1) {
    std::ostringstream os;
    os << "slice_rows: range [" << r0 << ", " << r1 << ") invalid for " << shape_str(x.shape());
    throw std::invalid_argument(os.str());
  }
  std::vector<double> out(x.data().begin() + r0 * n, x.data().begin() + r1 * n);
  Tensor r = Tensor::from_data({r1 - r0, n}, std::move(out));
  finalize("slice_rows", {&x}, r, [xn = x.node(), on = r.node(), r0, n] {
    if (on->grad.empty() || !xn->requires_grad) return;
    auto& gx = ensure_grad(*xn);
    for (size_t i = 0; i < on->grad.size(); ++i) gx[static_cast<size_t>(r0 * n) + i] += on->grad[i];
  });
  return r;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  check_rank("embedding_rows", table, 2);
  const int64_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * static_cast<size_t>(d));
  for (size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || id >= v) {
      std::ostringstream os;
      os << "embedding_rows: id " << id << " out of range for table " << shape_str(table.shape());
      throw std::invalid_argument(os.str());
    }
    std::memcpy(out.data() + r * static_cast<size_t>(d),
                table.data().data() + static_cast<size_t>(id) * static_cast<size_t>(d),
                static_cast<size_t>(d) * sizeof(double));
  }
  Tensor r = Tensor::from_data({static_cast<int64_t>(ids.size()), d}, std::move(out));
  finalize("embedding_rows", {&table}, r, [tn = table.node(), on = r.node(), ids, d] {
    if (on->grad.empty() || !tn->requires_grad) return;
    auto& gt = ensure_grad(*tn);
    for (size_t r2 = 0; r2 < ids.size(); ++r2)
      for (int64_t j = 0; j < d; ++j)
        gt[static_cast<size_t>(ids[r2]) * static_cast<size_t>(d) + static_cast<size_t>(j)] +=
            on->grad[r2 * static_cast<size_t>(d) + static_cast<size_t>(j)];
  });
  return r;
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  check_rank("cross_entropy_mean", logits, 2);
  const int64_t n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    std::ostringstream os;
    os << "cross_entropy_mean: " << labels.size() << " labels for " << n << " rows";
    throw std::invalid_argument(os.str());
  }
  std::vector<double> probs(logits.data().size());
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const int lab = labels[static_cast<size_t>(i)];
    if (lab < 0 || lab >= v) {
      std::ostringstream os;
      os << "cross_entropy_mean: label " << lab << " out of range for " << v << " classes";
      throw std::invalid_argument(os.str());
    }
    const double* row = logits.data().data() + i * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[static_cast<size_t>(i * v + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < v; ++j) probs[static_cast<size_t>(i * v + j)] /= denom;
    total += (mx + std::log(denom)) - row[lab];
  }
  Tensor r = Tensor::scalar(total / static_cast<double>(n));
  finalize("cross_entropy_mean", {&logits}, r,
           [ln = logits.node(), on = r.node(), probs = std::move(probs), labels, n, v] {
             if (on->grad.empty() || !ln->requires_grad) return;
             auto& gl = ensure_grad(*ln);
             const double g = on->grad[0] / static_cast<double>(n);
             for (int64_t i = 0; i < n; ++i) {
               for (int64_t j = 0; j < v; ++j)
                 gl[static_cast<size_t>(i * v + j)] += g * probs[static_cast<size_t>(i * v + j)];
               gl[static_cast<size_t>(i * v + labels[static_cast<size_t>(i)])] -= g;
             }
           });
  return r;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.data().size());
  for (size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = (u < p) ? 0.0 : keep_scale;
  }
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  Tensor r = Tensor::from_data(x.shape(), std::move(out));
  finalize("dropout", {&x}, r, [xn = x.node(), on = r.node(), mask = std::move(mask)] {
    if (on->grad.empty() || !xn->requires_grad) return;
    auto& gx = ensure_grad(*xn);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * mask[i];
  });
  return r;
}

}  // namespace parformer
