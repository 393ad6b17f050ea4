#include "msjudge/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

}  // namespace

namespace msjudge {

struct TensorAccess {
  static auto impl(const Tensor& t) { return t.impl_; }
};

namespace {

auto impl_of(const Tensor& t) { return TensorAccess::impl(t); }

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check_defined(a, op);
  check_defined(b, op);
  if (!(a.shape() == b.shape())) throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
}

void check_rank(const Tensor& t, std::size_t rank, const char* op) {
  check_defined(t, op);
  if (!(t.rank() == rank)) throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                              shape_string(t.shape()));
}

template <typename Impl>
void accumulate(const Impl& target, std::span<const double> delta) {
  if (!target->requires_grad) return;
  for (std::size_t i = 0; i < delta.size(); ++i) target->grad[i] += delta[i];
}

void softmax_into(std::span<const double> x, Mask mask, std::span<double> out) {
  double best = -INFINITY;
  bool any = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    best = std::max(best, x[i]);
    any = true;
  }
  if (!any) throw ContractError("softmax: every position is masked");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && !mask[i]) {
      out[i] = 0.0;
      continue;
    }
    out[i] = std::exp(x[i] - best);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

// dx_i = y_i (dy_i - sum_j y_j dy_j)
template <typename Impl>
void softmax_backward(std::span<const double> y, std::span<const double> dy, const Impl& input,
                      std::size_t offset) {
  if (!input->requires_grad) return;
  double inner = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * dy[i];
  for (std::size_t i = 0; i < y.size(); ++i) input->grad[offset + i] += y[i] * (dy[i] - inner);
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F, typename B>
Tensor unary(Tape& tape, const Tensor& x, F&& forward, B&& local_grad) {
  check_defined(x, "unary");
  Buffer out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  const bool tracked = tape.should_record({&x});
  Tensor result = Tape::make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto xi = impl_of(x);
    auto yi = impl_of(result);
    tape.record([xi, yi, local_grad] {
      for (std::size_t i = 0; i < yi->value.size(); ++i)
        xi->grad[i] += yi->grad[i] * local_grad(xi->value[i], yi->value[i]);
    });
  }
  return result;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tape::make_output(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tape::make_output(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("undefined tensor");
  return impl_->shape;
}
std::size_t Tensor::size() const { return impl_ ? impl_->value.size() : 0; }
std::size_t Tensor::rows() const { return rank() == 0 ? 1 : shape()[0]; }
std::size_t Tensor::cols() const { return rank() == 2 ? shape()[1] : size(); }
std::span<const double> Tensor::data() const { return impl_->value; }
std::span<double> Tensor::mutable_data() { return impl_->value; }
double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return impl_->value[0];
}
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->grad; }
void Tensor::zero_grad() {
  if (impl_ && impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}
Tensor Tensor::detach() const { return Tape::make_output(shape(), impl_->value, false); }

// --- Tape --------------------------------------------------------------------

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

bool Tape::should_record(std::span<const Tensor> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

Tensor Tape::make_output(Shape shape, Buffer values, bool tracked) {
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  if (shape_size(shape) != values.size())
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " + std::to_string(values.size()) +
                         " values");
  auto impl = std::make_shared<Tensor::Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  impl->requires_grad = tracked;
  if (tracked) impl->grad.assign(impl->value.size(), 0.0);
  return Tensor(std::move(impl));
}

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw ContractError("tape already ran backward; reset() before recording again");
  nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  if (consumed_) throw ContractError("backward: tape already consumed; call reset() first");
  if (!loss.requires_grad()) throw ContractError("backward: loss is not reachable from any parameter");
  consumed_ = true;
  impl_of(loss)->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

// --- linear algebra ------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (!(b.shape()[0] == k)) throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                               shape_string(b.shape()));
  Buffer out(m * n, 0.0);
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += s * bv[p * n + j];
    }
  const bool tracked = tape.should_record({&a, &b});
  Tensor result = Tape::make_output({m, n}, std::move(out), tracked);
  if (tracked) {
    auto ai = impl_of(a), bi = impl_of(b), yi = impl_of(result);
    tape.record([ai, bi, yi, m, k, n] {
      const auto& dy = yi->grad;
      if (ai->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += dy[i * n + j] * bi->value[p * n + j];
            ai->grad[i * k + p] += s;
          }
      if (bi->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double s = ai->value[i * k + p];
            if (s == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) bi->grad[p * n + j] += s * dy[i * n + j];
          }
    });
  }
  return result;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul_nt");
  check_rank(b, 2, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (!(b.shape()[1] == k)) throw DimensionError("matmul_nt: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                               shape_string(b.shape()) + "^T");
  Buffer out(m * n);
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = s;
    }
  const bool tracked = tape.should_record({&a, &b});
  Tensor result = Tape::make_output({m, n}, std::move(out), tracked);
  if (tracked) {
    auto ai = impl_of(a), bi = impl_of(b), yi = impl_of(result);
    tape.record([ai, bi, yi, m, k, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double d = yi->grad[i * n + j];
          if (d == 0.0) continue;
          if (ai->requires_grad)
            for (std::size_t p = 0; p < k; ++p) ai->grad[i * k + p] += d * bi->value[j * k + p];
          if (bi->requires_grad)
            for (std::size_t p = 0; p < k; ++p) bi->grad[j * k + p] += d * ai->value[i * k + p];
        }
    });
  }
  return result;
}

Tensor matvec(Tape& tape, const Tensor& m, const Tensor& x) {
  check_rank(m, 2, "matvec");
  check_rank(x, 1, "matvec");
  const std::size_t r = m.shape()[0], k = m.shape()[1];
  if (!(x.size() == k)) throw DimensionError("matvec: " + shape_string(m.shape()) + " x " + shape_string(x.shape()));
  Buffer out(r);
  auto mv = m.data(), xv = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += mv[i * k + p] * xv[p];
    out[i] = s;
  }
  const bool tracked = tape.should_record({&m, &x});
  Tensor result = Tape::make_output({r}, std::move(out), tracked);
  if (tracked) {
    auto mi = impl_of(m), xi = impl_of(x), yi = impl_of(result);
    tape.record([mi, xi, yi, r, k] {
      for (std::size_t i = 0; i < r; ++i) {
        const double d = yi->grad[i];
        if (d == 0.0) continue;
        if (mi->requires_grad)
          for (std::size_t p = 0; p < k; ++p) mi->grad[i * k + p] += d * xi->value[p];
        if (xi->requires_grad)
          for (std::size_t p = 0; p < k; ++p) xi->grad[p] += d * mi->value[i * k + p];
      }
    });
  }
  return result;
}

Tensor vecmat(Tape& tape, const Tensor& x, const Tensor& m) {
  check_rank(x, 1, "vecmat");
  check_rank(m, 2, "vecmat");
  const std::size_t n = m.shape()[0], c = m.shape()[1];
  if (!(x.size() == n)) throw DimensionError("vecmat: " + shape_string(x.shape()) + " x " + shape_string(m.shape()));
  Buffer out(c, 0.0);
  auto mv = m.data(), xv = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (xv[i] == 0.0) continue;
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i] * mv[i * c + j];
  }
  const bool tracked = tape.should_record({&x, &m});
  Tensor result = Tape::make_output({c}, std::move(out), tracked);
  if (tracked) {
    auto xi = impl_of(x), mi = impl_of(m), yi = impl_of(result);
    tape.record([xi, mi, yi, n, c] {
      for (std::size_t i = 0; i < n; ++i) {
        if (xi->requires_grad) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += yi->grad[j] * mi->value[i * c + j];
          xi->grad[i] += s;
        }
        if (mi->requires_grad)
          for (std::size_t j = 0; j < c; ++j) mi->grad[i * c + j] += xi->value[i] * yi->grad[j];
      }
    });
  }
  return result;
}

Tensor rowwise_dot(Tape& tape, const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "rowwise_dot");
  check_same_shape(a, b, "rowwise_dot");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  Buffer out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a.data()[i * k + p] * b.data()[i * k + p];
    out[i] = s;
  }
  const bool tracked = tape.should_record({&a, &b});
  Tensor result = Tape::make_output({m}, std::move(out), tracked);
  if (tracked) {
    auto ai = impl_of(a), bi = impl_of(b), yi = impl_of(result);
    tape.record([ai, bi, yi, m, k] {
      for (std::size_t i = 0; i < m; ++i) {
        const double d = yi->grad[i];
        for (std::size_t p = 0; p < k; ++p) {
          if (ai->requires_grad) ai->grad[i * k + p] += d * bi->value[i * k + p];
          if (bi->requires_grad) bi->grad[i * k + p] += d * ai->value[i * k + p];
        }
      }
    });
  }
  return result;
}

// --- elementwise ---------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const bool tracked = tape.should_record({&a, &b});
  Tensor result = Tape::make_output(a.shape(), std::move(out), tracked);
  if (tracked) {
    auto ai = impl_of(a), bi = impl_of(b), yi = impl_of(result);
    tape.record([ai, bi, yi] {
      accumulate(ai, yi->grad);
      accumulate(bi, yi->grad);
    });
  }
  return result;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  const bool tracked = tape.should_record({&a, &b});
  Tensor result = Tape::make_output(a.shape(), std::move(out), tracked);
  if (tracked) {
    auto ai = impl_of(a), bi = impl_of(b), yi = impl_of(result);
    tape.record([ai, bi, yi] {
      accumulate(ai, yi->grad);
      if (bi->requires_grad)
        for (std::size_t i = 0; i < yi->grad.size(); ++i) bi->grad[i] -= yi->grad[i];
    });
  }
  return result;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const bool tracked = tape.should_record({&a, &b});
  Tensor result = Tape::make_output(a.shape(), std::move(out), tracked);
  if (tracked) {
    auto ai = impl_of(a), bi = impl_of(b), yi = impl_of(result);
    tape.record([ai, bi, yi] {
      for (std::size_t i = 0; i < yi->grad.size(); ++i) {
        if (ai->requires_grad) ai->grad[i] += yi->grad[i] * bi->value[i];
        if (bi->requires_grad) bi->grad[i] += yi->grad[i] * ai->value[i];
      }
    });
  }
  return result;
}

Tensor add_row(Tape& tape, const Tensor& m, const Tensor& row) {
  check_rank(m, 2, "add_row");
  check_rank(row, 1, "add_row");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (!(row.size() == c)) throw DimensionError("add_row: " + shape_string(m.shape()) + " + " + shape_string(row.shape()));
  Buffer out(m.data().begin(), m.data().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row.data()[j];
  const bool tracked = tape.should_record({&m, &row});
  Tensor result = Tape::make_output(m.shape(), std::move(out), tracked);
  if (tracked) {
    auto mi = impl_of(m), ri = impl_of(row), yi = impl_of(result);
    tape.record([mi, ri, yi, r, c] {
      accumulate(mi, yi->grad);
      if (ri->requires_grad)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ri->grad[j] += yi->grad[i * c + j];
    });
  }
  return result;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  return unary(
      tape, a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor scale_rows(Tape& tape, const Tensor& m, const Tensor& factors) {
  check_rank(m, 2, "scale_rows");
  check_rank(factors, 1, "scale_rows");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (!(factors.size() == r)) throw DimensionError("scale_rows: " + shape_string(m.shape()) + " by " + shape_string(factors.shape()));
  Buffer out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] * factors.data()[i];
  const bool tracked = tape.should_record({&m, &factors});
  Tensor result = Tape::make_output(m.shape(), std::move(out), tracked);
  if (tracked) {
    auto mi = impl_of(m), fi = impl_of(factors), yi = impl_of(result);
    tape.record([mi, fi, yi, r, c] {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double d = yi->grad[i * c + j];
          if (mi->requires_grad) mi->grad[i * c + j] += d * fi->value[i];
          if (fi->requires_grad) fi->grad[i] += d * mi->value[i * c + j];
        }
    });
  }
  return result;
}

Tensor one_minus(Tape& tape, const Tensor& a) {
  return unary(
      tape, a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(tape, x, logistic, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log_clamped(Tape& tape, const Tensor& x, double floor) {
  if (!(floor > 0.0)) throw DomainError("log_clamped: floor must be positive");
  return unary(
      tape, x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor sum(Tape& tape, const Tensor& x) {
  check_defined(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const bool tracked = tape.should_record({&x});
  Tensor result = Tape::make_output({}, {s}, tracked);
  if (tracked) {
    auto xi = impl_of(x), yi = impl_of(result);
    tape.record([xi, yi] {
      for (double& g : xi->grad) g += yi->grad[0];
    });
  }
  return result;
}

// --- normalization -------------------------------------------------------------

Tensor softmax(Tape& tape, const Tensor& x) { return masked_softmax(tape, x, {}); }

Tensor masked_softmax(Tape& tape, const Tensor& x, Mask mask) {
  check_defined(x, "softmax");
  if (x.rank() != 1) throw DimensionError("softmax: expected a vector, got " + shape_string(x.shape()));
  if (!mask.empty() && mask.size() != x.size())
    throw DimensionError("masked_softmax: mask length " + std::to_string(mask.size()) +
                         " for input " + shape_string(x.shape()));
  Buffer out(x.size());
  softmax_into(x.data(), mask, out);
  const bool tracked = tape.should_record({&x});
  Tensor result = Tape::make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto xi = impl_of(x), yi = impl_of(result);
    tape.record([xi, yi] { softmax_backward(std::span<const double>(yi->value), yi->grad, xi, 0); });
  }
  return result;
}

Tensor masked_softmax_rows(Tape& tape, const Tensor& x, Mask column_mask) {
  check_rank(x, 2, "masked_softmax_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (!column_mask.empty() && column_mask.size() != c)
    throw DimensionError("masked_softmax_rows: mask length " + std::to_string(column_mask.size()) +
                         " for input " + shape_string(x.shape()));
  Buffer out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    softmax_into(x.data().subspan(i * c, c), column_mask, std::span<double>(out).subspan(i * c, c));
  const bool tracked = tape.should_record({&x});
  Tensor result = Tape::make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto xi = impl_of(x), yi = impl_of(result);
    tape.record([xi, yi, r, c] {
      for (std::size_t i = 0; i < r; ++i)
        softmax_backward(std::span<const double>(yi->value).subspan(i * c, c),
                         std::span<const double>(yi->grad).subspan(i * c, c), xi, i * c);
    });
  }
  return result;
}

// --- structural ------------------------------------------------------------------

Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Buffer out;
  for (const auto& p : parts) {
    check_rank(p, 1, "concat");
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const bool tracked = tape.should_record(std::span<const Tensor>(parts));
  const std::size_t n = out.size();
  Tensor result = Tape::make_output({n}, std::move(out), tracked);
  if (tracked) {
    std::vector<decltype(impl_of(parts[0]))> inputs;
    for (const auto& p : parts) inputs.push_back(impl_of(p));
    auto yi = impl_of(result);
    tape.record([inputs, yi] {
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        const std::size_t len = in->value.size();
        accumulate(in, std::span<const double>(yi->grad).subspan(offset, len));
        offset += len;
      }
    });
  }
  return result;
}

Tensor concat_columns(Tape& tape, const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "concat_columns");
  check_rank(b, 2, "concat_columns");
  const std::size_t n = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  if (b.shape()[0] != n)
    throw DimensionError("concat_columns: row counts differ " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  Buffer out(n * (p + q));
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + i * p, p, out.begin() + i * (p + q));
    std::copy_n(bv.begin() + i * q, q, out.begin() + i * (p + q) + p);
  }
  const bool tracked = tape.should_record({&a, &b});
  Tensor result = Tape::make_output({n, p + q}, std::move(out), tracked);
  if (tracked) {
    auto ai = impl_of(a), bi = impl_of(b), yi = impl_of(result);
    tape.record([=] {
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = yi->grad.data() + i * (p + q);
        if (ai->requires_grad)
          for (std::size_t j = 0; j < p; ++j) ai->grad[i * p + j] += g[j];
        if (bi->requires_grad)
          for (std::size_t j = 0; j < q; ++j) bi->grad[i * q + j] += g[p + j];
      }
    });
  }
  return result;
}

Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no inputs");
  const std::size_t c = rows.front().size();
  for (const auto& r : rows) {
    check_rank(r, 1, "stack_rows");
    if (!(r.size() == c)) throw DimensionError("stack_rows: ragged rows " + shape_string(rows.front().shape()) + " vs " +
                             shape_string(r.shape()));
  }
  Tensor flat = concat(tape, rows);
  // reshape without copying history: wrap in a view node
  Buffer out(flat.data().begin(), flat.data().end());
  const bool tracked = tape.should_record({&flat});
  Tensor result = Tape::make_output({rows.size(), c}, std::move(out), tracked);
  if (tracked) {
    auto fi = impl_of(flat), yi = impl_of(result);
    tape.record([fi, yi] { accumulate(fi, yi->grad); });
  }
  return result;
}

Tensor row(Tape& tape, const Tensor& m, std::size_t index) {
  check_rank(m, 2, "row");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (index >= r) throw DimensionError("row: index " + std::to_string(index) + " out of " + shape_string(m.shape()));
  Buffer out(m.data().begin() + index * c, m.data().begin() + (index + 1) * c);
  const bool tracked = tape.should_record({&m});
  Tensor result = Tape::make_output({c}, std::move(out), tracked);
  if (tracked) {
    auto mi = impl_of(m), yi = impl_of(result);
    tape.record([mi, yi, index, c] {
      for (std::size_t j = 0; j < c; ++j) mi->grad[index * c + j] += yi->grad[j];
    });
  }
  return result;
}

Tensor slice(Tape& tape, const Tensor& v, std::size_t begin, std::size_t length) {
  check_rank(v, 1, "slice");
  if (length == 0 || begin + length > v.size())
    throw DimensionError("slice: [" + std::to_string(begin) + ", +" + std::to_string(length) + ") of " +
                         shape_string(v.shape()));
  Buffer out(v.data().begin() + begin, v.data().begin() + begin + length);
  const bool tracked = tape.should_record({&v});
  Tensor result = Tape::make_output({length}, std::move(out), tracked);
  if (tracked) {
    auto vi = impl_of(v), yi = impl_of(result);
    tape.record([vi, yi, begin, length] {
      for (std::size_t j = 0; j < length; ++j) vi->grad[begin + j] += yi->grad[j];
    });
  }
  return result;
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const int> ids) {
  check_rank(table, 2, "gather_rows");
  if (ids.empty()) throw DimensionError("gather_rows: no ids");
  const std::size_t vocab = table.shape()[0], c = table.shape()[1];
  Buffer out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table " +
                           shape_string(table.shape()));
    std::copy_n(table.data().begin() + ids[i] * c, c, out.begin() + i * c);
  }
  const bool tracked = tape.should_record({&table});
  Tensor result = Tape::make_output({ids.size(), c}, std::move(out), tracked);
  if (tracked) {
    auto ti = impl_of(table), yi = impl_of(result);
    std::vector<int> saved(ids.begin(), ids.end());
    tape.record([ti, yi, saved, c] {
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) ti->grad[saved[i] * c + j] += yi->grad[i * c + j];
    });
  }
  return result;
}

Tensor append_to_rows(Tape& tape, const Tensor& m, const Tensor& v) {
  check_rank(m, 2, "append_to_rows");
  check_rank(v, 1, "append_to_rows");
  const std::size_t r = m.shape()[0], c = m.shape()[1], e = v.size(), w = c + e;
  Buffer out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(m.data().begin() + i * c, c, out.begin() + i * w);
    std::copy_n(v.data().begin(), e, out.begin() + i * w + c);
  }
  const bool tracked = tape.should_record({&m, &v});
  Tensor result = Tape::make_output({r, w}, std::move(out), tracked);
  if (tracked) {
    auto mi = impl_of(m), vi = impl_of(v), yi = impl_of(result);
    tape.record([mi, vi, yi, r, c, e, w] {
      for (std::size_t i = 0; i < r; ++i) {
        if (mi->requires_grad)
          for (std::size_t j = 0; j < c; ++j) mi->grad[i * c + j] += yi->grad[i * w + j];
        if (vi->requires_grad)
          for (std::size_t j = 0; j < e; ++j) vi->grad[j] += yi->grad[i * w + c + j];
      }
    });
  }
  return result;
}

Tensor override_entries(Tape& tape, const Tensor& x,
                        const std::vector<std::pair<std::size_t, double>>& values) {
  check_defined(x, "override_entries");
  Buffer out(x.data().begin(), x.data().end());
  std::vector<std::uint8_t> fixed(out.size(), 0);
  for (const auto& [index, value] : values) {
    if (index >= out.size())
      throw DimensionError("override_entries: index " + std::to_string(index) + " outside " +
                           shape_string(x.shape()));
    out[index] = value;
    fixed[index] = 1;
  }
  const bool tracked = tape.should_record({&x});
  Tensor result = Tape::make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto xi = impl_of(x), yi = impl_of(result);
    tape.record([xi, yi, fixed] {
      for (std::size_t i = 0; i < fixed.size(); ++i)
        if (!fixed[i]) xi->grad[i] += yi->grad[i];
    });
  }
  return result;
}

Tensor dropout(Tape& tape, const Tensor& x, double drop_rate, bool training, Rng& rng) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0))
    throw DomainError("dropout: drop rate must lie in [0, 1), got " + std::to_string(drop_rate));
  if (!training || drop_rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - drop_rate);
  std::bernoulli_distribution keep(1.0 - drop_rate);
  Buffer factor(x.size());
  for (double& f : factor) f = keep(rng) ? keep_scale : 0.0;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor[i];
  const bool tracked = tape.should_record({&x});
  Tensor result = Tape::make_output(x.shape(), std::move(out), tracked);
  if (tracked) {
    auto xi = impl_of(x), yi = impl_of(result);
    tape.record([xi, yi, factor] {
      for (std::size_t i = 0; i < factor.size(); ++i) xi->grad[i] += yi->grad[i] * factor[i];
    });
  }
  return result;
}

// --- recurrent -------------------------------------------------------------------

LstmState lstm_cell(Tape& tape, const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmWeights& weights) {
  check_rank(weights.input, 2, "lstm_cell");
  check_rank(weights.recurrent, 2, "lstm_cell");
  check_rank(weights.bias, 1, "lstm_cell");
  const std::size_t hid = weights.hidden();
  const std::size_t in = weights.input.shape()[1];
  auto shapes = [&] {
    return " (x " + shape_string(x.shape()) + ", h " + shape_string(h_prev.shape()) + ", W " +
           shape_string(weights.input.shape()) + ", U " + shape_string(weights.recurrent.shape()) + ")";
  };
  auto require = [&](bool ok, const char* what) {
    if (!ok) throw DimensionError(std::string("lstm_cell: ") + what + shapes());
  };
  require(weights.bias.size() == 4 * hid && hid > 0, "bias must have 4h entries");
  require(weights.input.shape()[0] == 4 * hid, "input weights must have 4h rows");
  require(weights.recurrent.shape() == Shape{4 * hid, hid}, "recurrent weights must be [4h, h]");
  require(x.rank() == 1 && x.size() == in, "input width disagrees with weights");
  require(h_prev.rank() == 1 && h_prev.size() == hid, "hidden state width");
  require(c_prev.rank() == 1 && c_prev.size() == hid, "cell state width");

  // gates[0..4h): activated values (sigmoid for i, f, o; tanh for g)
  Buffer gates(4 * hid);
  {
    VecMap pre(gates.data(), 4 * hid);
    pre = ConstMatMap(weights.input.data().data(), 4 * hid, in) * ConstVecMap(x.data().data(), in) +
          ConstMatMap(weights.recurrent.data().data(), 4 * hid, hid) * ConstVecMap(h_prev.data().data(), hid) +
          ConstVecMap(weights.bias.data().data(), 4 * hid);
  }
  for (std::size_t r = 0; r < 4 * hid; ++r) gates[r] = (r / hid == 2) ? std::tanh(gates[r]) : logistic(gates[r]);
  auto cv = c_prev.data();
  Buffer c_out(hid), h_out(hid), tanh_c(hid);
  for (std::size_t j = 0; j < hid; ++j) {
    const double i = gates[j], f = gates[hid + j], g = gates[2 * hid + j], o = gates[3 * hid + j];
    c_out[j] = f * cv[j] + i * g;
    tanh_c[j] = std::tanh(c_out[j]);
    h_out[j] = o * tanh_c[j];
  }
  const bool tracked =
      tape.should_record({&x, &h_prev, &c_prev, &weights.input, &weights.recurrent, &weights.bias});
  LstmState next{Tape::make_output({hid}, std::move(h_out), tracked),
                 Tape::make_output({hid}, std::move(c_out), tracked)};
  if (tracked) {
    auto xi = impl_of(x), hi = impl_of(h_prev), ci = impl_of(c_prev);
    auto wi = impl_of(weights.input), ui = impl_of(weights.recurrent), bi = impl_of(weights.bias);
    auto ho = impl_of(next.h), co = impl_of(next.c);
    tape.record([=, gates = std::move(gates), tanh_c = std::move(tanh_c)] {
      Buffer pre(4 * hid);
      for (std::size_t j = 0; j < hid; ++j) {
        const double i = gates[j], f = gates[hid + j], g = gates[2 * hid + j], o = gates[3 * hid + j];
        const double dh = ho->grad[j];
        const double dc = co->grad[j] + dh * o * (1.0 - tanh_c[j] * tanh_c[j]);
        if (ci->requires_grad) ci->grad[j] += dc * f;
        pre[j] = dc * g * i * (1.0 - i);
        pre[hid + j] = dc * ci->value[j] * f * (1.0 - f);
        pre[2 * hid + j] = dc * i * (1.0 - g * g);
        pre[3 * hid + j] = dh * tanh_c[j] * o * (1.0 - o);
      }
      ConstVecMap d(pre.data(), 4 * hid);
      if (bi->requires_grad) VecMap(bi->grad.data(), 4 * hid) += d;
      if (wi->requires_grad)
        MatMap(wi->grad.data(), 4 * hid, in).noalias() += d * ConstVecMap(xi->value.data(), in).transpose();
      if (xi->requires_grad)
        VecMap(xi->grad.data(), in).noalias() += ConstMatMap(wi->value.data(), 4 * hid, in).transpose() * d;
      if (ui->requires_grad)
        MatMap(ui->grad.data(), 4 * hid, hid).noalias() += d * ConstVecMap(hi->value.data(), hid).transpose();
      if (hi->requires_grad)
        VecMap(hi->grad.data(), hid).noalias() += ConstMatMap(ui->value.data(), 4 * hid, hid).transpose() * d;
    });
  }
  return next;
}

Tensor lstm_sequence(Tape& tape, const Tensor& inputs, Mask mask, const LstmWeights& weights, bool reverse) {
  check_rank(inputs, 2, "lstm_sequence");
  check_rank(weights.input, 2, "lstm_sequence");
  check_rank(weights.recurrent, 2, "lstm_sequence");
  const std::size_t len = inputs.shape()[0], in = inputs.shape()[1], hid = weights.hidden();
  if (hid == 0 || weights.bias.size() != 4 * hid || weights.input.shape() != Shape{4 * hid, in} ||
      weights.recurrent.shape() != Shape{4 * hid, hid})
    throw DimensionError("lstm_sequence: inputs " + shape_string(inputs.shape()) + " vs W " +
                         shape_string(weights.input.shape()) + ", U " + shape_string(weights.recurrent.shape()) +
                         ", b " + shape_string(weights.bias.shape()));
  if (!mask.empty() && mask.size() != len)
    throw DimensionError("lstm_sequence: mask length " + std::to_string(mask.size()) + " for " +
                         std::to_string(len) + " steps");

  // Active time indices in processing order.
  std::vector<std::size_t> steps;
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t t = reverse ? len - 1 - i : i;
    if (mask.empty() || mask[t]) steps.push_back(t);
  }
  const std::size_t m = steps.size();
  const std::size_t g4 = 4 * hid;

  RowMajor x_active(m, in);
  for (std::size_t s = 0; s < m; ++s)
    x_active.row(s) = ConstMatMap(inputs.data().data(), len, in).row(steps[s]);
  // gates[s] holds activated i, f, g, o; h_prev/c_prev the state entering step s.
  RowMajor gates = x_active * ConstMatMap(weights.input.data().data(), g4, in).transpose();
  gates.rowwise() += ConstVecMap(weights.bias.data().data(), g4).transpose();
  RowMajor h_prev = RowMajor::Zero(m, hid), c_prev = RowMajor::Zero(m, hid), tanh_c(m, hid);
  ConstMatMap U(weights.recurrent.data().data(), g4, hid);
  Buffer out(len * hid, 0.0);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(hid), c = Eigen::VectorXd::Zero(hid);
  for (std::size_t s = 0; s < m; ++s) {
    h_prev.row(s) = h.transpose();
    c_prev.row(s) = c.transpose();
    gates.row(s) += (U * h).transpose();
    for (std::size_t r = 0; r < g4; ++r) gates(s, r) = (r / hid == 2) ? std::tanh(gates(s, r)) : logistic(gates(s, r));
    for (std::size_t j = 0; j < hid; ++j) {
      c[j] = gates(s, hid + j) * c[j] + gates(s, j) * gates(s, 2 * hid + j);
      tanh_c(s, j) = std::tanh(c[j]);
      h[j] = gates(s, 3 * hid + j) * tanh_c(s, j);
      out[steps[s] * hid + j] = h[j];
    }
  }

  const bool tracked = m > 0 && tape.should_record({&inputs, &weights.input, &weights.recurrent, &weights.bias});
  Tensor result = Tape::make_output({len, hid}, std::move(out), tracked);
  if (!tracked) return result;
  auto xi = impl_of(inputs), wi = impl_of(weights.input), ui = impl_of(weights.recurrent), bi = impl_of(weights.bias);
  auto oi = impl_of(result);
  tape.record([=, steps = std::move(steps), x_active = std::move(x_active), gates = std::move(gates),
               h_prev = std::move(h_prev), c_prev = std::move(c_prev), tanh_c = std::move(tanh_c)] {
    RowMajor d(m, g4);
    Eigen::VectorXd dh = Eigen::VectorXd::Zero(hid), dc = Eigen::VectorXd::Zero(hid);
    ConstMatMap U(ui->value.data(), g4, hid);
    for (std::size_t s = m; s-- > 0;) {
      for (std::size_t j = 0; j < hid; ++j) {
        const double i = gates(s, j), f = gates(s, hid + j), g = gates(s, 2 * hid + j), o = gates(s, 3 * hid + j);
        const double dh_j = dh[j] + oi->grad[steps[s] * hid + j];
        const double dc_j = dc[j] + dh_j * o * (1.0 - tanh_c(s, j) * tanh_c(s, j));
        d(s, j) = dc_j * g * i * (1.0 - i);
        d(s, hid + j) = dc_j * c_prev(s, j) * f * (1.0 - f);
        d(s, 2 * hid + j) = dc_j * i * (1.0 - g * g);
        d(s, 3 * hid + j) = dh_j * tanh_c(s, j) * o * (1.0 - o);
        dc[j] = dc_j * f;
      }
      dh.noalias() = U.transpose() * d.row(s).transpose();
    }
    if (bi->requires_grad) VecMap(bi->grad.data(), g4) += d.colwise().sum().transpose();
    if (wi->requires_grad) MatMap(wi->grad.data(), g4, in).noalias() += d.transpose() * x_active;
    if (ui->requires_grad) MatMap(ui->grad.data(), g4, hid).noalias() += d.transpose() * h_prev;
    if (xi->requires_grad) {
      RowMajor dx = d * ConstMatMap(wi->value.data(), g4, in);
      MatMap xg(xi->grad.data(), len, in);
      for (std::size_t s = 0; s < m; ++s) xg.row(steps[s]) += dx.row(s);
    }
  });
  return result;
}

}  // namespace msjudge
