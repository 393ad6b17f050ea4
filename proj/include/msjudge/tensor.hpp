#pragma once

// Dense 64-bit tensors with a reverse-mode tape.
//
// Every operation takes the Tape it records on as its first argument. A node
// is recorded only when the tape is recording and at least one input requires
// a gradient; otherwise the op is a plain forward computation. Tensors share
// storage on copy (handle semantics), so a recorded node keeps its inputs and
// saved activations alive until the tape is reset.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msjudge/errors.hpp"

namespace msjudge {

using Shape = std::vector<std::size_t>;

/// Storage with a fixed 64-byte alignment. Vectorized kernels pick their
/// summation order from buffer addresses, so a fixed alignment keeps results
/// bit-identical from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;
using Mask = std::span<const std::uint8_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // leading dim; 1 for scalars
  std::size_t cols() const;  // trailing dim of a matrix; size() for vectors

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of values; the result carries no gradient history.
  Tensor detach() const;

  const void* identity() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;

  friend class Tape;
  friend struct TensorAccess;
};

/// Ordered record of primitive operations. Backward runs once per recording;
/// a second call without reset() is rejected.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// True when an op with these inputs must be recorded.
  bool should_record(std::initializer_list<const Tensor*> inputs) const;
  bool should_record(std::span<const Tensor> inputs) const;

  /// Output tensor for an op: allocates a gradient buffer iff `tracked`.
  static Tensor make_output(Shape shape, Buffer values, bool tracked);

  void record(std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and visits nodes in reverse order.
  void backward(const Tensor& loss);
  void reset();

 private:
  bool recording_;
  bool consumed_ = false;
  std::vector<std::function<void()>> nodes_;
};

// Deterministic random source for initialization and dropout.
using Rng = std::mt19937_64;

// --- primitive operations -------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);      // [m,k]x[k,n]
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);   // [m,k]x[n,k]^T
Tensor matvec(Tape& tape, const Tensor& m, const Tensor& x);      // [m,k]x[k]
Tensor vecmat(Tape& tape, const Tensor& x, const Tensor& m);      // [n]x[n,c]
Tensor rowwise_dot(Tape& tape, const Tensor& a, const Tensor& b); // [m,k].[m,k] -> [m]

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add_row(Tape& tape, const Tensor& m, const Tensor& row);   // [m,n] + [n] broadcast
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor scale_rows(Tape& tape, const Tensor& m, const Tensor& factors);  // row i * factors[i]
Tensor one_minus(Tape& tape, const Tensor& a);

Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
/// log(max(x, floor)); no gradient flows where the floor is active.
Tensor log_clamped(Tape& tape, const Tensor& x, double floor);

Tensor sum(Tape& tape, const Tensor& x);

/// Softmax of a vector, max-subtracted.
Tensor softmax(Tape& tape, const Tensor& x);
/// Softmax over entries with mask==1; masked entries get exactly zero weight.
Tensor masked_softmax(Tape& tape, const Tensor& x, Mask mask);
/// Row-wise masked softmax of a matrix; `column_mask` applies to every row.
Tensor masked_softmax_rows(Tape& tape, const Tensor& x, Mask column_mask);

Tensor concat(Tape& tape, const std::vector<Tensor>& parts);       // vectors -> vector
Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows);    // vectors -> matrix
Tensor row(Tape& tape, const Tensor& m, std::size_t index);
Tensor slice(Tape& tape, const Tensor& v, std::size_t begin, std::size_t length);
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const int> ids);
/// [n,p] ++ [n,q] -> [n,p+q]
Tensor concat_columns(Tape& tape, const Tensor& a, const Tensor& b);
/// [l,d] ++ [r] -> [l,d+r]: appends the same vector to every row.
Tensor append_to_rows(Tape& tape, const Tensor& m, const Tensor& v);

/// Keeps x except at `indices`, which take the given constants (no gradient there).
Tensor override_entries(Tape& tape, const Tensor& x, const std::vector<std::pair<std::size_t, double>>& values);

/// Inverted dropout. Identity when !training or drop_rate == 0.
Tensor dropout(Tape& tape, const Tensor& x, double drop_rate, bool training, Rng& rng);

struct LstmWeights {
  Tensor input;      // [4h, in]  gate order: input, forget, candidate, output
  Tensor recurrent;  // [4h, h]
  Tensor bias;       // [4h]
  std::size_t hidden() const { return bias.size() / 4; }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// One LSTM step as a single fused node.
LstmState lstm_cell(Tape& tape, const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmWeights& weights);

/// One LSTM direction over the rows of `inputs` [len, in], from a zero state.
/// Masked steps emit a zero row and carry the state through unchanged. Equal to
/// chaining lstm_cell, but input projections and weight gradients run as
/// whole-sequence matrix products.
Tensor lstm_sequence(Tape& tape, const Tensor& inputs, Mask mask, const LstmWeights& weights, bool reverse);

}  // namespace msjudge
