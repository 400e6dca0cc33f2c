#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dfdam {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Shape both operands broadcast to; size-1 axes stretch, ranks are
// right-aligned. Throws ShapeError naming both shapes on a mismatch.
Shape broadcast_shape(const Shape& a, const Shape& b);

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major f64 tensor. Value-type handle over shared storage: copies
// alias the same buffer; clone() makes an independent copy. Values are
// immutable by convention once an op has consumed the tensor; grad buffers
// are the only state mutated afterwards.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  double* data();
  const double* data() const;
  std::span<const double> values() const;
  double item() const;  // requires numel() == 1
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);

  bool has_grad() const;
  std::vector<double>& ensure_grad();  // allocates zero-filled on first use
  double* grad_data();                 // ensure_grad() then raw pointer
  const std::vector<double>& grad_ref() const;  // requires has_grad()
  void zero_grad();
  Tensor grad() const;  // copy of the gradient (zeros when absent)

  Tensor clone() const;

  std::shared_ptr<detail::TensorData> impl() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

// Recorded reverse-mode tape. Nodes are appended in execution order, which
// makes the list topologically sorted by construction; backward() replays it
// once in reverse. One tape per thread; tensors may be shared across tapes
// only through their values.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void record(std::function<void()> backward_fn);
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every node exactly once, newest
  // first. Loss must be scalar (shape product 1).
  void backward(const Tensor& loss);

  std::size_t visited() const { return visited_; }

 private:
  bool recording_ = true;
  std::vector<std::function<void()>> nodes_;
  std::size_t visited_ = 0;
};

void backward(const Tensor& loss, Tape& tape);

// NaN/Inf sentinel. Defaults to on in debug builds, off under NDEBUG.
void set_debug_checks(bool on);
bool debug_checks_enabled();

namespace detail {
void check_finite(const Tensor& t, const char* op);
}

// Elementwise ops with size-1-axis broadcasting.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sum(Tape& tape, const Tensor& x);  // scalar of shape {1}

}  // namespace dfdam
