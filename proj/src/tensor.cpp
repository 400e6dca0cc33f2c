#include "dfdam/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "dfdam/errors.hpp"

namespace dfdam {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor: rank-0 shapes are not supported");
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  d_ = std::make_shared<detail::TensorData>();
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!d_) throw ContractError("tensor: use of an undefined tensor");
  return d_->shape;
}

std::size_t Tensor::numel() const { return d_ ? d_->values.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size())
    throw ContractError("tensor: axis " + std::to_string(axis) +
                        " out of range for shape " + shape_str(s));
  return s[axis];
}

double* Tensor::data() {
  if (!d_) throw ContractError("tensor: use of an undefined tensor");
  return d_->values.data();
}

const double* Tensor::data() const {
  if (!d_) throw ContractError("tensor: use of an undefined tensor");
  return d_->values.data();
}

std::span<const double> Tensor::values() const {
  if (!d_) throw ContractError("tensor: use of an undefined tensor");
  return {d_->values.data(), d_->values.size()};
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("tensor: item() requires a single element, shape is " +
                        shape_str(shape()));
  return d_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size())
    throw ContractError("tensor: index rank " + std::to_string(index.size()) +
                        " does not match shape " + shape_str(s));
  std::size_t off = 0, d = 0;
  for (std::size_t i : index) {
    if (i >= s[d])
      throw ContractError("tensor: index out of bounds for shape " + shape_str(s));
    off = off * s[d] + i;
    ++d;
  }
  return d_->values[off];
}

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  if (!d_) throw ContractError("tensor: use of an undefined tensor");
  d_->requires_grad = rg;
}

bool Tensor::has_grad() const { return d_ && !d_->grad.empty(); }

std::vector<double>& Tensor::ensure_grad() {
  if (!d_) throw ContractError("tensor: use of an undefined tensor");
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

double* Tensor::grad_data() { return ensure_grad().data(); }

const std::vector<double>& Tensor::grad_ref() const {
  if (!has_grad()) throw ContractError("tensor: gradient buffer not allocated");
  return d_->grad;
}

void Tensor::zero_grad() {
  if (d_ && !d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::grad() const {
  if (!d_) throw ContractError("tensor: use of an undefined tensor");
  if (d_->grad.empty()) return Tensor::zeros(d_->shape);
  return Tensor(d_->shape, d_->grad);
}

Tensor Tensor::clone() const {
  if (!d_) return Tensor();
  return Tensor(d_->shape, d_->values, d_->requires_grad);
}

void Tape::record(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError(
        "backward: loss must be scalar (shape product 1), got shape " +
        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  const_cast<Tensor&>(loss).ensure_grad()[0] += 1.0;
  visited_ = 0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    nodes_[i]();
    ++visited_;
  }
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

namespace {

#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif

}  // namespace

void set_debug_checks(bool on) { g_debug_checks.store(on); }
bool debug_checks_enabled() { return g_debug_checks.load(); }

namespace detail {

void check_finite(const Tensor& t, const char* op) {
  if (!g_debug_checks.load()) return;
  for (double v : t.values()) {
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

}  // namespace detail

namespace {

struct BcPlan {
  Shape dims;                    // output shape
  std::vector<std::size_t> sa;   // element strides into a (0 on broadcast axes)
  std::vector<std::size_t> sb;
  std::size_t total = 0;
};

BcPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  std::vector<std::size_t> da(r, 1), db(r, 1);
  for (std::size_t i = 0; i < a.size(); ++i) da[r - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) db[r - b.size() + i] = b[i];

  BcPlan p;
  p.dims.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (da[d] == db[d]) {
      p.dims[d] = da[d];
    } else if (da[d] == 1) {
      p.dims[d] = db[d];
    } else if (db[d] == 1) {
      p.dims[d] = da[d];
    } else {
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) +
                       " vs " + shape_str(b));
    }
  }
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  std::size_t st = 1;
  for (std::size_t d = r; d-- > 0;) {
    p.sa[d] = (da[d] == 1 && p.dims[d] != 1) ? 0 : st;
    st *= da[d];
  }
  st = 1;
  for (std::size_t d = r; d-- > 0;) {
    p.sb[d] = (db[d] == 1 && p.dims[d] != 1) ? 0 : st;
    st *= db[d];
  }
  p.total = shape_numel(p.dims);
  return p;
}

// Row-major walk of the output index space, tracking element offsets into
// both operands via an odometer. body(out_i, a_i, b_i).
template <class F>
void bc_apply(const BcPlan& p, F&& body) {
  const std::size_t r = p.dims.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ai = 0, bi = 0;
  for (std::size_t oi = 0; oi < p.total; ++oi) {
    body(oi, ai, bi);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ai += p.sa[d];
      bi += p.sb[d];
      if (idx[d] < p.dims[d]) break;
      ai -= p.sa[d] * p.dims[d];
      bi -= p.sb[d] * p.dims[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  return plan_broadcast(a, b).dims;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  BcPlan p = plan_broadcast(a.shape(), b.shape());
  Tensor out = Tensor::zeros(p.dims);
  {
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    bc_apply(p, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
      ov[oi] = av[ai] + bv[bi];
    });
  }
  const bool rg = tape.recording() && (a.requires_grad() || b.requires_grad());
  out.set_requires_grad(rg);
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), od = out.impl();
    tape.record([ad, bd, od, p]() {
      if (od->grad.empty()) return;
      const double* g = od->grad.data();
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
        double* ga = ad->grad.data();
        bc_apply(p, [&](std::size_t oi, std::size_t ai, std::size_t) {
          ga[ai] += g[oi];
        });
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
        double* gb = bd->grad.data();
        bc_apply(p, [&](std::size_t oi, std::size_t, std::size_t bi) {
          gb[bi] += g[oi];
        });
      }
    });
  }
  detail::check_finite(out, "add");
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  BcPlan p = plan_broadcast(a.shape(), b.shape());
  Tensor out = Tensor::zeros(p.dims);
  {
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    bc_apply(p, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
      ov[oi] = av[ai] * bv[bi];
    });
  }
  const bool rg = tape.recording() && (a.requires_grad() || b.requires_grad());
  out.set_requires_grad(rg);
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), od = out.impl();
    tape.record([ad, bd, od, p]() {
      if (od->grad.empty()) return;
      const double* g = od->grad.data();
      const double* av = ad->values.data();
      const double* bv = bd->values.data();
      const bool na = ad->requires_grad, nb = bd->requires_grad;
      if (na && ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
      if (nb && bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
      double* ga = na ? ad->grad.data() : nullptr;
      double* gb = nb ? bd->grad.data() : nullptr;
      bc_apply(p, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
        const double gv = g[oi];
        if (na) ga[ai] += gv * bv[bi];
        if (nb) gb[bi] += gv * av[ai];
      });
    });
  }
  detail::check_finite(out, "mul");
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* xv = x.data();
    double* ov = out.data();
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = xv[i];
      if (v >= 0.0) {
        ov[i] = 1.0 / (1.0 + std::exp(-v));
      } else {
        const double e = std::exp(v);
        ov[i] = e / (1.0 + e);
      }
    }
  }
  const bool rg = tape.recording() && x.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), od = out.impl();
    tape.record([xd, od]() {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      const double* g = od->grad.data();
      const double* y = od->values.data();
      double* gx = xd->grad.data();
      for (std::size_t i = 0; i < od->values.size(); ++i)
        gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  detail::check_finite(out, "sigmoid");
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  {
    const double* xv = x.data();
    double* ov = out.data();
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  }
  const bool rg = tape.recording() && x.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), od = out.impl();
    tape.record([xd, od]() {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      const double* g = od->grad.data();
      const double* xv = xd->values.data();
      double* gx = xd->grad.data();
      for (std::size_t i = 0; i < od->values.size(); ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
    });
  }
  detail::check_finite(out, "relu");
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  const bool rg = tape.recording() && x.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), od = out.impl();
    tape.record([xd, od]() {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      const double g = od->grad[0];
      for (double& gv : xd->grad) gv += g;
    });
  }
  detail::check_finite(out, "sum");
  return out;
}

}  // namespace dfdam
