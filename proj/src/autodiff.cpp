#include "sentimtl/autodiff.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sentimtl/error.hpp"

namespace sentimtl::ad {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw RangeError(fmt::format("{}: non-finite entry", what));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()),
                                 shape_string(b.shape())));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError(fmt::format("zero-sized dimension in {}", shape_string(shape)));
  }
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  if (element_count(shape) != values.size())
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_string(shape),
                                 element_count(shape), values.size()));
  require_finite(values, "Tensor::from");
  auto storage = std::make_shared<TensorStorage>();
  storage->shape = std::move(shape);
  storage->value = std::move(values);
  Tensor t(std::move(storage));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError(fmt::format("item() on tensor of shape {}", shape_string(shape())));
  return storage_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  storage_->requires_grad = on;
  if (on) {
    storage_->grad.assign(storage_->value.size(), 0.0);
  } else {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }
}

void Tensor::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto storage = std::make_shared<TensorStorage>(*storage_);
  return Tensor(std::move(storage));
}

// ---------------------------------------------------------------------------
// Tape plumbing

Tensor Tape::make_output(Shape shape, std::vector<double> value,
                         std::initializer_list<const Tensor*> inputs) {
  if (checked_) require_finite(value, "checked tape");
  auto storage = std::make_shared<TensorStorage>();
  storage->shape = std::move(shape);
  storage->value = std::move(value);
  storage->requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  if (storage->requires_grad) storage->grad.assign(storage->value.size(), 0.0);
  return Tensor(std::move(storage));
}

void Tape::record(const Tensor& output, std::vector<std::shared_ptr<TensorStorage>> inputs,
                  std::function<void()> backward) {
  if (!output.requires_grad()) return;
  nodes_.push_back(Node{std::move(inputs), output.shared_storage(), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.size() != 1)
    throw ShapeError(
        fmt::format("backward needs a scalar loss, got shape {}", shape_string(loss.shape())));
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output.get() == loss.storage(); });
  if (it == nodes_.rend()) throw Error("backward: loss was not produced on this tape");
  const auto last = static_cast<std::size_t>(std::distance(it, nodes_.rend())) - 1;

  for (std::size_t i = 0; i <= last; ++i) {
    std::fill(nodes_[i].output->grad.begin(), nodes_[i].output->grad.end(), 0.0);
  }
  nodes_[last].output->grad[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) nodes_[i].backward();
}

// ---------------------------------------------------------------------------
// Operations

Tensor Tape::embed(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2)
    throw ShapeError(fmt::format("embed: table must be rank 2, got {}", shape_string(table.shape())));
  if (ids.empty()) throw ShapeError("embed: empty id list");
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows)
      throw ShapeError(fmt::format("embed: id {} out of range for table {}", ids[r],
                                   shape_string(table.shape())));
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Tensor y = make_output({ids.size(), d}, std::move(out), {&table});
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  auto* T = table.storage();
  auto* Y = y.storage();
  record(y, {table.shared_storage()}, [T, Y, idx = std::move(idx), d] {
    if (!T->requires_grad) return;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) T->grad[idx[r] * d + j] += Y->grad[r * d + j];
    }
  });
  return y;
}

Tensor Tape::embed_row(const Tensor& table, std::size_t id) {
  if (table.rank() != 2)
    throw ShapeError(
        fmt::format("embed_row: table must be rank 2, got {}", shape_string(table.shape())));
  if (id >= table.dim(0))
    throw ShapeError(
        fmt::format("embed_row: id {} out of range for table {}", id, shape_string(table.shape())));
  const std::size_t d = table.dim(1);
  std::vector<double> out(table.data().begin() + static_cast<std::ptrdiff_t>(id * d),
                          table.data().begin() + static_cast<std::ptrdiff_t>((id + 1) * d));
  Tensor y = make_output({d}, std::move(out), {&table});
  auto* T = table.storage();
  auto* Y = y.storage();
  record(y, {table.shared_storage()}, [T, Y, id, d] {
    if (!T->requires_grad) return;
    for (std::size_t j = 0; j < d; ++j) T->grad[id * d + j] += Y->grad[j];
  });
  return y;
}

Tensor Tape::affine(const Tensor& W, const Tensor& b, const Tensor& x) {
  if (W.rank() != 2) throw ShapeError(fmt::format("affine: W must be rank 2, got {}", shape_string(W.shape())));
  const std::size_t out_dim = W.dim(0);
  const std::size_t in_dim = W.dim(1);
  if (b.rank() != 1 || b.dim(0) != out_dim)
    throw ShapeError(fmt::format("affine: bias {} incompatible with W {}", shape_string(b.shape()),
                                 shape_string(W.shape())));
  std::size_t rows = 0;
  Shape out_shape;
  if (x.rank() == 1 && x.dim(0) == in_dim) {
    rows = 1;
    out_shape = {out_dim};
  } else if (x.rank() == 2 && x.dim(1) == in_dim) {
    rows = x.dim(0);
    out_shape = {rows, out_dim};
  } else {
    throw ShapeError(fmt::format("affine: input {} incompatible with W {}", shape_string(x.shape()),
                                 shape_string(W.shape())));
  }

  const auto w = W.data();
  const auto bias = b.data();
  const auto xv = x.data();
  std::vector<double> out(rows * out_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wo = w.data() + o * in_dim;
      double acc = 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) acc += wo[i] * xr[i];
      out[r * out_dim + o] = acc + bias[o];
    }
  }
  Tensor y = make_output(std::move(out_shape), std::move(out), {&W, &b, &x});
  auto* Ws = W.storage();
  auto* Bs = b.storage();
  auto* Xs = x.storage();
  auto* Y = y.storage();
  record(y, {W.shared_storage(), b.shared_storage(), x.shared_storage()},
         [Ws, Bs, Xs, Y, rows, out_dim, in_dim] {
           for (std::size_t r = 0; r < rows; ++r) {
             const double* gy = Y->grad.data() + r * out_dim;
             const double* xr = Xs->value.data() + r * in_dim;
             for (std::size_t o = 0; o < out_dim; ++o) {
               const double g = gy[o];
               if (g == 0.0) continue;
               if (Bs->requires_grad) Bs->grad[o] += g;
               if (Ws->requires_grad) {
                 double* gw = Ws->grad.data() + o * in_dim;
                 for (std::size_t i = 0; i < in_dim; ++i) gw[i] += g * xr[i];
               }
               if (Xs->requires_grad) {
                 const double* wo = Ws->value.data() + o * in_dim;
                 double* gx = Xs->grad.data() + r * in_dim;
                 for (std::size_t i = 0; i < in_dim; ++i) gx[i] += g * wo[i];
               }
             }
           }
         });
  return y;
}

Tensor Tape::mean_pool(const Tensor& x, std::size_t axis) {
  if (x.rank() == 1) {
    if (axis != 0) throw ShapeError(fmt::format("mean_pool: axis {} invalid for rank 1", axis));
    const double n = static_cast<double>(x.size());
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor y = make_output({1}, {acc / n}, {&x});
    auto* X = x.storage();
    auto* Y = y.storage();
    record(y, {x.shared_storage()}, [X, Y, n] {
      if (!X->requires_grad) return;
      for (double& g : X->grad) g += Y->grad[0] / n;
    });
    return y;
  }
  if (x.rank() != 2 || axis > 1)
    throw ShapeError(fmt::format("mean_pool: unsupported shape {} / axis {}",
                                 shape_string(x.shape()), axis));
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const auto xv = x.data();
  const std::size_t out_n = axis == 0 ? cols : rows;
  const double count = static_cast<double>(axis == 0 ? rows : cols);
  std::vector<double> out(out_n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += xv[r * cols + c];
  }
  for (double& v : out) v /= count;
  Tensor y = make_output({out_n}, std::move(out), {&x});
  auto* X = x.storage();
  auto* Y = y.storage();
  record(y, {x.shared_storage()}, [X, Y, rows, cols, axis, count] {
    if (!X->requires_grad) return;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c)
        X->grad[r * cols + c] += Y->grad[axis == 0 ? c : r] / count;
    }
  });
  return y;
}

Tensor Tape::concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::shared_ptr<TensorStorage>> inputs;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != 1)
      throw ShapeError(fmt::format("concat: expects rank-1 inputs, got {}", shape_string(p.shape())));
    out.insert(out.end(), p.data().begin(), p.data().end());
    inputs.push_back(p.shared_storage());
    any_grad = any_grad || p.requires_grad();
  }
  const std::size_t n = out.size();
  Tensor y = make_output({n}, std::move(out), {});
  if (any_grad) {
    y.storage()->requires_grad = true;
    y.storage()->grad.assign(n, 0.0);
  }
  auto* Y = y.storage();
  std::vector<TensorStorage*> raw;
  raw.reserve(inputs.size());
  for (auto& s : inputs) raw.push_back(s.get());
  record(y, std::move(inputs), [Y, raw = std::move(raw)] {
    std::size_t offset = 0;
    for (auto* P : raw) {
      const std::size_t m = P->value.size();
      if (P->requires_grad) {
        for (std::size_t i = 0; i < m; ++i) P->grad[i] += Y->grad[offset + i];
      }
      offset += m;
    }
  });
  return y;
}

Tensor Tape::concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor Tape::scale(const Tensor& x, double c) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= c;
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  auto* X = x.storage();
  auto* Y = y.storage();
  record(y, {x.shared_storage()}, [X, Y, c] {
    if (!X->requires_grad) return;
    for (std::size_t i = 0; i < X->grad.size(); ++i) X->grad[i] += c * Y->grad[i];
  });
  return y;
}

Tensor Tape::softmax_xent(const Tensor& logits, std::size_t gold) {
  if (logits.rank() != 1)
    throw ShapeError(
        fmt::format("softmax_xent: logits must be rank 1, got {}", shape_string(logits.shape())));
  const std::size_t k = logits.size();
  if (gold >= k)
    throw ShapeError(fmt::format("softmax_xent: gold index {} out of range for {} classes", gold, k));
  const auto z = logits.data();
  const double m = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double v : z) denom += std::exp(v - m);
  const double log_z = m + std::log(denom);
  Tensor y = make_output({1}, {log_z - z[gold]}, {&logits});
  auto* L = logits.storage();
  auto* Y = y.storage();
  record(y, {logits.shared_storage()}, [L, Y, gold, log_z, k] {
    if (!L->requires_grad) return;
    const double g = Y->grad[0];
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::exp(L->value[i] - log_z);
      L->grad[i] += g * (p - (i == gold ? 1.0 : 0.0));
    }
  });
  return y;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  auto* A = a.storage();
  auto* B = b.storage();
  auto* Y = y.storage();
  record(y, {a.shared_storage(), b.shared_storage()}, [A, B, Y] {
    for (std::size_t i = 0; i < Y->grad.size(); ++i) {
      if (A->requires_grad) A->grad[i] += Y->grad[i];
      if (B->requires_grad) B->grad[i] += Y->grad[i];
    }
  });
  return y;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  auto* A = a.storage();
  auto* B = b.storage();
  auto* Y = y.storage();
  record(y, {a.shared_storage(), b.shared_storage()}, [A, B, Y] {
    for (std::size_t i = 0; i < Y->grad.size(); ++i) {
      if (A->requires_grad) A->grad[i] += Y->grad[i];
      if (B->requires_grad) B->grad[i] -= Y->grad[i];
    }
  });
  return y;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  auto* A = a.storage();
  auto* B = b.storage();
  auto* Y = y.storage();
  record(y, {a.shared_storage(), b.shared_storage()}, [A, B, Y] {
    for (std::size_t i = 0; i < Y->grad.size(); ++i) {
      if (A->requires_grad) A->grad[i] += Y->grad[i] * B->value[i];
      if (B->requires_grad) B->grad[i] += Y->grad[i] * A->value[i];
    }
  });
  return y;
}

Tensor Tape::add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v += c;
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  auto* X = x.storage();
  auto* Y = y.storage();
  record(y, {x.shared_storage()}, [X, Y] {
    if (!X->requires_grad) return;
    for (std::size_t i = 0; i < X->grad.size(); ++i) X->grad[i] += Y->grad[i];
  });
  return y;
}

Tensor Tape::log(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  auto* X = x.storage();
  auto* Y = y.storage();
  record(y, {x.shared_storage()}, [X, Y] {
    if (!X->requires_grad) return;
    for (std::size_t i = 0; i < X->grad.size(); ++i) X->grad[i] += Y->grad[i] / X->value[i];
  });
  return y;
}

Tensor Tape::exp(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  auto* X = x.storage();
  auto* Y = y.storage();
  record(y, {x.shared_storage()}, [X, Y] {
    if (!X->requires_grad) return;
    for (std::size_t i = 0; i < X->grad.size(); ++i) X->grad[i] += Y->grad[i] * Y->value[i];
  });
  return y;
}

Tensor Tape::sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = make_output({1}, {acc}, {&x});
  auto* X = x.storage();
  auto* Y = y.storage();
  record(y, {x.shared_storage()}, [X, Y] {
    if (!X->requires_grad) return;
    for (double& g : X->grad) g += Y->grad[0];
  });
  return y;
}

Tensor Tape::add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("add_n: no inputs");
  std::vector<double> out(xs.front().data().begin(), xs.front().data().end());
  std::vector<std::shared_ptr<TensorStorage>> inputs{xs.front().shared_storage()};
  bool any_grad = xs.front().requires_grad();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(xs.front(), xs[k], "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xs[k].data()[i];
    inputs.push_back(xs[k].shared_storage());
    any_grad = any_grad || xs[k].requires_grad();
  }
  const std::size_t n = out.size();
  Tensor y = make_output(xs.front().shape(), std::move(out), {});
  if (any_grad) {
    y.storage()->requires_grad = true;
    y.storage()->grad.assign(n, 0.0);
  }
  auto* Y = y.storage();
  std::vector<TensorStorage*> raw;
  raw.reserve(inputs.size());
  for (auto& s : inputs) raw.push_back(s.get());
  record(y, std::move(inputs), [Y, raw = std::move(raw)] {
    for (auto* P : raw) {
      if (!P->requires_grad) continue;
      for (std::size_t i = 0; i < P->grad.size(); ++i) P->grad[i] += Y->grad[i];
    }
  });
  return y;
}

Tensor Tape::select(const Tensor& x, std::size_t i) {
  if (x.rank() != 1 || i >= x.size())
    throw ShapeError(fmt::format("select: index {} invalid for {}", i, shape_string(x.shape())));
  Tensor y = make_output({1}, {x.data()[i]}, {&x});
  auto* X = x.storage();
  auto* Y = y.storage();
  record(y, {x.shared_storage()}, [X, Y, i] {
    if (X->requires_grad) X->grad[i] += Y->grad[0];
  });
  return y;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport gradient_check(const ScalarFunction& f, Tensor point,
                               const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw RangeError("gradient_check: eps must be positive");
  const bool had_grad = point.requires_grad();
  point.set_requires_grad(true);

  GradCheckReport report;
  {
    Tape tape;
    Tensor loss = f(tape, point);
    if (loss.requires_grad()) tape.backward(loss);
    report.analytic.assign(point.grad().begin(), point.grad().end());
  }

  auto evaluate = [&] {
    Tape tape;
    return f(tape, point).item();
  };
  auto values = point.mutable_data();
  report.numeric.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + options.eps;
    const double plus = evaluate();
    values[i] = saved - options.eps;
    const double minus = evaluate();
    values[i] = saved;
    report.numeric[i] = (plus - minus) / (2.0 * options.eps);

    const double a = report.analytic[i];
    const double n = report.numeric[i];
    const double abs_err = std::abs(a - n);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(n), options.floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error || !std::isfinite(rel_err)) {
      report.max_rel_error = rel_err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < options.tol;
  point.set_requires_grad(had_grad);
  return report;
}

}  // namespace sentimtl::ad
