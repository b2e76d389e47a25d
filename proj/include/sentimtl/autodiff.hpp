#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sentimtl::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

/// Dense row-major tensor of doubles with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage, the way autograd leaves are
/// shared between a model and the tapes that read them. Use clone() for an
/// independent copy.
class Tensor {
public:
  Tensor() = default;

  /// Rejects non-finite entries and size/shape mismatches.
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t size() const { return storage_->value.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }

  std::span<const double> data() const { return storage_->value; }
  std::span<double> mutable_data() { return storage_->value; }
  double at(std::size_t i) const { return storage_->value.at(i); }
  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  /// Allocating or releasing the gradient buffer accordingly.
  void set_requires_grad(bool on);
  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const double> grad() const { return storage_->grad; }
  std::span<double> mutable_grad() { return storage_->grad; }
  void zero_grad();

  Tensor clone() const;

  TensorStorage* storage() const { return storage_.get(); }
  const std::shared_ptr<TensorStorage>& shared_storage() const { return storage_; }

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

private:
  explicit Tensor(std::shared_ptr<TensorStorage> s) : storage_(std::move(s)) {}
  friend class Tape;

  std::shared_ptr<TensorStorage> storage_;
};

/// Define-by-run recording of differentiable operations.
///
/// Every operation whose inputs include a requires_grad tensor is appended
/// to the tape, so recorded order is a topological order. Operations on
/// constant inputs compute values without recording. A tape is confined to
/// one thread.
class Tape {
public:
  explicit Tape(bool checked = false) : checked_(checked) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Rows of `table` ([V, d]) selected by `ids` -> [n, d].
  Tensor embed(const Tensor& table, std::span<const std::size_t> ids);
  /// One row of `table` -> [d].
  Tensor embed_row(const Tensor& table, std::size_t id);
  /// W [out, in], b [out]; x [in] -> [out] or x [n, in] -> [n, out].
  /// Adding b to every row is the only broadcasting the engine performs.
  Tensor affine(const Tensor& W, const Tensor& b, const Tensor& x);
  /// Mean over `axis`. Rank-2 input drops that axis; rank-1 input gives [1].
  Tensor mean_pool(const Tensor& x, std::size_t axis);
  /// Concatenation of rank-1 tensors.
  Tensor concat(std::span<const Tensor> parts);
  Tensor concat(std::initializer_list<Tensor> parts);
  /// c * x for a constant c.
  Tensor scale(const Tensor& x, double c);
  /// -log softmax(logits)[gold] for rank-1 logits -> [1].
  Tensor softmax_xent(const Tensor& logits, std::size_t gold);

  // Elementwise ops over equal shapes (scalars are shape [1]).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor add_scalar(const Tensor& x, double c);
  Tensor log(const Tensor& x);
  Tensor exp(const Tensor& x);
  /// Sum of all entries -> [1].
  Tensor sum(const Tensor& x);
  /// Elementwise sum of equally shaped tensors, accumulated left to right.
  Tensor add_n(std::span<const Tensor> xs);
  /// Entry i of a rank-1 tensor -> [1].
  Tensor select(const Tensor& x, std::size_t i);

  /// Accumulates d loss / d leaf into every requires_grad leaf reachable
  /// from `loss`. Calling twice without zeroing leaf grads doubles them.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

private:
  struct Node {
    std::vector<std::shared_ptr<TensorStorage>> inputs;
    std::shared_ptr<TensorStorage> output;
    std::function<void()> backward;
  };

  Tensor make_output(Shape shape, std::vector<double> value,
                     std::initializer_list<const Tensor*> inputs);
  void record(const Tensor& output, std::vector<std::shared_ptr<TensorStorage>> inputs,
              std::function<void()> backward);

  bool checked_ = false;
  std::vector<Node> nodes_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  bool passed = true;
};

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

using ScalarFunction = std::function<Tensor(Tape&, const Tensor&)>;

/// Central finite differences against reverse-mode gradients of `f` with
/// respect to `point`. `point` is perturbed in place and restored; `f` may
/// close over it or use the argument. Leaf grads of `point` are reset.
GradCheckReport gradient_check(const ScalarFunction& f, Tensor point,
                               const GradCheckOptions& options = {});

}  // namespace sentimtl::ad
