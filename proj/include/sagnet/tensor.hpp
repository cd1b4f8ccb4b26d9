#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sagnet {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// Dense row-major tensor with an optional gradient buffer of identical shape.
// Data is finite after every public operation; ops check and throw otherwise.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass (or zero_grad) allocates it
  bool requires_grad = false;

  static TensorPtr<T> create(std::vector<int> shp, bool req_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shp);
    t->data.assign(static_cast<std::size_t>(numel_of(t->shape)), T(0));
    t->requires_grad = req_grad;
    return t;
  }

  static TensorPtr<T> from_data(std::vector<int> shp, std::vector<T> values, bool req_grad = false) {
    if (numel_of(shp) != static_cast<std::int64_t>(values.size())) {
      std::ostringstream os;
      os << "tensor: data length " << values.size() << " does not match shape product " << numel_of(shp);
      throw ShapeError(os.str());
    }
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shp);
    t->data = std::move(values);
    t->requires_grad = req_grad;
    return t;
  }

  static TensorPtr<T> scalar(T value) { return from_data({1}, {value}); }

  static TensorPtr<T> full(std::vector<int> shp, T value, bool req_grad = false) {
    auto t = create(std::move(shp), req_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  int ndim() const { return static_cast<int>(shape.size()); }

  bool is_scalar() const { return size() == 1 && ndim() <= 1; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor is not a scalar");
    return data[0];
  }

  bool has_grad() const { return !grad.empty(); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }

  void zero_grad() {
    if (requires_grad) {
      grad.assign(data.size(), T(0));
    } else {
      grad.clear();
    }
  }

  // Detached view: shares no graph history, never taped. Copies data.
  TensorPtr<T> detach() const {
    auto t = std::make_shared<Tensor<T>>();
    t->shape = shape;
    t->data = data;
    t->requires_grad = false;
    return t;
  }

  static std::int64_t numel_of(const std::vector<int>& shp) {
    std::int64_t n = 1;
    for (int d : shp) {
      if (d < 0) throw ShapeError("tensor: negative dimension");
      n *= d;
    }
    return n;
  }
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  for (const T& v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

template <typename T>
inline std::string shape_str(const Tensor<T>& t) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) os << (i ? "," : "") << t.shape[i];
  os << "]";
  return os.str();
}

// Ordered record of differentiable operations. Executing order is a valid
// topological order of the graph, so walking nodes in reverse replays the
// graph in exact reverse topological order.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::initializer_list<Tensor<T>*> outputs, BackwardFn fn) {
    for (Tensor<T>* out : outputs) outputs_.insert(out);
    nodes_.push_back(std::move(fn));
  }

  bool owns(const Tensor<T>& t) const {
    return outputs_.count(const_cast<Tensor<T>*>(&t)) > 0;
  }

  // Accumulates (+=) gradients into every requires_grad leaf reachable from
  // the loss; calling twice without zero_grad doubles them. Gradients of
  // tape-produced intermediates are scratch state and reset on every call,
  // so several losses recorded on one tape can be differentiated in turn.
  void backward(const TensorPtr<T>& loss) {
    if (!loss->is_scalar()) {
      throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(*loss));
    }
    if (!owns(*loss)) {
      throw std::invalid_argument("backward: loss tensor is not an output recorded on this tape");
    }
    for (Tensor<T>* out : outputs_) out->grad.clear();
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    outputs_.clear();
  }

 private:
  std::vector<BackwardFn> nodes_;
  std::unordered_set<Tensor<T>*> outputs_;
};

}  // namespace sagnet
