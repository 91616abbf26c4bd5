#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qat {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major tensor handle. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    s_->data.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(data);
    s_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{1}, v, requires_grad); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t ndim() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }

  // Handle semantics: constness of the handle does not propagate to storage,
  // so backward closures holding copies can write gradients.
  std::span<T> data() const { return s_->data; }
  T& operator[](std::size_t i) const { return s_->data[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  bool has_grad() const { return !s_->grad.empty(); }
  // Allocates a zero gradient buffer on first access.
  std::span<T> grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T{0});
    return s_->grad;
  }
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), T{0}); }
  void drop_grad() { s_->grad.clear(); s_->grad.shrink_to_fit(); }

  Tensor clone() const {
    Tensor out(s_->shape, s_->data, false);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(s_->data.begin(), s_->data.end());
    return Tensor<U>(s_->shape, std::move(v));
  }

  // Identity of the shared storage; equal for handles that alias.
  const void* id() const { return s_.get(); }
  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

 private:
  std::shared_ptr<Storage> s_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data();
  auto db = b.data();
  return std::equal(da.begin(), da.end(), db.begin(), [](T x, T y) {
    return std::memcmp(&x, &y, sizeof(T)) == 0;
  });
}

}  // namespace qat
