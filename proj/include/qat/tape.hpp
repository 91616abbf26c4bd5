#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qat/tensor.hpp"

namespace qat {

// Reverse-mode record of one forward pass. Nodes are appended in construction
// order, so replaying them backwards is a valid topological order.
template <typename T>
class Tape {
 public:
  struct Node {
    std::string op;
    const void* output = nullptr;
    std::function<void()> backward;
  };

  Tape() = default;
  explicit Tape(bool recording) : recording_(recording) {}

  // A tape that never records; used for evaluation.
  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  bool should_record(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording_) return false;
    for (const auto* t : inputs) {
      if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  void record(std::string op, const Tensor<T>& output, std::function<void()> backward) {
    outputs_.insert(output.id());
    nodes_.push_back(Node{std::move(op), output.id(), std::move(backward)});
  }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure once, newest first.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (!outputs_.contains(loss.id())) {
      throw std::logic_error("backward: loss was not produced on this tape");
    }
    loss.grad()[0] += T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    ++backward_passes_;
  }

  std::size_t backward_passes() const { return backward_passes_; }

  void clear() {
    nodes_.clear();
    outputs_.clear();
    backward_passes_ = 0;
  }

 private:
  bool recording_ = true;
  std::vector<Node> nodes_;
  std::unordered_set<const void*> outputs_;
  std::size_t backward_passes_ = 0;
};

}  // namespace qat
