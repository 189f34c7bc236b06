#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "epiforecast/matrix.h"

namespace epi {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Train mode uses batch statistics and active dropout; eval mode is a pure
// function of parameters and input.
enum class Mode { train, eval };

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;
  const void* tape = nullptr;
  std::size_t tape_index = 0;
};
}  // namespace detail

class Tape;

// Dense 64-bit array of 1-3 axes with an optional gradient buffer.
//
// DiffArray is a handle: copies share values and gradient. Use detach() for
// an independent copy. Arrays produced by ops on a recording Tape remember
// their position on it so the tape can run the backward pass.
class DiffArray {
 public:
  DiffArray() = default;
  DiffArray(Shape shape, std::vector<double> values, bool requires_grad = false);

  static DiffArray zeros(Shape shape, bool requires_grad = false);
  static DiffArray full(Shape shape, double value, bool requires_grad = false);
  static DiffArray scalar(double value, bool requires_grad = false);
  static DiffArray from_matrix(const Matrix& m, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  // Allocates (or resets) a zero-filled gradient buffer.
  void zero_grad();
  void clear_grad();

  DiffArray detach() const;
  Matrix to_matrix() const;

  // True when both handles refer to the same storage.
  bool same_storage(const DiffArray& other) const { return node_ == other.node_; }

 private:
  friend class Tape;
  friend std::span<double> grad_sink(const DiffArray&);
  explicit DiffArray(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;
};

// Gradient buffer of an op input, allocated zero-filled on first use. Only
// meaningful inside backward closures.
std::span<double> grad_sink(const DiffArray& input);

// Ordered record of executed operations. Backward replays the record in
// reverse, visiting each op once and accumulating into its inputs.
class Tape {
 public:
  // Receives the op's output values and the gradient flowing into them.
  using Backward = std::function<void(std::span<const double> out, std::span<const double> out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  // Populates gradients of every reachable array that requires them.
  void backward(const DiffArray& root);
  // Forget all recorded ops so the tape can be reused.
  void reset();

  // Whether an op over these inputs must be recorded.
  bool tracks(std::initializer_list<const DiffArray*> inputs) const;
  bool tracks(std::span<const DiffArray> inputs) const;

  // Creates the op output; registers `fn` when `tracked` is set.
  DiffArray record(Shape shape, std::vector<double> values, bool tracked, Backward fn);

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    Backward fn;
  };
  std::vector<Entry> entries_;
  bool recording_;
  bool consumed_ = false;
};

}  // namespace epi
