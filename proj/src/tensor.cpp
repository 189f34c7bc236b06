#include "epiforecast/tensor.h"

#include <algorithm>
#include <sstream>

#include "epiforecast/errors.h"

namespace epi {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

DiffArray::DiffArray(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty() || shape.size() > 3) {
    throw DimensionError("DiffArray: rank must be 1-3, got shape " + shape_string(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("DiffArray: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_string(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

DiffArray DiffArray::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

DiffArray DiffArray::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return DiffArray(std::move(shape), std::vector<double>(n, value), requires_grad);
}

DiffArray DiffArray::scalar(double value, bool requires_grad) {
  return DiffArray({1}, {value}, requires_grad);
}

DiffArray DiffArray::from_matrix(const Matrix& m, bool requires_grad) {
  return DiffArray({m.rows, m.cols}, m.data, requires_grad);
}

detail::Node& DiffArray::node() const {
  if (!node_) throw AutogradError("DiffArray: use of an undefined array");
  return *node_;
}

const Shape& DiffArray::shape() const { return node().shape; }

std::size_t DiffArray::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t DiffArray::size() const { return node().values.size(); }

std::span<const double> DiffArray::values() const { return node().values; }
std::span<double> DiffArray::mutable_values() { return node().values; }

double DiffArray::item() const {
  if (size() != 1) throw DimensionError("item() on array of shape " + shape_string(shape()));
  return node().values[0];
}

double DiffArray::at(std::size_t i) const { return node().values.at(i); }

double DiffArray::at(std::size_t i, std::size_t j) const {
  const Shape& s = shape();
  return node().values.at(i * s.at(1) + j);
}

double DiffArray::at(std::size_t i, std::size_t j, std::size_t k) const {
  const Shape& s = shape();
  return node().values.at((i * s.at(1) + j) * s.at(2) + k);
}

bool DiffArray::requires_grad() const { return node().requires_grad; }
void DiffArray::set_requires_grad(bool on) { node().requires_grad = on; }

bool DiffArray::has_grad() const { return node().has_grad; }

std::span<const double> DiffArray::grad() const {
  if (!node().has_grad) throw AutogradError("grad() on array without gradient, shape " + shape_string(shape()));
  return node().grad;
}

std::span<double> DiffArray::mutable_grad() {
  if (!node().has_grad) throw AutogradError("grad() on array without gradient, shape " + shape_string(shape()));
  return node().grad;
}

void DiffArray::zero_grad() {
  detail::Node& n = node();
  n.grad.assign(n.values.size(), 0.0);
  n.has_grad = true;
}

void DiffArray::clear_grad() {
  detail::Node& n = node();
  n.grad.clear();
  n.grad.shrink_to_fit();
  n.has_grad = false;
}

DiffArray DiffArray::detach() const {
  return DiffArray(node().shape, node().values, false);
}

Matrix DiffArray::to_matrix() const {
  const Shape& s = shape();
  if (s.size() != 2) throw DimensionError("to_matrix() needs a 2-axis array, got " + shape_string(s));
  Matrix m;
  m.rows = s[0];
  m.cols = s[1];
  m.data = node().values;
  return m;
}

std::span<double> grad_sink(const DiffArray& input) {
  detail::Node& n = input.node();
  if (!n.has_grad) {
    n.grad.assign(n.values.size(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

bool Tape::tracks(std::initializer_list<const DiffArray*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const DiffArray* a) { return a->requires_grad(); });
}

bool Tape::tracks(std::span<const DiffArray> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const DiffArray& a) { return a.requires_grad(); });
}

DiffArray Tape::record(Shape shape, std::vector<double> values, bool tracked, Backward fn) {
  DiffArray out(std::move(shape), std::move(values), tracked);
  if (tracked) {
    out.node_->tape = this;
    out.node_->tape_index = entries_.size();
    entries_.push_back({out.node_, std::move(fn)});
  }
  return out;
}

void Tape::backward(const DiffArray& root) {
  if (consumed_) throw AutogradError("backward() called twice on the same tape without reset()");
  if (!root.defined()) throw AutogradError("backward() on an undefined array");
  if (root.size() != 1) {
    throw AutogradError("backward() needs a scalar root, got shape " + shape_string(root.shape()));
  }
  const detail::Node& rn = *root.node_;
  if (rn.tape != this || rn.tape_index >= entries_.size() || entries_[rn.tape_index].output != root.node_) {
    throw AutogradError("backward() on an array that was not produced on this tape");
  }
  consumed_ = true;
  grad_sink(root)[0] += 1.0;
  for (std::size_t i = rn.tape_index + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (!e.output->has_grad) continue;
    e.fn(e.output->values, e.output->grad);
  }
}

void Tape::reset() {
  for (Entry& e : entries_) e.output->tape = nullptr;
  entries_.clear();
  consumed_ = false;
}

}  // namespace epi
