#include "grokforget/tensor.hpp"

#include <cmath>
#include <sstream>

#include "grokforget/errors.hpp"

namespace gf {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
  std::vector<float> data;
  std::int64_t cols = -1;
  for (const auto& r : rows) {
    if (cols >= 0 && static_cast<std::int64_t>(r.size()) != cols) throw ShapeError("ragged matrix literal");
    cols = static_cast<std::int64_t>(r.size());
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({static_cast<std::int64_t>(rows.size()), cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({static_cast<std::int64_t>(values.size())}, std::vector<float>(values));
}

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::gather_rows(std::span<const std::int64_t> rows) const {
  const std::int64_t n = this->rows();
  const std::int64_t c = cols();
  Shape out_shape = shape_;
  if (out_shape.empty()) throw ShapeError("gather_rows on scalar");
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  std::vector<float> out(rows.size() * static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (r < 0 || r >= n) throw ShapeError("row index out of range");
    std::copy_n(data_.begin() + r * c, c, out.begin() + static_cast<std::ptrdiff_t>(i) * c);
  }
  if (rows.empty()) return Tensor{};
  return Tensor(std::move(out_shape), std::move(out));
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace gf
