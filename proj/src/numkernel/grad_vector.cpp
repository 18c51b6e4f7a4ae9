#include "grokforget/grad_vector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "grokforget/errors.hpp"

namespace gf {

void IndexMap::append(std::string name, Shape shape) {
  if (contains(name)) throw ValidationError("duplicate parameter name " + name);
  const auto len = shape_numel(shape);
  entries_.push_back(ParamEntry{std::move(name), std::move(shape), total_, len});
  total_ += len;
}

const ParamEntry& IndexMap::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ValidationError("unknown parameter " + name);
}

bool IndexMap::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

bool operator==(const IndexMap& a, const IndexMap& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto &x = a.entries_[i], &y = b.entries_[i];
    if (x.name != y.name || x.shape != y.shape || x.offset != y.offset) return false;
  }
  return true;
}

GradVector::GradVector(std::shared_ptr<const IndexMap> map, std::vector<float> v)
    : index_map(std::move(map)), values(std::move(v)) {
  if (index_map && index_map->total() != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("GradVector length does not match its index map");
  }
}

GradVector::GradVector(std::vector<float> v) : values(std::move(v)) {
  auto map = std::make_shared<IndexMap>();
  if (!values.empty()) map->append("flat", {static_cast<std::int64_t>(values.size())});
  index_map = std::move(map);
}

std::span<const float> GradVector::slice(const std::string& name) const {
  const auto& e = index_map->find(name);
  return std::span<const float>(values).subspan(static_cast<std::size_t>(e.offset),
                                                static_cast<std::size_t>(e.length));
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double squared_norm(std::span<const float> a) { return dot(a, a); }

double angle_from_cosine(double cosine) {
  return std::acos(std::clamp(cosine, -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

CosineResult cosine_similarity(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double uu = squared_norm(u);
  const double vv = squared_norm(v);
  if (uu <= 0.0 || vv <= 0.0) throw DegenerateInputError("cosine_similarity: zero-norm vector");
  const double c = std::clamp(dot(u, v) / std::sqrt(uu * vv), -1.0, 1.0);
  return {c, angle_from_cosine(c)};
}

CosineResult cosine_similarity(const GradVector& u, const GradVector& v) {
  if (u.index_map && v.index_map && !(*u.index_map == *v.index_map)) {
    throw ShapeError("cosine_similarity: index maps differ");
  }
  return cosine_similarity(std::span<const float>(u.values), std::span<const float>(v.values));
}

}  // namespace gf
