#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "grokforget/tensor.hpp"

namespace gf {

struct ParamEntry {
  std::string name;
  Shape shape;
  std::int64_t offset = 0;
  std::int64_t length = 0;
};

/// Ordered, contiguous, non-overlapping (name, offset, length) table.
class IndexMap {
 public:
  IndexMap() = default;
  void append(std::string name, Shape shape);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::int64_t total() const { return total_; }
  const ParamEntry& find(const std::string& name) const;
  bool contains(const std::string& name) const;

  friend bool operator==(const IndexMap& a, const IndexMap& b);

 private:
  std::vector<ParamEntry> entries_;
  std::int64_t total_ = 0;
};

/// Flat float32 vector paired with the layout that names its slices.
struct GradVector {
  std::shared_ptr<const IndexMap> index_map;
  std::vector<float> values;

  GradVector() = default;
  GradVector(std::shared_ptr<const IndexMap> map, std::vector<float> v);
  explicit GradVector(std::vector<float> v);  // single anonymous block

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  std::span<const float> slice(const std::string& name) const;
};

double dot(std::span<const float> a, std::span<const float> b);
double squared_norm(std::span<const float> a);

struct CosineResult {
  double cosine = 0.0;
  double angle_degrees = 0.0;
};

// Throws DegenerateInputError on a zero-norm argument and ShapeError on a
// layout mismatch.
CosineResult cosine_similarity(const GradVector& u, const GradVector& v);
CosineResult cosine_similarity(std::span<const float> u, std::span<const float> v);
double angle_from_cosine(double cosine);

}  // namespace gf
