#pragma once

// Sparse gradient vector aligned with the canonical parameter enumeration of
// a policy (see policy.hpp). Entries are (flat index, value) pairs sorted by
// index; the logical dimension always equals the policy's total parameter
// count, so dot products and norms agree with the dense flattening exactly.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rldyn {

class GradientVector {
 public:
  using Entry = std::pair<std::uint64_t, double>;

  GradientVector() = default;
  explicit GradientVector(std::uint64_t dim) : dim_(dim) {}

  GradientVector(std::uint64_t dim, std::vector<Entry> sorted_entries)
      : dim_(dim), entries_(std::move(sorted_entries)) {}

  static GradientVector from_map(std::uint64_t dim, const std::map<std::uint64_t, double>& acc) {
    std::vector<Entry> e;
    e.reserve(acc.size());
    for (const auto& [idx, v] : acc)
      if (v != 0.0) e.emplace_back(idx, v);
    return GradientVector(dim, std::move(e));
  }

  std::uint64_t dim() const { return dim_; }
  std::size_t nnz() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  double at(std::uint64_t index) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                               [](const Entry& e, std::uint64_t i) { return e.first < i; });
    return (it != entries_.end() && it->first == index) ? it->second : 0.0;
  }

  double dot(const GradientVector& other) const {
    if (dim_ != other.dim_)
      throw std::invalid_argument("GradientVector::dot: dimension mismatch");
    double s = 0.0;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    while (a != entries_.end() && b != other.entries_.end()) {
      if (a->first < b->first) {
        ++a;
      } else if (b->first < a->first) {
        ++b;
      } else {
        s += a->second * b->second;
        ++a;
        ++b;
      }
    }
    return s;
  }

  double norm_squared() const {
    double s = 0.0;
    for (const auto& [idx, v] : entries_) s += v * v;
    return s;
  }

  double norm() const { return std::sqrt(norm_squared()); }

  void scale(double c) {
    for (auto& [idx, v] : entries_) v *= c;
  }

  // this += c * other (sorted merge)
  void add_scaled(const GradientVector& other, double c) {
    if (dim_ != other.dim_)
      throw std::invalid_argument("GradientVector::add_scaled: dimension mismatch");
    std::vector<Entry> merged;
    merged.reserve(entries_.size() + other.entries_.size());
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    while (a != entries_.end() || b != other.entries_.end()) {
      if (b == other.entries_.end() || (a != entries_.end() && a->first < b->first)) {
        merged.push_back(*a++);
      } else if (a == entries_.end() || b->first < a->first) {
        merged.emplace_back(b->first, c * b->second);
        ++b;
      } else {
        merged.emplace_back(a->first, a->second + c * b->second);
        ++a;
        ++b;
      }
    }
    entries_ = std::move(merged);
  }

  // Dense flattening in canonical order; only sensible for small test policies.
  std::vector<double> to_dense() const {
    if (dim_ > (1ULL << 26))
      throw std::length_error("GradientVector::to_dense: dimension too large to densify");
    std::vector<double> d(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& [idx, v] : entries_) d[static_cast<std::size_t>(idx)] = v;
    return d;
  }

 private:
  std::uint64_t dim_ = 0;
  std::vector<Entry> entries_;
};

}  // namespace rldyn
