#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "tpower/error.hpp"

namespace tpower {

using Vec = std::vector<double>;

// Norm exponent p, either a finite real >= 1 or infinity.
class NormExponent {
 public:
  explicit NormExponent(double value);
  static NormExponent infinity();

  bool is_infinite() const;
  // Raw value; +inf when is_infinite().
  double value() const { return value_; }

  // Holder conjugate: 1/p + 1/p* = 1. dual(1) = inf, dual(inf) = 1.
  NormExponent dual() const;

  friend bool operator==(const NormExponent&, const NormExponent&) = default;

 private:
  double value_;
};

NormExponent dual_exponent(NormExponent p);

// Shape of a grid-derived block pattern: each block is one
// patch_size x patch_size spatial region spanning every channel.
struct GridDescriptor {
  int height = 0;
  int width = 0;
  int channels = 0;
  int patch_size = 0;

  friend bool operator==(const GridDescriptor&, const GridDescriptor&) = default;
};

// Partition of {0..total_len-1} into disjoint covering index blocks.
// Blocks are the unit of truncation; block ids are the tie-break order.
class SparsityPattern {
 public:
  // Empty pattern; a usable one comes from the factories below.
  SparsityPattern() = default;

  // Every index is its own block.
  static SparsityPattern singletons(std::size_t total_len);

  // Patch blocks over an HWC image, row-major patches. patch_size need not
  // divide the sides; edge patches are simply smaller.
  static SparsityPattern grid(int height, int width, int channels, int patch_size);

  // Explicit blocks; validates the partition property.
  static SparsityPattern from_blocks(std::size_t total_len,
                                     std::vector<std::vector<std::size_t>> blocks);

  std::size_t total_len() const { return total_len_; }
  std::size_t block_count() const { return blocks_.size(); }
  const std::vector<std::size_t>& block(std::size_t id) const { return blocks_[id]; }
  const std::vector<std::vector<std::size_t>>& blocks() const { return blocks_; }
  const std::optional<GridDescriptor>& descriptor() const { return descriptor_; }

 private:
  std::size_t total_len_ = 0;
  std::vector<std::vector<std::size_t>> blocks_;
  std::optional<GridDescriptor> descriptor_;
};

// psi_q(y) = sign(y) |y|^(q-1) elementwise, with sign(0) = 0. Finite q only.
Vec psi(const Vec& v, NormExponent q);

// Standard lp norm; max |v[i]| for p = inf; 0 for the zero vector.
double lp_norm(const Vec& v, NormExponent p);

// lp norm restricted to the given index block.
double block_lp_norm(const Vec& v, const std::vector<std::size_t>& block, NormExponent p);

// y = psi_q(b) / ||psi_q(b)||_{q*}: the unit-q*-sphere maximizer of y^T b,
// satisfying y^T b = ||b||_q.
Vec dual_witness(const Vec& b, NormExponent q);

// Keeps the k blocks of largest lp* block norm, zeroes the rest.
// Ties broken toward the lowest block id.
Vec truncate_topk(const Vec& v, std::size_t k, const SparsityPattern& pattern,
                  NormExponent pstar);

// psi_{p*}(v) / ||psi_{p*}(v)||_p. Preserves the support; for p = inf the
// output is the sign pattern of v.
Vec renormalize_step(const Vec& v, NormExponent p);

}  // namespace tpower
