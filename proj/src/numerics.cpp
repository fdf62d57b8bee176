#include "tpower/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace tpower {

namespace {

void ensure_all_finite(const Vec& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw Error(std::string(op) + ": non-finite value in result");
    }
  }
}

bool all_zero(const Vec& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

double sign_of(double x) {
  if (x > 0.0) return 1.0;
  if (x < 0.0) return -1.0;
  return 0.0;
}

}  // namespace

NormExponent::NormExponent(double value) : value_(value) {
  if (std::isnan(value) || value < 1.0) {
    throw InvalidExponentError("norm exponent must be >= 1 or infinity, got " +
                               std::to_string(value));
  }
}

NormExponent NormExponent::infinity() {
  return NormExponent(std::numeric_limits<double>::infinity());
}

bool NormExponent::is_infinite() const { return std::isinf(value_); }

NormExponent NormExponent::dual() const {
  if (is_infinite()) return NormExponent(1.0);
  if (value_ == 1.0) return infinity();
  return NormExponent(value_ / (value_ - 1.0));
}

NormExponent dual_exponent(NormExponent p) { return p.dual(); }

SparsityPattern SparsityPattern::singletons(std::size_t total_len) {
  SparsityPattern p;
  p.total_len_ = total_len;
  p.blocks_.resize(total_len);
  for (std::size_t i = 0; i < total_len; ++i) p.blocks_[i] = {i};
  return p;
}

SparsityPattern SparsityPattern::grid(int height, int width, int channels,
                                      int patch_size) {
  if (height < 1 || width < 1 || channels < 1 || patch_size < 1) {
    throw Error("grid pattern: all dimensions must be positive");
  }
  SparsityPattern p;
  p.total_len_ = static_cast<std::size_t>(height) * width * channels;
  p.descriptor_ = GridDescriptor{height, width, channels, patch_size};
  const int py_count = (height + patch_size - 1) / patch_size;
  const int px_count = (width + patch_size - 1) / patch_size;
  p.blocks_.reserve(static_cast<std::size_t>(py_count) * px_count);
  for (int py = 0; py < py_count; ++py) {
    for (int px = 0; px < px_count; ++px) {
      std::vector<std::size_t> block;
      const int y_end = std::min((py + 1) * patch_size, height);
      const int x_end = std::min((px + 1) * patch_size, width);
      for (int y = py * patch_size; y < y_end; ++y) {
        for (int x = px * patch_size; x < x_end; ++x) {
          for (int c = 0; c < channels; ++c) {
            block.push_back((static_cast<std::size_t>(y) * width + x) * channels + c);
          }
        }
      }
      p.blocks_.push_back(std::move(block));
    }
  }
  return p;
}

SparsityPattern SparsityPattern::from_blocks(
    std::size_t total_len, std::vector<std::vector<std::size_t>> blocks) {
  std::vector<char> seen(total_len, 0);
  std::size_t covered = 0;
  for (const auto& block : blocks) {
    for (std::size_t idx : block) {
      if (idx >= total_len) throw Error("pattern block index out of range");
      if (seen[idx]) throw Error("pattern blocks overlap at index " + std::to_string(idx));
      seen[idx] = 1;
      ++covered;
    }
  }
  if (covered != total_len) throw Error("pattern blocks do not cover every index");
  SparsityPattern p;
  p.total_len_ = total_len;
  p.blocks_ = std::move(blocks);
  return p;
}

Vec psi(const Vec& v, NormExponent q) {
  if (q.is_infinite()) {
    throw UnsupportedExponentError("psi has no closed form for q = inf");
  }
  const double e = q.value() - 1.0;
  if (e == 1.0) return v;  // psi_2 is the identity, exactly
  Vec out(v.size());
  if (e == 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = sign_of(v[i]);
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = sign_of(v[i]) * std::pow(std::abs(v[i]), e);
  }
  ensure_all_finite(out, "psi");
  return out;
}

namespace {

double lp_norm_impl(const Vec& v, const std::size_t* idx, std::size_t n,
                    NormExponent p) {
  auto value = [&](std::size_t i) { return idx ? v[idx[i]] : v[i]; };
  double maxabs = 0.0;
  for (std::size_t i = 0; i < n; ++i) maxabs = std::max(maxabs, std::abs(value(i)));
  if (maxabs == 0.0) return 0.0;
  if (p.is_infinite()) return maxabs;
  const double pv = p.value();
  if (pv == 1.0) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::abs(value(i));
    return sum;
  }
  if (pv == 2.0) {
    // Scale by the max entry so squaring cannot overflow.
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = value(i) / maxabs;
      sum += s * s;
    }
    return maxabs * std::sqrt(sum);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += std::pow(std::abs(value(i)) / maxabs, pv);
  }
  return maxabs * std::pow(sum, 1.0 / pv);
}

}  // namespace

double lp_norm(const Vec& v, NormExponent p) {
  return lp_norm_impl(v, nullptr, v.size(), p);
}

double block_lp_norm(const Vec& v, const std::vector<std::size_t>& block,
                     NormExponent p) {
  return lp_norm_impl(v, block.data(), block.size(), p);
}

Vec dual_witness(const Vec& b, NormExponent q) {
  if (all_zero(b)) {
    throw ZeroInputError("dual_witness: input vector is zero");
  }
  Vec w = psi(b, q);
  const double n = lp_norm(w, q.dual());
  for (double& x : w) x /= n;
  ensure_all_finite(w, "dual_witness");
  return w;
}

Vec truncate_topk(const Vec& v, std::size_t k, const SparsityPattern& pattern,
                  NormExponent pstar) {
  if (pattern.total_len() != v.size()) {
    throw ShapeError("truncate_topk: pattern length " +
                     std::to_string(pattern.total_len()) +
                     " does not match vector length " + std::to_string(v.size()));
  }
  if (k < 1 || k > pattern.block_count()) {
    throw InvalidKError("truncate_topk: k = " + std::to_string(k) +
                        " outside [1, " + std::to_string(pattern.block_count()) + "]");
  }
  const std::size_t nblocks = pattern.block_count();
  std::vector<double> norms(nblocks);
  for (std::size_t id = 0; id < nblocks; ++id) {
    norms[id] = block_lp_norm(v, pattern.block(id), pstar);
  }
  std::vector<std::size_t> order(nblocks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (norms[a] != norms[b]) return norms[a] > norms[b];
    return a < b;  // tie: lowest block id wins
  });
  Vec out(v.size(), 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t idx : pattern.block(order[r])) out[idx] = v[idx];
  }
  return out;
}

Vec renormalize_step(const Vec& v, NormExponent p) {
  if (all_zero(v)) {
    throw ZeroIterateError("renormalize_step: zero iterate");
  }
  Vec w = psi(v, p.dual());
  const double n = lp_norm(w, p);
  for (double& x : w) x /= n;
  ensure_all_finite(w, "renormalize_step");
  return w;
}

}  // namespace tpower
