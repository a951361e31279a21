#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "mfbd/master.hpp"

namespace mfbd {

namespace {

// Saturating binomial, returns max size_t on overflow.
std::size_t binom_checked(int n, int k) {
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  if (k < 0 || n < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::size_t result = 1;
  for (int j = 1; j <= k; ++j) {
    // result * (n - k + j) / j is exact at every step.
    const std::size_t num = static_cast<std::size_t>(n - k + j);
    if (result > kMax / num) return kMax;
    result = result * num / static_cast<std::size_t>(j);
  }
  return result;
}

}  // namespace

std::size_t TruncatedLattice::count(int d, int kappa) {
  if (d < 1 || kappa < 0) throw std::invalid_argument("TruncatedLattice: need d >= 1 and kappa >= 0");
  const std::size_t n = binom_checked(kappa + d, d);
  if (n == std::numeric_limits<std::size_t>::max()) {
    throw std::overflow_error("TruncatedLattice: state count overflows");
  }
  return n;
}

TruncatedLattice::TruncatedLattice(int d, int kappa) : d_(d), kappa_(kappa), size_(count(d, kappa)) {
  const int rows = kappa + d + 2;
  const int cols = d + 2;
  binom_.assign(static_cast<std::size_t>(rows) * cols, 0);
  for (int n = 0; n < rows; ++n) {
    binom_[static_cast<std::size_t>(n) * cols] = 1;
    for (int k = 1; k < cols && k <= n; ++k) {
      binom_[static_cast<std::size_t>(n) * cols + k] =
          binom_[static_cast<std::size_t>(n - 1) * cols + k - 1] +
          (k <= n - 1 ? binom_[static_cast<std::size_t>(n - 1) * cols + k] : 0);
    }
  }

  states_.resize(size_ * d_);
  totals_.resize(size_);
  std::vector<int> y(d_, 0);
  int sum = 0;
  for (std::size_t idx = 0; idx < size_; ++idx) {
    std::copy(y.begin(), y.end(), states_.begin() + static_cast<std::ptrdiff_t>(idx * d_));
    totals_[idx] = sum;
    // Lexicographic successor. Below the budget, bump the last coordinate.
    // At the budget, the trailing nonzero coordinate j is maximal for its
    // prefix; zero it and bump j - 1.
    if (sum < kappa_) {
      ++y[d_ - 1];
      ++sum;
      continue;
    }
    int j = d_ - 1;
    while (j >= 0 && y[j] == 0) --j;
    if (j <= 0) break;
    sum -= y[j] - 1;
    y[j] = 0;
    ++y[j - 1];
  }
}

std::size_t TruncatedLattice::binom(int n, int k) const {
  if (n < 0 || k < 0 || k > n) return 0;
  return binom_[static_cast<std::size_t>(n) * (d_ + 2) + k];
}

std::span<const int> TruncatedLattice::state(std::size_t index) const {
  if (index >= size_) throw std::out_of_range("TruncatedLattice: index out of range");
  return {states_.data() + index * d_, static_cast<std::size_t>(d_)};
}

std::size_t TruncatedLattice::rank(std::span<const int> y) const {
  // States before y: for each coordinate i, those agreeing on y_1..y_{i-1}
  // with a smaller value v at i. With R the remaining budget and m = d-1-i
  // trailing coordinates there are C(R - v + m, m) completions; summing over
  // v < y_i telescopes to C(R + m + 1, m + 1) - C(R - y_i + m + 1, m + 1).
  std::size_t r = 0;
  int remaining = kappa_;
  for (int i = 0; i < d_; ++i) {
    const int m = d_ - 1 - i;
    r += binom(remaining + m + 1, m + 1) - binom(remaining - y[i] + m + 1, m + 1);
    remaining -= y[i];
  }
  return r;
}

std::optional<std::size_t> TruncatedLattice::index(std::span<const int> y) const {
  if (static_cast<int>(y.size()) != d_) return std::nullopt;
  long total = 0;
  for (int v : y) {
    if (v < 0) return std::nullopt;
    total += v;
  }
  if (total > kappa_) return std::nullopt;
  return rank(y);
}

}  // namespace mfbd
