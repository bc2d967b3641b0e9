#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tmps/dataset.hpp"
#include "tmps/rng.hpp"

namespace tmps {

// Anchor selection that prioritizes the scarce domain. For each request the
// sampler first flips a Bernoulli(p) coin; on success it draws uniformly
// from the target-train pool of the class, otherwise uniformly from the
// source pool. Draw order per anchor is fixed (coin first, then index), so
// the stream is reproducible. An empty target-train pool with p > 0 is an
// error rather than a silent fall-through to source.
class PrioritizedSampler {
 public:
  PrioritizedSampler(const ClassPools& source, const ClassPools& target_train, double p,
                     std::uint64_t seed)
      : source_(&source), target_(&target_train), p_(p), rng_(seed) {
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("PrioritizedSampler: p must lie in [0, 1], got " +
                                  std::to_string(p));
    if (source.size() != target_train.size())
      throw std::invalid_argument("PrioritizedSampler: source and target-train class counts differ");
  }

  int num_classes() const { return static_cast<int>(source_->size()); }

  const Sample& sample_anchor(int cls) {
    check_class(cls);
    const bool pick_target = rng_.bernoulli(p_);
    if (pick_target) {
      const auto& pool = (*target_)[cls];
      if (pool.empty())
        throw std::invalid_argument("PrioritizedSampler: class " + std::to_string(cls) +
                                    " has no target-train samples but p > 0");
      return pool[rng_.uniform_index(pool.size())];
    }
    const auto& pool = (*source_)[cls];
    if (pool.empty())
      throw std::invalid_argument("PrioritizedSampler: class " + std::to_string(cls) +
                                  " has no source samples");
    return pool[rng_.uniform_index(pool.size())];
  }

  // One anchor per class, classes drawn in index order with an independent
  // coin each.
  std::vector<const Sample*> sample_anchor_set() {
    std::vector<const Sample*> out(source_->size());
    for (int c = 0; c < num_classes(); ++c) out[c] = &sample_anchor(c);
    return out;
  }

 private:
  void check_class(int cls) const {
    if (cls < 0 || cls >= num_classes())
      throw std::invalid_argument("sample_anchor: class " + std::to_string(cls) +
                                  " outside [0, " + std::to_string(num_classes()) + ")");
  }

  const ClassPools* source_;
  const ClassPools* target_;
  double p_;
  Rng rng_;
};

// Conventional anchor selection: uniform over the union of both pools, so a
// target sample is picked no more often than its share of the union. Index
// space is the source pool first, then target-train, one uniform draw per
// anchor.
class PooledSampler {
 public:
  PooledSampler(const ClassPools& source, const ClassPools& target_train, std::uint64_t seed)
      : source_(&source), target_(&target_train), rng_(seed) {
    if (source.size() != target_train.size())
      throw std::invalid_argument("PooledSampler: source and target-train class counts differ");
  }

  int num_classes() const { return static_cast<int>(source_->size()); }

  const Sample& sample_anchor(int cls) {
    if (cls < 0 || cls >= num_classes())
      throw std::invalid_argument("sample_anchor: class " + std::to_string(cls) +
                                  " outside [0, " + std::to_string(num_classes()) + ")");
    const auto& src = (*source_)[cls];
    const auto& tgt = (*target_)[cls];
    const std::size_t n = src.size() + tgt.size();
    if (n == 0)
      throw std::invalid_argument("PooledSampler: class " + std::to_string(cls) +
                                  " has no samples in either pool");
    const std::size_t i = rng_.uniform_index(n);
    return i < src.size() ? src[i] : tgt[i - src.size()];
  }

  std::vector<const Sample*> sample_anchor_set() {
    std::vector<const Sample*> out(source_->size());
    for (int c = 0; c < num_classes(); ++c) out[c] = &sample_anchor(c);
    return out;
  }

 private:
  const ClassPools* source_;
  const ClassPools* target_;
  Rng rng_;
};

}  // namespace tmps
