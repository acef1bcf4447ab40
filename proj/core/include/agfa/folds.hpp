#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace agfa {

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// k partitions over a seeded shuffle of the ids. Each id lands in exactly
// one test fold across the k partitions; within a partition, 15% of the
// non-test ids (rounded to nearest) form the validation set and the rest
// train. 1000 ids with k=5 therefore give 680/120/200 per fold, i.e. the
// 800-train/200-test split with 120 validation volumes.
std::vector<FoldSplit> kfold_split(const std::vector<std::string>& ids, int k, uint64_t seed,
                                   double val_fraction = 0.15);

}  // namespace agfa
