#include "agfa/folds.hpp"

#include <cmath>

#include "agfa/error.hpp"
#include "agfa/rng.hpp"

namespace agfa {

std::vector<FoldSplit> kfold_split(const std::vector<std::string>& ids, int k, uint64_t seed,
                                   double val_fraction) {
  if (k < 2) fail(ErrorKind::kInvalidArgument, "kfold: k must be >= 2");
  if (static_cast<int>(ids.size()) < k)
    fail(ErrorKind::kInvalidArgument, "kfold: need at least k ids, got " + std::to_string(ids.size()));
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    fail(ErrorKind::kInvalidArgument, "kfold: val_fraction must be in [0, 1)");

  std::vector<std::string> shuffled = ids;
  Rng rng(seed);
  rng.shuffle(shuffled);

  const int n = static_cast<int>(shuffled.size());
  const int base = n / k;
  const int remainder = n % k;

  std::vector<FoldSplit> folds;
  int offset = 0;
  for (int fold = 0; fold < k; ++fold) {
    const int test_size = base + (fold < remainder ? 1 : 0);
    FoldSplit split;
    split.test.assign(shuffled.begin() + offset, shuffled.begin() + offset + test_size);

    std::vector<std::string> rest;
    rest.insert(rest.end(), shuffled.begin(), shuffled.begin() + offset);
    rest.insert(rest.end(), shuffled.begin() + offset + test_size, shuffled.end());

    const int val_size = static_cast<int>(std::llround(val_fraction * static_cast<double>(rest.size())));
    split.val.assign(rest.begin(), rest.begin() + val_size);
    split.train.assign(rest.begin() + val_size, rest.end());

    folds.push_back(std::move(split));
    offset += test_size;
  }
  return folds;
}

}  // namespace agfa
