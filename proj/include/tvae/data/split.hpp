#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tvae/data/dataset.hpp"
#include "tvae/hash.hpp"

namespace tvae {

struct Fold {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

namespace detail {

inline void seeded_shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

/// k folds preserving the treated/control ratio. Treated rows are dealt
/// round-robin over a seeded shuffle, then control rows continue the deal, so
/// per-fold treated counts differ by at most one and fold sizes likewise.
inline std::vector<Fold> stratified_kfold(const std::vector<int>& w, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw SplitError("stratified_kfold needs k >= 2");
  std::vector<std::size_t> treated, control;
  for (std::size_t i = 0; i < w.size(); ++i) (w[i] ? treated : control).push_back(i);
  if (treated.size() < k || control.size() < k) {
    throw SplitError("each treatment group needs at least k=" + std::to_string(k) + " rows (treated " +
                     std::to_string(treated.size()) + ", control " + std::to_string(control.size()) + ")");
  }
  std::mt19937_64 rng(seed);
  detail::seeded_shuffle(treated, rng);
  detail::seeded_shuffle(control, rng);
  std::vector<std::vector<std::size_t>> test(k);
  std::size_t slot = 0;
  for (const auto* group : {&treated, &control})
    for (std::size_t i : *group) test[slot++ % k].push_back(i);

  std::vector<Fold> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(test[f].begin(), test[f].end());
    folds[f].test = test[f];
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), test[g].begin(), test[g].end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

inline std::vector<Fold> stratified_kfold(const Dataset& d, std::size_t k, std::uint64_t seed) {
  return stratified_kfold(d.w, k, seed);
}

/// Stratified holdout of roughly `fraction` of `rows` (positions into `w`),
/// keeping at least one row of each group on both sides when possible.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const std::vector<std::size_t>& rows, const std::vector<int>& w, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> treated, control;
  for (std::size_t r : rows) (w.at(r) ? treated : control).push_back(r);
  std::mt19937_64 rng(seed);
  detail::seeded_shuffle(treated, rng);
  detail::seeded_shuffle(control, rng);
  std::vector<std::size_t> keep, held;
  for (auto* group : {&treated, &control}) {
    const std::size_t g = group->size();
    std::size_t h = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(g)));
    if (g >= 2) h = std::clamp<std::size_t>(h, 1, g - 1);
    else h = 0;
    held.insert(held.end(), group->begin(), group->begin() + static_cast<std::ptrdiff_t>(h));
    keep.insert(keep.end(), group->begin() + static_cast<std::ptrdiff_t>(h), group->end());
  }
  std::sort(keep.begin(), keep.end());
  std::sort(held.begin(), held.end());
  return {keep, held};
}

/// Hash of the test-fold index lists; equal fingerprints mean identical folds.
inline std::string fold_fingerprint(const std::vector<Fold>& folds) {
  Fingerprint f;
  f.add(static_cast<std::uint64_t>(folds.size()));
  for (const Fold& fold : folds) f.add_all<std::size_t>(fold.test);
  return f.hex();
}

}  // namespace tvae
