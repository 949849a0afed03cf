#pragma once

#include <cstdint>

#include "usd/embeddings.hpp"

namespace usd {

// Squared maximum mean discrepancy in the feature space of fm:
// |mu(p) - mu(q)|^2. Weights enter the embeddings unnormalized, so mass
// differences register.
double mmd2(const WeightedParticles& p, const WeightedParticles& q, const FeatureMap& fm);

inline constexpr int kEvalFeatures = 300;

// Shared evaluation convention: an rff map with 300 features and bandwidth
// sqrt(d), seeded independently of whatever map drives a descent run.
FeatureMap evaluation_map(int dim, std::uint64_t seed);

}  // namespace usd
