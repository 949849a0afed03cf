#include "usd/mmd.hpp"

#include <cmath>
#include <stdexcept>

namespace usd {

double mmd2(const WeightedParticles& p, const WeightedParticles& q, const FeatureMap& fm) {
  if (p.dim() != q.dim()) throw std::invalid_argument("mmd2: dimension mismatch");
  return (mean_embedding(p, fm) - mean_embedding(q, fm)).squaredNorm();
}

FeatureMap evaluation_map(int dim, std::uint64_t seed) {
  return FeatureMap::rff(dim, kEvalFeatures, std::sqrt(static_cast<double>(dim)), seed);
}

}  // namespace usd
