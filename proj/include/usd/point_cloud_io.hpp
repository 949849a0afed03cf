#pragma once

#include <string>

#include "usd/particles.hpp"

namespace usd {

// CSV with header "x0,...,x{d-1},w". Coordinates and weights are written
// with 17 significant digits, which round-trips doubles exactly.
void save_point_cloud(const std::string& path, const WeightedParticles& p);

// Accepts files with or without the trailing weight column; without one,
// weights default to 1/n and *weights_defaulted is set when provided.
// Parse errors report the offending line number.
WeightedParticles load_point_cloud(const std::string& path, bool* weights_defaulted = nullptr);

}  // namespace usd
