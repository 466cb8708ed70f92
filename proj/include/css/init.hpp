#pragma once

#include "css/rng.hpp"
#include "css/tensor.hpp"

namespace css {

/// Glorot-style uniform init on (-sqrt(6/(fan_in+fan_out)), +...).
void fill_glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng rng);

void fill_gaussian(Tensor& t, double stddev, Rng rng);

}  // namespace css
