#include "css/init.hpp"

#include <cmath>

namespace css {

void fill_glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_symmetric(limit);
}

void fill_gaussian(Tensor& t, double stddev, Rng rng) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.next_gaussian();
}

}  // namespace css
