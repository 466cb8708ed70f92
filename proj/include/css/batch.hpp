#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "css/tensor.hpp"

namespace css {

inline constexpr int kNumModalities = 3;
enum Modality : int { kText = 0, kAudio = 1, kVisual = 2 };
inline constexpr const char* kModalityNames[kNumModalities] = {"text", "audio", "visual"};

/// Padded batch of dialogues. Positions with mask 0 carry zero features,
/// speaker 0 and label -1, and take no part in attention, losses or metrics.
struct DialogueBatch {
  std::array<Tensor, kNumModalities> features;  // each [B x L x d_in(m)]
  std::vector<std::int32_t> speakers;           // B*L, row-major
  std::vector<std::int32_t> labels;             // B*L, -1 where masked
  std::vector<double> mask;                     // B*L, 0 or 1
  std::size_t batch_size = 0;
  std::size_t max_len = 0;

  std::size_t flat() const { return batch_size * max_len; }
  double valid_count() const {
    double s = 0.0;
    for (double m : mask) s += m;
    return s;
  }
};

}  // namespace css
