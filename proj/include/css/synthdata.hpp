#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "css/batch.hpp"
#include "css/rng.hpp"
#include "css/tensor.hpp"

namespace css {

/// Configuration of the synthetic dialogue generator.
struct GenConfig {
  std::size_t n_dialogues = 2000;
  std::size_t max_len = 12;
  std::size_t n_speakers = 8;
  std::array<std::size_t, kNumModalities> d_in{12, 12, 12};
  std::size_t n_classes = 4;        // even: labels combine a parity bit with a latent
  double noise = 0.1;               // sigma of the Gaussian noise on every channel
  double context_copy_prob = 0.0;   // rho: label copies the speaker's previous label
  std::uint64_t seed = 1;
};

struct Dialogue {
  std::vector<std::int32_t> speakers;
  std::vector<std::int32_t> labels;
  std::array<Tensor, kNumModalities> features;  // [T x d_in(m)]
  std::size_t length() const { return speakers.size(); }
};

struct Dataset {
  GenConfig config;
  std::vector<Dialogue> dialogues;
};

/// The planted structure: text carries a latent sign, audio a second sign, and
/// every modality carries a (progressively weaker) cue for a class latent u.
/// The label is 2u + [signs agree], so the parity bit is a product of
/// unimodal signs that no additive pooling of per-modality statistics can
/// recover, while u is redundantly decodable from any modality.
struct PlantedRule {
  static constexpr std::size_t kSignBlock = 4;
  static constexpr std::size_t kCueBlock = 4;
  static constexpr double kSignAmp = 1.0;
  // Cue amplitudes per modality; chosen so single-modality decoding of u is
  // imperfect at sigma = 0.1 and each extra modality adds a measurable vote.
  static constexpr std::array<double, kNumModalities> kCueAmp{0.0738, 0.0641, 0.0540};

  std::size_t u_values = 2;                                   // n_classes / 2
  std::array<std::vector<std::vector<double>>, kNumModalities> codebooks;  // [u][kCueBlock]
};

/// Deterministic in config.seed; throws on odd n_classes or too-small d_in.
PlantedRule derive_rule(const GenConfig& config);

/// Generates dialogues of random length <= max_len. Same config (incl. seed)
/// produces identical output; dialogues are drawn from per-index split streams.
Dataset generate(const GenConfig& config);

/// JSON-lines file: a header object {version, config, digest} followed by one
/// dialogue object per line. The digest covers the record payload bytes.
void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

/// Exact posterior over labels under the generative model, restricted to the
/// given modalities; [T x n_classes], rows sum to one.
std::vector<std::vector<double>> bayes_posterior(const Dialogue& dialogue,
                                                 const GenConfig& config,
                                                 const PlantedRule& rule,
                                                 const std::array<bool, kNumModalities>& kept);

/// Accuracy of the Bayes-optimal decoder over a dataset (argmax posterior).
double bayes_accuracy(const Dataset& dataset,
                      const std::array<bool, kNumModalities>& kept = {true, true, true});

/// Softmax regression on concatenated raw utterance features; returns accuracy
/// on the same dialogues. Deliberately additive: it cannot represent the
/// cross-modal parity bit.
double linear_probe_accuracy(const Dataset& train, const Dataset& test, std::size_t epochs = 60,
                             double lr = 0.5);

/// Pads dialogues [first, last) into batches of at most batch_size, with mask 0,
/// label -1 and zero features on padded positions.
std::vector<DialogueBatch> make_batches(const std::vector<Dialogue>& dialogues,
                                        const std::vector<std::size_t>& order,
                                        std::size_t batch_size, std::size_t max_len,
                                        const std::array<std::size_t, kNumModalities>& d_in);

}  // namespace css
