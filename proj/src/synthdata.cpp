#include "css/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "css/errors.hpp"
#include "css/ops.hpp"

namespace css {

using nlohmann::json;

namespace {

constexpr int kDatasetVersion = 1;

json config_to_json(const GenConfig& c) {
  return json{{"n_dialogues", c.n_dialogues},
              {"max_len", c.max_len},
              {"n_speakers", c.n_speakers},
              {"d_in_text", c.d_in[kText]},
              {"d_in_audio", c.d_in[kAudio]},
              {"d_in_visual", c.d_in[kVisual]},
              {"n_classes", c.n_classes},
              {"noise", c.noise},
              {"context_copy_prob", c.context_copy_prob},
              {"seed", c.seed}};
}

GenConfig config_from_json(const json& j) {
  GenConfig c;
  c.n_dialogues = j.at("n_dialogues").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.n_speakers = j.at("n_speakers").get<std::size_t>();
  c.d_in[kText] = j.at("d_in_text").get<std::size_t>();
  c.d_in[kAudio] = j.at("d_in_audio").get<std::size_t>();
  c.d_in[kVisual] = j.at("d_in_visual").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.noise = j.at("noise").get<double>();
  c.context_copy_prob = j.at("context_copy_prob").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void validate_config(const GenConfig& c) {
  if (c.n_classes < 2 || c.n_classes % 2 != 0) {
    throw std::invalid_argument("GenConfig: n_classes must be even and >= 2");
  }
  if (c.max_len < 1) throw std::invalid_argument("GenConfig: max_len must be >= 1");
  if (c.noise < 0.0) throw std::invalid_argument("GenConfig: noise must be >= 0");
  if (c.context_copy_prob < 0.0 || c.context_copy_prob > 1.0) {
    throw std::invalid_argument("GenConfig: context_copy_prob must be in [0,1]");
  }
  if (c.n_speakers < 1) throw std::invalid_argument("GenConfig: need at least one speaker");
  if (c.d_in[kText] < PlantedRule::kSignBlock + PlantedRule::kCueBlock ||
      c.d_in[kAudio] < PlantedRule::kSignBlock + PlantedRule::kCueBlock ||
      c.d_in[kVisual] < PlantedRule::kCueBlock) {
    throw std::invalid_argument("GenConfig: d_in too small for the planted blocks");
  }
}

// Offset of the u-cue block inside a modality's feature vector.
std::size_t cue_offset(int m) { return m == kVisual ? 0 : PlantedRule::kSignBlock; }

std::string dialogue_to_line(const Dialogue& d) {
  json j;
  j["speakers"] = d.speakers;
  j["labels"] = d.labels;
  const char* keys[kNumModalities] = {"text", "audio", "visual"};
  for (int m = 0; m < kNumModalities; ++m) {
    json rows = json::array();
    std::size_t din = d.features[m].dim(1);
    for (std::size_t t = 0; t < d.length(); ++t) {
      const double* r = d.features[m].row(t);
      rows.push_back(std::vector<double>(r, r + din));
    }
    j[keys[m]] = std::move(rows);
  }
  return j.dump();
}

Dialogue dialogue_from_json(const json& j, const GenConfig& cfg) {
  Dialogue d;
  d.speakers = j.at("speakers").get<std::vector<std::int32_t>>();
  d.labels = j.at("labels").get<std::vector<std::int32_t>>();
  std::size_t len = d.speakers.size();
  if (len == 0 || len > cfg.max_len || d.labels.size() != len) {
    throw dataset_format_error("dialogue record has inconsistent lengths");
  }
  const char* keys[kNumModalities] = {"text", "audio", "visual"};
  for (int m = 0; m < kNumModalities; ++m) {
    const json& rows = j.at(keys[m]);
    if (!rows.is_array() || rows.size() != len) {
      throw dataset_format_error("dialogue record has wrong feature row count");
    }
    d.features[m] = Tensor({len, cfg.d_in[m]});
    for (std::size_t t = 0; t < len; ++t) {
      auto row = rows[t].get<std::vector<double>>();
      if (row.size() != cfg.d_in[m]) {
        throw dataset_format_error("dialogue record has wrong feature width");
      }
      for (std::size_t k = 0; k < row.size(); ++k) d.features[m].at(t, k) = row[k];
    }
  }
  return d;
}

}  // namespace

PlantedRule derive_rule(const GenConfig& config) {
  validate_config(config);
  PlantedRule rule;
  rule.u_values = config.n_classes / 2;
  if (rule.u_values > (std::size_t(1) << PlantedRule::kCueBlock)) {
    throw std::invalid_argument("GenConfig: n_classes too large for the cue codebook");
  }
  Rng code_rng = Rng(config.seed).split(1);
  for (int m = 0; m < kNumModalities; ++m) {
    std::set<std::vector<double>> seen;
    auto& book = rule.codebooks[m];
    book.clear();
    while (book.size() < rule.u_values) {
      std::vector<double> pattern(PlantedRule::kCueBlock);
      for (double& v : pattern) v = code_rng.next_uniform() < 0.5 ? -1.0 : 1.0;
      if (seen.insert(pattern).second) book.push_back(std::move(pattern));
    }
  }
  return rule;
}

Dataset generate(const GenConfig& config) {
  PlantedRule rule = derive_rule(config);
  Dataset out;
  out.config = config;
  out.dialogues.resize(config.n_dialogues);
  Rng root(config.seed);
  for (std::size_t idx = 0; idx < config.n_dialogues; ++idx) {
    Rng rng = root.split(1000 + idx);
    Dialogue& d = out.dialogues[idx];
    std::size_t len = 1 + rng.next_below(config.max_len);
    d.speakers.resize(len);
    d.labels.resize(len);
    for (int m = 0; m < kNumModalities; ++m) {
      d.features[m] = Tensor({len, config.d_in[m]}, 0.0);
    }
    std::vector<std::int32_t> last_label_of(config.n_speakers, -1);
    for (std::size_t t = 0; t < len; ++t) {
      std::int32_t sp = static_cast<std::int32_t>(rng.next_below(config.n_speakers));
      d.speakers[t] = sp;
      int s_text = rng.next_uniform() < 0.5 ? -1 : 1;
      int s_audio = rng.next_uniform() < 0.5 ? -1 : 1;
      std::size_t u = rng.next_below(rule.u_values);
      int parity = (s_text == s_audio) ? 1 : 0;
      std::int32_t label = static_cast<std::int32_t>(2 * u + parity);
      double copy_draw = rng.next_uniform();
      if (last_label_of[sp] >= 0 && copy_draw < config.context_copy_prob) {
        label = last_label_of[sp];
      }
      d.labels[t] = label;
      last_label_of[sp] = label;

      // Deposit the planted signals, then noise on every channel.
      double* text = d.features[kText].row(t);
      double* audio = d.features[kAudio].row(t);
      double* visual = d.features[kVisual].row(t);
      for (std::size_t k = 0; k < PlantedRule::kSignBlock; ++k) {
        text[k] = PlantedRule::kSignAmp * s_text;
        audio[k] = PlantedRule::kSignAmp * s_audio;
      }
      for (std::size_t k = 0; k < PlantedRule::kCueBlock; ++k) {
        text[cue_offset(kText) + k] = PlantedRule::kCueAmp[kText] * rule.codebooks[kText][u][k];
        audio[cue_offset(kAudio) + k] =
            PlantedRule::kCueAmp[kAudio] * rule.codebooks[kAudio][u][k];
        visual[cue_offset(kVisual) + k] =
            PlantedRule::kCueAmp[kVisual] * rule.codebooks[kVisual][u][k];
      }
      for (int m = 0; m < kNumModalities; ++m) {
        double* row = d.features[m].row(t);
        for (std::size_t k = 0; k < config.d_in[m]; ++k) {
          row[k] += config.noise * rng.next_gaussian();
        }
      }
    }
  }
  return out;
}

void write_dataset(const std::string& path, const Dataset& dataset) {
  std::vector<std::string> lines;
  lines.reserve(dataset.dialogues.size());
  std::uint64_t digest = 0xcbf29ce484222325ull;
  for (const Dialogue& d : dataset.dialogues) {
    lines.push_back(dialogue_to_line(d));
    digest = fnv1a(lines.back().data(), lines.back().size(), digest);
    digest = fnv1a("\n", 1, digest);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(digest));
  json header{{"version", kDatasetVersion}, {"config", config_to_json(dataset.config)},
              {"digest", std::string(hex)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + path);
  out << header.dump() << "\n";
  for (const auto& line : lines) out << line << "\n";
  if (!out) throw std::runtime_error("write_dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw dataset_format_error("read_dataset: missing header line");
  }
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw dataset_format_error(std::string("read_dataset: bad header: ") + e.what());
  }
  if (!header.contains("version") || !header["version"].is_number_integer()) {
    throw dataset_format_error("read_dataset: header has no version");
  }
  if (header["version"].get<int>() != kDatasetVersion) {
    throw dataset_version_error("read_dataset: unsupported dataset version " +
                                header["version"].dump());
  }
  Dataset out;
  try {
    out.config = config_from_json(header.at("config"));
    validate_config(out.config);
  } catch (const json::exception& e) {
    throw dataset_format_error(std::string("read_dataset: bad config: ") + e.what());
  }

  std::uint64_t digest = 0xcbf29ce484222325ull;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    digest = fnv1a(line.data(), line.size(), digest);
    digest = fnv1a("\n", 1, digest);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw dataset_format_error(std::string("read_dataset: bad record: ") + e.what());
    }
    out.dialogues.push_back(dialogue_from_json(j, out.config));
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(digest));
  std::string expect = header.at("digest").get<std::string>();
  if (expect != hex) {
    throw dataset_digest_error("read_dataset: digest mismatch (file corrupted?)");
  }
  return out;
}

std::vector<std::vector<double>> bayes_posterior(const Dialogue& dialogue,
                                                 const GenConfig& config,
                                                 const PlantedRule& rule,
                                                 const std::array<bool, kNumModalities>& kept) {
  std::size_t len = dialogue.length();
  std::size_t c = config.n_classes;
  double sigma = config.noise;
  std::vector<std::vector<double>> post(len, std::vector<double>(c, 0.0));
  std::vector<std::vector<double>> last_of(config.n_speakers);

  for (std::size_t t = 0; t < len; ++t) {
    // Posterior over each latent sign from its sign block.
    auto sign_prob = [&](int m) {
      if (!kept[m]) return 0.5;
      double s = 0.0;
      for (std::size_t k = 0; k < PlantedRule::kSignBlock; ++k) {
        s += dialogue.features[m].at(t, k);
      }
      if (sigma == 0.0) return s > 0.0 ? 1.0 : (s < 0.0 ? 0.0 : 0.5);
      double llr = 2.0 * PlantedRule::kSignAmp * s / (sigma * sigma);
      return sigmoid(llr);
    };
    double p_text = sign_prob(kText);
    double p_audio = sign_prob(kAudio);
    double p_agree = p_text * p_audio + (1.0 - p_text) * (1.0 - p_audio);

    // Posterior over u: sum of per-modality Gaussian vote log-likelihoods.
    std::vector<double> score(rule.u_values, 0.0);
    for (int m = 0; m < kNumModalities; ++m) {
      if (!kept[m]) continue;
      double amp = PlantedRule::kCueAmp[m];
      for (std::size_t u = 0; u < rule.u_values; ++u) {
        double dotv = 0.0;
        for (std::size_t k = 0; k < PlantedRule::kCueBlock; ++k) {
          dotv += dialogue.features[m].at(t, cue_offset(m) + k) * rule.codebooks[m][u][k];
        }
        // Equal-norm codewords: the quadratic term cancels across u. At zero
        // noise a huge scale turns the softmax into an exact argmax.
        score[u] += (sigma == 0.0 ? 1e12 : amp / (sigma * sigma)) * dotv;
      }
    }
    std::vector<double> qu(rule.u_values);
    softmax_with_temperature(score, 1.0, qu);

    std::vector<double> content(c, 0.0);
    for (std::size_t u = 0; u < rule.u_values; ++u) {
      content[2 * u + 1] = qu[u] * p_agree;
      content[2 * u] = qu[u] * (1.0 - p_agree);
    }

    std::int32_t sp = dialogue.speakers[t];
    double rho = config.context_copy_prob;
    if (rho > 0.0 && !last_of[sp].empty()) {
      for (std::size_t y = 0; y < c; ++y) {
        post[t][y] = (1.0 - rho) * content[y] + rho * last_of[sp][y];
      }
    } else {
      post[t] = content;
    }
    last_of[sp] = post[t];
  }
  return post;
}

double bayes_accuracy(const Dataset& dataset, const std::array<bool, kNumModalities>& kept) {
  PlantedRule rule = derive_rule(dataset.config);
  std::size_t correct = 0, total = 0;
  for (const Dialogue& d : dataset.dialogues) {
    auto post = bayes_posterior(d, dataset.config, rule, kept);
    for (std::size_t t = 0; t < d.length(); ++t) {
      std::size_t best = 0;
      for (std::size_t y = 1; y < post[t].size(); ++y) {
        if (post[t][y] > post[t][best]) best = y;
      }
      correct += (static_cast<std::int32_t>(best) == d.labels[t]) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double linear_probe_accuracy(const Dataset& train, const Dataset& test, std::size_t epochs,
                             double lr) {
  std::size_t din = train.config.d_in[0] + train.config.d_in[1] + train.config.d_in[2];
  std::size_t c = train.config.n_classes;
  std::vector<double> w(din * c, 0.0), b(c, 0.0);

  auto collect = [&](const Dataset& ds, std::vector<std::vector<double>>& xs,
                     std::vector<std::int32_t>& ys) {
    for (const Dialogue& d : ds.dialogues) {
      for (std::size_t t = 0; t < d.length(); ++t) {
        std::vector<double> x;
        x.reserve(din);
        for (int m = 0; m < kNumModalities; ++m) {
          const double* row = d.features[m].row(t);
          x.insert(x.end(), row, row + ds.config.d_in[m]);
        }
        xs.push_back(std::move(x));
        ys.push_back(d.labels[t]);
      }
    }
  };
  std::vector<std::vector<double>> xs, xt;
  std::vector<std::int32_t> ys, yt;
  collect(train, xs, ys);
  collect(test, xt, yt);

  std::vector<double> logits(c), probs(c);
  double inv_n = 1.0 / static_cast<double>(xs.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<double> gw(din * c, 0.0), gb(c, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t k = 0; k < c; ++k) logits[k] = b[k];
      for (std::size_t j = 0; j < din; ++j) {
        double xj = xs[i][j];
        if (xj == 0.0) continue;
        for (std::size_t k = 0; k < c; ++k) logits[k] += xj * w[j * c + k];
      }
      softmax_with_temperature(logits, 1.0, probs);
      for (std::size_t k = 0; k < c; ++k) {
        double g = probs[k] - (static_cast<std::int32_t>(k) == ys[i] ? 1.0 : 0.0);
        gb[k] += g * inv_n;
        for (std::size_t j = 0; j < din; ++j) gw[j * c + k] += g * xs[i][j] * inv_n;
      }
    }
    for (std::size_t j = 0; j < din * c; ++j) w[j] -= lr * gw[j];
    for (std::size_t k = 0; k < c; ++k) b[k] -= lr * gb[k];
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < xt.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) logits[k] = b[k];
    for (std::size_t j = 0; j < din; ++j) {
      for (std::size_t k = 0; k < c; ++k) logits[k] += xt[i][j] * w[j * c + k];
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits[k] > logits[best]) best = k;
    }
    if (static_cast<std::int32_t>(best) == yt[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(xt.size());
}

std::vector<DialogueBatch> make_batches(const std::vector<Dialogue>& dialogues,
                                        const std::vector<std::size_t>& order,
                                        std::size_t batch_size, std::size_t max_len,
                                        const std::array<std::size_t, kNumModalities>& d_in) {
  std::vector<DialogueBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::size_t b = std::min(batch_size, order.size() - start);
    DialogueBatch batch;
    batch.batch_size = b;
    batch.max_len = max_len;
    for (int m = 0; m < kNumModalities; ++m) {
      batch.features[m] = Tensor({b, max_len, d_in[m]}, 0.0);
    }
    batch.speakers.assign(b * max_len, 0);
    batch.labels.assign(b * max_len, -1);
    batch.mask.assign(b * max_len, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      const Dialogue& d = dialogues[order[start + i]];
      if (d.length() > max_len) {
        throw std::invalid_argument("make_batches: dialogue longer than max_len");
      }
      for (std::size_t t = 0; t < d.length(); ++t) {
        batch.speakers[i * max_len + t] = d.speakers[t];
        batch.labels[i * max_len + t] = d.labels[t];
        batch.mask[i * max_len + t] = 1.0;
        for (int m = 0; m < kNumModalities; ++m) {
          const double* src = d.features[m].row(t);
          double* dst = batch.features[m].row(i, t);
          for (std::size_t k = 0; k < d_in[m]; ++k) dst[k] = src[k];
        }
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace css
