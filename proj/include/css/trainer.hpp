#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "css/metrics.hpp"
#include "css/model.hpp"
#include "css/pgm.hpp"
#include "css/synthdata.hpp"

namespace css {

/// Flat run configuration; the JSON form lists every field explicitly so runs
/// are reproducible from the file alone.
struct TrainConfig {
  // model dims
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t p = 3;
  std::size_t r = 8;
  std::size_t classes = 4;
  std::array<std::size_t, kNumModalities> d_in{12, 12, 12};
  std::size_t max_len = 12;
  std::size_t n_speakers = 8;
  // optimizer
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  // regularization / distillation
  double dropout = 0.1;
  double temperature = 1.0;
  // loop
  std::size_t epochs = 12;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  // mode flags
  bool pgm_on = true;
  bool spf_on = true;
  bool mae_on = true;
  bool iae_on = true;
  bool msp_on = true;
  bool use_l2 = true;
  bool use_l3 = true;
  bool distill_teacher_grad = false;
  std::vector<double> gamma_override;  // empty, or 3 fixed task weights
  // paths
  std::string train_data;
  std::string eval_data;
  std::string out_dir;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);
/// CSS_SEED, when set, overrides the config seed.
void apply_env_overrides(TrainConfig& cfg);

ModelConfig model_config(const TrainConfig& cfg);

struct StepRow {
  std::size_t step = 0;
  std::array<double, kNumTasks> gamma{};
  double direction_norm = 0.0;
  bool fallback = false;
  double l1 = 0.0, l2 = 0.0, l3 = 0.0;
  double mgda_margin = 0.0;  // not serialized; used by diagnostics
};

struct EpochRow {
  std::size_t epoch = 0;
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, composite = 0.0;
  std::array<double, kNumTasks> l2_m{};
  std::array<double, kNumTasks> l3_m{};
  double eval_accuracy = 0.0;
  double eval_weighted_f1 = 0.0;
  double wall_seconds = 0.0;  // written to timing.csv only, never to report.json
};

struct RunReport {
  std::vector<EpochRow> epochs;
  std::vector<StepRow> steps;  // populated only when pgm_on
  MetricsSummary initial_metrics;
  MetricsSummary final_metrics;
  MetricsSummary best_metrics;
  std::size_t best_epoch = 0;
  bool has_eval = false;
};

struct EvalResult {
  MetricsSummary metrics;
  LossReport mean_losses;
};

/// Evaluation forward passes (no dropout) over a dataset; metrics over valid
/// positions plus mask-weighted mean losses.
EvalResult evaluate_model(const Model& model, const Dataset& ds, std::size_t batch_size,
                          const std::array<bool, kNumModalities>& kept = {true, true, true});

/// Withheld modalities are zeroed at the input; rejects an empty kept set.
MetricsSummary modality_dropout_eval(const Model& model, const Dataset& ds,
                                     std::size_t batch_size,
                                     const std::array<bool, kNumModalities>& kept);

/// Full training run. When cfg.out_dir is set, writes report.json, curves.csv,
/// gamma.csv (PGM runs), timing.csv and checkpoint.bin there. `model_out`, when
/// given, receives the trained model for further probing.
RunReport train(const TrainConfig& cfg, std::unique_ptr<Model>* model_out = nullptr);

/// Named single-component ablations; accepts "no-spf", "no-msp", "no-pgm",
/// "no-mae", "no-iae", "no-l2", "no-l3" (or the "w/o X" spellings).
TrainConfig ablation_config(const TrainConfig& base, const std::string& variant);
RunReport ablate(const TrainConfig& base, const std::string& variant,
                 std::unique_ptr<Model>* model_out = nullptr);

/// report.json payload for a finished run (no wall-clock content).
std::string run_report_to_json(const TrainConfig& cfg, const RunReport& report);
std::string curves_to_csv(const RunReport& report);
std::string gamma_log_to_csv(const RunReport& report);

}  // namespace css
