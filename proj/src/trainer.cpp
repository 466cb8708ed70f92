#include "css/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "css/checkpoint.hpp"
#include "css/errors.hpp"

namespace css {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
}

json summary_to_json(const MetricsSummary& s) {
  return json{{"accuracy", s.accuracy},
              {"weighted_f1", s.weighted_f1},
              {"per_class_recall", s.per_class_recall},
              {"per_class_f1", s.per_class_f1},
              {"support", s.support}};
}

void zero_dropped_modalities(DialogueBatch& batch, const std::array<bool, kNumModalities>& kept) {
  for (int m = 0; m < kNumModalities; ++m) {
    if (!kept[m]) batch.features[m].zero();
  }
}

void validate_dataset_for(const TrainConfig& cfg, const Dataset& ds, const char* which) {
  std::string w(which);
  if (ds.config.n_classes != cfg.classes) {
    throw std::invalid_argument(w + " dataset: class count does not match config");
  }
  for (int m = 0; m < kNumModalities; ++m) {
    if (ds.config.d_in[m] != cfg.d_in[m]) {
      throw std::invalid_argument(w + " dataset: input width does not match config");
    }
  }
  if (ds.config.max_len > cfg.max_len) {
    throw std::invalid_argument(w + " dataset: dialogues exceed configured max_len");
  }
  if (ds.config.n_speakers > cfg.n_speakers) {
    throw std::invalid_argument(w + " dataset: more speakers than the embedding table");
  }
}

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
  json j{{"d", c.d},
         {"heads", c.heads},
         {"d_ff", c.d_ff},
         {"p", c.p},
         {"r", c.r},
         {"classes", c.classes},
         {"d_in_text", c.d_in[kText]},
         {"d_in_audio", c.d_in[kAudio]},
         {"d_in_visual", c.d_in[kVisual]},
         {"max_len", c.max_len},
         {"n_speakers", c.n_speakers},
         {"lr", c.lr},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"eps", c.eps},
         {"weight_decay", c.weight_decay},
         {"dropout", c.dropout},
         {"temperature", c.temperature},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"pgm_on", c.pgm_on},
         {"spf_on", c.spf_on},
         {"mae_on", c.mae_on},
         {"iae_on", c.iae_on},
         {"msp_on", c.msp_on},
         {"use_l2", c.use_l2},
         {"use_l3", c.use_l3},
         {"distill_teacher_grad", c.distill_teacher_grad},
         {"gamma_override", c.gamma_override},
         {"train_data", c.train_data},
         {"eval_data", c.eval_data},
         {"out_dir", c.out_dir}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.p = j.at("p").get<std::size_t>();
  c.r = j.at("r").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.d_in[kText] = j.at("d_in_text").get<std::size_t>();
  c.d_in[kAudio] = j.at("d_in_audio").get<std::size_t>();
  c.d_in[kVisual] = j.at("d_in_visual").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.n_speakers = j.at("n_speakers").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.pgm_on = j.at("pgm_on").get<bool>();
  c.spf_on = j.at("spf_on").get<bool>();
  c.mae_on = j.at("mae_on").get<bool>();
  c.iae_on = j.at("iae_on").get<bool>();
  c.msp_on = j.at("msp_on").get<bool>();
  c.use_l2 = j.at("use_l2").get<bool>();
  c.use_l3 = j.at("use_l3").get<bool>();
  c.distill_teacher_grad = j.at("distill_teacher_grad").get<bool>();
  c.gamma_override = j.at("gamma_override").get<std::vector<double>>();
  c.train_data = j.at("train_data").get<std::string>();
  c.eval_data = j.at("eval_data").get<std::string>();
  c.out_dir = j.at("out_dir").get<std::string>();
  if (!c.gamma_override.empty() && c.gamma_override.size() != kNumTasks) {
    throw std::invalid_argument("TrainConfig: gamma_override must have 3 entries or be empty");
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from_json(ss.str());
}

void apply_env_overrides(TrainConfig& cfg) {
  if (const char* s = std::getenv("CSS_SEED")) {
    cfg.seed = std::strtoull(s, nullptr, 10);
  }
}

ModelConfig model_config(const TrainConfig& cfg) {
  ModelConfig mc;
  mc.d = cfg.d;
  mc.heads = cfg.heads;
  mc.d_ff = cfg.d_ff;
  mc.p = cfg.p;
  mc.r = cfg.r;
  mc.classes = cfg.classes;
  mc.d_in = cfg.d_in;
  mc.max_len = cfg.max_len;
  mc.n_speakers = cfg.n_speakers;
  mc.dropout = cfg.dropout;
  mc.temperature = cfg.temperature;
  mc.spf_on = cfg.spf_on;
  mc.mae_on = cfg.mae_on;
  mc.iae_on = cfg.iae_on;
  mc.msp_on = cfg.msp_on;
  mc.use_l2 = cfg.use_l2;
  mc.use_l3 = cfg.use_l3;
  mc.distill_teacher_grad = cfg.distill_teacher_grad;
  return mc;
}

EvalResult evaluate_model(const Model& model, const Dataset& ds, std::size_t batch_size,
                          const std::array<bool, kNumModalities>& kept) {
  std::vector<std::size_t> order(ds.dialogues.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto batches = make_batches(ds.dialogues, order, batch_size, model.config().max_len,
                              model.config().d_in);
  ConfusionMatrix cm(model.config().classes);
  LossReport mean;
  double total_valid = 0.0;
  for (auto& batch : batches) {
    zero_dropped_modalities(batch, kept);
    ForwardState state;
    model.forward(batch, state, nullptr);
    LossReport rep = model.compute_losses(batch, state);
    auto preds = model.predict(state);
    cm.accumulate(preds, batch.labels, batch.mask);
    double v = batch.valid_count();
    total_valid += v;
    mean.l1 += rep.l1 * v;
    mean.l2 += rep.l2 * v;
    mean.l3 += rep.l3 * v;
    for (int m = 0; m < kNumModalities; ++m) {
      mean.l2_m[m] += rep.l2_m[m] * v;
      mean.l3_m[m] += rep.l3_m[m] * v;
    }
  }
  if (total_valid > 0.0) {
    mean.l1 /= total_valid;
    mean.l2 /= total_valid;
    mean.l3 /= total_valid;
    for (int m = 0; m < kNumModalities; ++m) {
      mean.l2_m[m] /= total_valid;
      mean.l3_m[m] /= total_valid;
    }
  }
  return EvalResult{summarize(cm), mean};
}

MetricsSummary modality_dropout_eval(const Model& model, const Dataset& ds,
                                     std::size_t batch_size,
                                     const std::array<bool, kNumModalities>& kept) {
  if (!kept[0] && !kept[1] && !kept[2]) {
    throw std::invalid_argument("modality_dropout_eval: empty kept set");
  }
  return evaluate_model(model, ds, batch_size, kept).metrics;
}

RunReport train(const TrainConfig& cfg, std::unique_ptr<Model>* model_out) {
  Dataset train_ds = read_dataset(cfg.train_data);
  validate_dataset_for(cfg, train_ds, "train");
  Dataset eval_ds;
  bool has_eval = !cfg.eval_data.empty();
  if (has_eval) {
    eval_ds = read_dataset(cfg.eval_data);
    validate_dataset_for(cfg, eval_ds, "eval");
  }

  auto model = std::make_unique<Model>(model_config(cfg), cfg.seed);
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = cfg.beta1;
  ac.beta2 = cfg.beta2;
  ac.eps = cfg.eps;
  ac.weight_decay = cfg.weight_decay;
  Adam adam(ac, model->params());

  PgmOptions opts;
  opts.use_qp = cfg.pgm_on;
  opts.gamma_override = cfg.gamma_override;

  Rng shuffle_root(cfg.seed, 7);
  Rng dropout_root(cfg.seed, 9);

  RunReport report;
  report.has_eval = has_eval;
  if (has_eval) {
    report.initial_metrics = evaluate_model(*model, eval_ds, cfg.batch_size).metrics;
    report.best_metrics = report.initial_metrics;
  }

  std::vector<std::size_t> order(train_ds.dialogues.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t global_step = 0;
  double best_acc = -1.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = shuffle_root.split(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = shuffle_rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }
    auto batches = make_batches(train_ds.dialogues, order, cfg.batch_size, cfg.max_len, cfg.d_in);
    Rng drop_rng = dropout_root.split(epoch);

    EpochRow row;
    row.epoch = epoch;
    std::size_t steps_in_epoch = 0;
    for (auto& batch : batches) {
      ForwardState state;
      StepResult sr = pgm_step(*model, batch, adam, opts, state,
                               cfg.dropout > 0.0 ? &drop_rng : nullptr);
      if (!std::isfinite(sr.losses.l1) || !std::isfinite(sr.losses.l2) ||
          !std::isfinite(sr.losses.l3)) {
        throw non_finite_error("train: non-finite loss at step " + std::to_string(global_step));
      }
      row.l1 += sr.losses.l1;
      row.l2 += sr.losses.l2;
      row.l3 += sr.losses.l3;
      row.composite += sr.composite;
      for (int m = 0; m < kNumModalities; ++m) {
        row.l2_m[m] += sr.losses.l2_m[m];
        row.l3_m[m] += sr.losses.l3_m[m];
      }
      if (cfg.pgm_on) {
        StepRow srow;
        srow.step = global_step;
        srow.gamma = sr.gamma;
        srow.direction_norm = sr.direction_norm;
        srow.fallback = sr.fallback;
        srow.l1 = sr.losses.l1;
        srow.l2 = sr.losses.l2;
        srow.l3 = sr.losses.l3;
        srow.mgda_margin = sr.mgda_margin;
        report.steps.push_back(srow);
      }
      ++global_step;
      ++steps_in_epoch;
    }
    if (steps_in_epoch > 0) {
      double inv = 1.0 / static_cast<double>(steps_in_epoch);
      row.l1 *= inv;
      row.l2 *= inv;
      row.l3 *= inv;
      row.composite *= inv;
      for (int m = 0; m < kNumModalities; ++m) {
        row.l2_m[m] *= inv;
        row.l3_m[m] *= inv;
      }
    }
    if (has_eval) {
      EvalResult ev = evaluate_model(*model, eval_ds, cfg.batch_size);
      row.eval_accuracy = ev.metrics.accuracy;
      row.eval_weighted_f1 = ev.metrics.weighted_f1;
      report.final_metrics = ev.metrics;
      if (ev.metrics.accuracy > best_acc) {
        best_acc = ev.metrics.accuracy;
        report.best_metrics = ev.metrics;
        report.best_epoch = epoch;
      }
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(row);
  }
  if (cfg.epochs == 0 && has_eval) {
    report.final_metrics = report.initial_metrics;
  }

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::filesystem::path dir(cfg.out_dir);
    write_text_file((dir / "report.json").string(), run_report_to_json(cfg, report));
    write_text_file((dir / "curves.csv").string(), curves_to_csv(report));
    if (cfg.pgm_on) {
      write_text_file((dir / "gamma.csv").string(), gamma_log_to_csv(report));
    }
    std::ostringstream timing;
    timing << "epoch,seconds\n";
    for (const auto& row : report.epochs) {
      timing << row.epoch << "," << fmt_double(row.wall_seconds) << "\n";
    }
    write_text_file((dir / "timing.csv").string(), timing.str());
    save_checkpoint((dir / "checkpoint.bin").string(), train_config_to_json(cfg),
                    model->params());
  }
  if (model_out) *model_out = std::move(model);
  return report;
}

TrainConfig ablation_config(const TrainConfig& base, const std::string& variant) {
  std::string v;
  for (char ch : variant) {
    if (ch == ' ' || ch == '/') continue;
    v += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  // Accept "w/o X", "no-x" and bare "x" spellings.
  for (const char* prefix : {"wo", "no-", "no"}) {
    std::string p(prefix);
    if (v.rfind(p, 0) == 0 && v.size() > p.size()) {
      v = v.substr(p.size());
      break;
    }
  }
  TrainConfig cfg = base;
  if (v == "spf") {
    cfg.spf_on = false;
  } else if (v == "msp") {
    cfg.msp_on = false;
  } else if (v == "pgm") {
    cfg.pgm_on = false;
  } else if (v == "mae") {
    cfg.mae_on = false;
  } else if (v == "iae") {
    cfg.iae_on = false;
  } else if (v == "l2") {
    cfg.use_l2 = false;
  } else if (v == "l3") {
    cfg.use_l3 = false;
  } else {
    throw std::invalid_argument("unknown ablation variant: " + variant);
  }
  return cfg;
}

RunReport ablate(const TrainConfig& base, const std::string& variant,
                 std::unique_ptr<Model>* model_out) {
  return train(ablation_config(base, variant), model_out);
}

std::string run_report_to_json(const TrainConfig& cfg, const RunReport& report) {
  json epochs = json::array();
  for (const auto& row : report.epochs) {
    json e{{"epoch", row.epoch},
           {"l1", row.l1},
           {"l2", row.l2},
           {"l3", row.l3},
           {"composite", row.composite},
           {"l2_per_modality", row.l2_m},
           {"l3_per_modality", row.l3_m}};
    if (report.has_eval) {
      e["eval_accuracy"] = row.eval_accuracy;
      e["eval_weighted_f1"] = row.eval_weighted_f1;
    }
    epochs.push_back(std::move(e));
  }
  json j{{"config", json::parse(train_config_to_json(cfg))}, {"epochs", std::move(epochs)}};
  if (report.has_eval) {
    j["initial_metrics"] = summary_to_json(report.initial_metrics);
    j["final_metrics"] = summary_to_json(report.final_metrics);
    j["best_metrics"] = summary_to_json(report.best_metrics);
    j["best_epoch"] = report.best_epoch;
  }
  return j.dump(2);
}

std::string curves_to_csv(const RunReport& report) {
  std::ostringstream out;
  out << "epoch,l1,l2,l3,composite,l2_text,l2_audio,l2_visual,l3_text,l3_audio,l3_visual,"
         "eval_accuracy,eval_weighted_f1\n";
  for (const auto& r : report.epochs) {
    out << r.epoch << "," << fmt_double(r.l1) << "," << fmt_double(r.l2) << ","
        << fmt_double(r.l3) << "," << fmt_double(r.composite);
    for (int m = 0; m < kNumModalities; ++m) out << "," << fmt_double(r.l2_m[m]);
    for (int m = 0; m < kNumModalities; ++m) out << "," << fmt_double(r.l3_m[m]);
    out << "," << fmt_double(r.eval_accuracy) << "," << fmt_double(r.eval_weighted_f1) << "\n";
  }
  return out.str();
}

std::string gamma_log_to_csv(const RunReport& report) {
  std::ostringstream out;
  out << "step,gamma1,gamma2,gamma3,direction_norm,fallback,l1,l2,l3\n";
  for (const auto& s : report.steps) {
    out << s.step << "," << fmt_double(s.gamma[0]) << "," << fmt_double(s.gamma[1]) << ","
        << fmt_double(s.gamma[2]) << "," << fmt_double(s.direction_norm) << ","
        << (s.fallback ? 1 : 0) << "," << fmt_double(s.l1) << "," << fmt_double(s.l2) << ","
        << fmt_double(s.l3) << "\n";
  }
  return out.str();
}

}  // namespace css
