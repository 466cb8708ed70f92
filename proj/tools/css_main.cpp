// Command-line front end: dataset generation, training, evaluation, ablations,
// gradient checking and the QP solver benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "css/checkpoint.hpp"
#include "css/gradcheck_suites.hpp"
#include "css/metrics.hpp"
#include "css/model.hpp"
#include "css/pgm.hpp"
#include "css/synthdata.hpp"
#include "css/trainer.hpp"

namespace {

int cmd_gen(const std::string& config_path, const std::string& out_path) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "cannot open " << config_path << "\n";
    return 1;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str());
  css::GenConfig cfg;
  cfg.n_dialogues = j.at("n_dialogues").get<std::size_t>();
  cfg.max_len = j.at("max_len").get<std::size_t>();
  cfg.n_speakers = j.at("n_speakers").get<std::size_t>();
  cfg.d_in[css::kText] = j.at("d_in_text").get<std::size_t>();
  cfg.d_in[css::kAudio] = j.at("d_in_audio").get<std::size_t>();
  cfg.d_in[css::kVisual] = j.at("d_in_visual").get<std::size_t>();
  cfg.n_classes = j.at("n_classes").get<std::size_t>();
  cfg.noise = j.at("noise").get<double>();
  cfg.context_copy_prob = j.at("context_copy_prob").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (const char* s = std::getenv("CSS_SEED")) cfg.seed = std::strtoull(s, nullptr, 10);
  css::Dataset ds = css::generate(cfg);
  css::write_dataset(out_path, ds);
  std::cout << "wrote " << ds.dialogues.size() << " dialogues to " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& eval_data, const std::string& out_dir) {
  css::TrainConfig cfg = css::load_train_config(config_path);
  css::apply_env_overrides(cfg);
  if (!data.empty()) cfg.train_data = data;
  if (!eval_data.empty()) cfg.eval_data = eval_data;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  css::RunReport report = css::train(cfg);
  if (!report.epochs.empty()) {
    const auto& last = report.epochs.back();
    std::cout << "final train losses: l1=" << last.l1 << " l2=" << last.l2 << " l3=" << last.l3
              << "\n";
  }
  if (report.has_eval) {
    std::cout << "final eval accuracy=" << report.final_metrics.accuracy
              << " weighted_f1=" << report.final_metrics.weighted_f1 << " (best epoch "
              << report.best_epoch << ")\n";
  }
  if (!cfg.out_dir.empty()) std::cout << "artifacts in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data) {
  css::CheckpointData ckpt = css::load_checkpoint(model_path);
  css::TrainConfig cfg = css::train_config_from_json(ckpt.config_json);
  auto model = std::make_unique<css::Model>(css::model_config(cfg), cfg.seed);
  css::restore_params(ckpt, model->params());
  css::Dataset ds = css::read_dataset(data);
  css::EvalResult res = css::evaluate_model(*model, ds, cfg.batch_size);
  std::cout << css::metrics_to_kv(res.metrics);
  std::cout << "eval_l1 " << res.mean_losses.l1 << "\n";
  std::cout << "eval_l2 " << res.mean_losses.l2 << "\n";
  std::cout << "eval_l3 " << res.mean_losses.l3 << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& variant) {
  css::TrainConfig base = css::load_train_config(config_path);
  css::apply_env_overrides(base);
  css::RunReport report = css::ablate(base, variant);
  std::cout << "variant " << variant;
  if (report.has_eval) {
    std::cout << ": accuracy=" << report.final_metrics.accuracy
              << " weighted_f1=" << report.final_metrics.weighted_f1;
  }
  std::cout << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  std::vector<css::gradcheck::SuiteResult> results;
  if (module.empty()) {
    results = css::gradcheck::run_all(12345);
  } else {
    results.push_back(css::gradcheck::run_suite(module, 50, 12345));
  }
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-12s trials=%-3zu max_rel_err=%.3e  %s  (%.2fs)\n", r.name.c_str(), r.trials,
                r.max_rel_err, r.pass ? "pass" : "FAIL", r.seconds);
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

int cmd_qpbench(std::size_t trials, double grid) {
  css::Rng rng(2024);
  double worst_gap = 0.0, worst_kkt = 0.0;
  std::size_t steps = static_cast<std::size_t>(1.0 / grid);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    // Random PSD Gram matrix of three unit-norm gradients.
    std::vector<std::vector<double>> g(3, std::vector<double>(4));
    for (auto& row : g) {
      double n = 0.0;
      for (auto& v : row) {
        v = rng.next_gaussian();
        n += v * v;
      }
      n = std::sqrt(n);
      for (auto& v : row) v /= n;
    }
    std::vector<double> q(9);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double d = 0.0;
        for (int k = 0; k < 4; ++k) d += g[i][k] * g[j][k];
        q[i * 3 + j] = d;
      }
    }
    css::TaskWeights tw = css::solve_simplex_qp(q, 3);
    double grid_best = 1e300;
    for (std::size_t a = 0; a <= steps; ++a) {
      for (std::size_t b = 0; a + b <= steps; ++b) {
        double g1 = grid * static_cast<double>(a);
        double g2 = grid * static_cast<double>(b);
        double g3 = 1.0 - g1 - g2;
        double val = 0.0;
        double gamma[3] = {g1, g2, g3};
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) val += gamma[i] * q[i * 3 + j] * gamma[j];
        }
        grid_best = std::min(grid_best, 0.5 * val);
      }
    }
    worst_gap = std::max(worst_gap, tw.objective - grid_best);
    // KKT residual: stationarity on the support, dual feasibility off it.
    double nu = 2.0 * tw.objective;
    double kkt = 0.0;
    for (int i = 0; i < 3; ++i) {
      double qi = 0.0;
      for (int j = 0; j < 3; ++j) qi += q[i * 3 + j] * tw.gamma[j];
      if (tw.gamma[i] > 1e-12) {
        kkt = std::max(kkt, std::fabs(qi - nu));
      } else {
        kkt = std::max(kkt, std::max(0.0, nu - qi));
      }
    }
    worst_kkt = std::max(worst_kkt, kkt);
  }
  std::printf("qpbench: trials=%zu grid=%.4f\n", trials, grid);
  std::printf("max(objective - grid objective) = %.3e (<= 1e-6 expected)\n", worst_gap);
  std::printf("max KKT residual                = %.3e (< 1e-8 expected)\n", worst_kkt);
  bool ok = worst_gap <= 1e-6 && worst_kkt < 1e-8;
  std::printf("%s\n", ok ? "pass" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-space synergy trainer: synthetic multimodal dialogue classification"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, eval_path, out_dir, model_path, variant, module;
  std::size_t trials = 200;
  double grid = 0.01;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset file");
  gen->add_option("--config", config_path, "generator config (json)")->required();
  gen->add_option("--out", out_path, "output dataset path")->required();

  auto* train = app.add_subcommand("train", "train a model and write run artifacts");
  train->add_option("--config", config_path, "train config (json)")->required();
  train->add_option("--data", data_path, "training dataset (overrides config)");
  train->add_option("--eval", eval_path, "eval dataset (overrides config)");
  train->add_option("--out", out_dir, "output directory (overrides config)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--model", model_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset path")->required();

  auto* ablate = app.add_subcommand("ablate", "train a named single-component ablation");
  ablate->add_option("--config", config_path, "train config (json)")->required();
  ablate->add_option("--variant", variant, "no-spf|no-msp|no-pgm|no-mae|no-iae|no-l2|no-l3")
      ->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--module", module, "numeric|encoder|spf|objectives|model (default all)");

  auto* qpbench = app.add_subcommand("qpbench", "simplex QP solver vs brute-force grid search");
  qpbench->add_option("--trials", trials, "number of random Gram matrices");
  qpbench->add_option("--grid", grid, "grid step over the simplex");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(config_path, out_path);
    if (train->parsed()) return cmd_train(config_path, data_path, eval_path, out_dir);
    if (eval->parsed()) return cmd_eval(model_path, data_path);
    if (ablate->parsed()) return cmd_ablate(config_path, variant);
    if (gradcheck->parsed()) return cmd_gradcheck(module);
    if (qpbench->parsed()) return cmd_qpbench(trials, grid);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
