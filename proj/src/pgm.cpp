#include "css/pgm.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "css/ops.hpp"

namespace css {

GradientBundle make_bundle(std::vector<std::vector<double>> raw, double eps) {
  GradientBundle b;
  b.grads = std::move(raw);
  b.norms.resize(b.grads.size());
  b.degenerate.assign(b.grads.size(), 0);
  for (std::size_t i = 0; i < b.grads.size(); ++i) {
    double n = l2_norm(b.grads[i]);
    b.norms[i] = n;
    if (n < eps) {
      b.degenerate[i] = 1;
      for (double& v : b.grads[i]) v = 0.0;
    } else {
      for (double& v : b.grads[i]) v /= n;
    }
  }
  return b;
}

GradientBundle collect_task_gradients(Model& model, const DialogueBatch& batch,
                                      ForwardState& state, const std::vector<int>& tasks,
                                      const std::vector<std::size_t>& shared_entries) {
  std::vector<std::vector<double>> raw;
  raw.reserve(tasks.size());
  for (int t : tasks) {
    model.backward_task(batch, state, t);
    raw.push_back(model.params().flatten_grads(shared_entries));
  }
  return make_bundle(std::move(raw));
}

std::vector<double> build_gram(const GradientBundle& bundle) {
  std::size_t k = bundle.grads.size();
  std::vector<double> q(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t l = i; l < k; ++l) {
      double v = dot(bundle.grads[i], bundle.grads[l]);
      q[i * k + l] = v;
      q[l * k + i] = v;
    }
  }
  return q;
}

namespace {

double qp_objective(const Eigen::MatrixXd& q, const std::vector<double>& gamma) {
  std::size_t k = gamma.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) acc += gamma[i] * q(i, j) * gamma[j];
  }
  return 0.5 * acc;
}

bool lex_less(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

}  // namespace

TaskWeights solve_simplex_qp(const std::vector<double>& q, std::size_t k,
                             const std::vector<char>& degenerate) {
  if (k == 0 || q.size() != k * k) throw std::invalid_argument("solve_simplex_qp: bad Q shape");
  Eigen::MatrixXd Q(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) Q(i, j) = q[i * k + j];
  }
  double asym = (Q - Q.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9) throw std::invalid_argument("solve_simplex_qp: Q is not symmetric");
  Q = 0.5 * (Q + Q.transpose()).eval();

  // Clip tiny negative eigenvalues; anything below the tolerance means the
  // caller did not pass a Gram matrix.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
  if (es.eigenvalues().minCoeff() < -1e-8) {
    throw std::invalid_argument("solve_simplex_qp: Q is not numerically PSD");
  }
  Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
  Q = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();

  std::vector<char> dead(k, 0);
  for (std::size_t i = 0; i < degenerate.size() && i < k; ++i) dead[i] = degenerate[i];

  TaskWeights best;
  bool have_best = false;
  double best_norm2 = 0.0;

  for (std::size_t mask = 1; mask < (std::size_t(1) << k); ++mask) {
    std::vector<std::size_t> support;
    bool uses_dead = false;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (std::size_t(1) << i)) {
        support.push_back(i);
        if (dead[i]) uses_dead = true;
      }
    }
    if (uses_dead) continue;
    std::size_t s = support.size();

    // KKT system of the equality-constrained subproblem, in symmetric form:
    // [Q_SS 1; 1^T 0] (gamma_S; nu) = (0; 1). Minimum-norm least squares picks
    // the smallest solution on rank-deficient supports (duplicated gradients);
    // inconsistent systems are skipped.
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
    for (std::size_t a = 0; a < s; ++a) {
      for (std::size_t b = 0; b < s; ++b) kkt(a, b) = Q(support[a], support[b]);
      kkt(a, s) = 1.0;
      kkt(s, a) = 1.0;
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(s + 1);
    rhs(s) = 1.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(kkt, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-10);
    Eigen::VectorXd sol = svd.solve(rhs);
    if ((kkt * sol - rhs).cwiseAbs().maxCoeff() > 1e-9) continue;

    std::vector<double> gamma(k, 0.0);
    bool feasible = true;
    double sum = 0.0;
    for (std::size_t a = 0; a < s; ++a) {
      double v = sol(a);
      if (v < -1e-12) {
        feasible = false;
        break;
      }
      v = std::max(v, 0.0);
      gamma[support[a]] = v;
      sum += v;
    }
    if (!feasible || sum <= 0.0) continue;
    for (double& v : gamma) v /= sum;

    TaskWeights cand;
    cand.gamma = gamma;
    cand.objective = qp_objective(Q, gamma);
    double norm2 = dot(gamma, gamma);

    if (!have_best) {
      best = cand;
      best_norm2 = norm2;
      have_best = true;
      continue;
    }
    if (cand.objective < best.objective - 1e-12) {
      best = cand;
      best_norm2 = norm2;
    } else if (std::fabs(cand.objective - best.objective) <= 1e-12) {
      if (norm2 < best_norm2 - 1e-12 ||
          (std::fabs(norm2 - best_norm2) <= 1e-12 && lex_less(cand.gamma, best.gamma))) {
        best = cand;
        best_norm2 = norm2;
      }
    }
  }

  if (!have_best) {
    best.gamma.assign(k, 1.0 / static_cast<double>(k));
    best.objective = qp_objective(Q, best.gamma);
    best.fallback_used = true;
  }
  return best;
}

double composite_loss(const std::array<double, kNumTasks>& gamma, const LossReport& losses) {
  return gamma[0] * losses.l1 + gamma[1] * losses.l2 + gamma[2] * losses.l3;
}

StepResult pgm_step(Model& model, const DialogueBatch& batch, Adam& optimizer,
                    const PgmOptions& opts, ForwardState& state, Rng* dropout_rng) {
  if (batch.valid_count() <= 0.0) {
    throw std::invalid_argument("pgm_step: batch is empty after masking");
  }
  StepResult res;
  model.forward(batch, state, dropout_rng);
  res.losses = model.compute_losses(batch, state);

  std::vector<int> tasks = model.active_tasks();
  std::size_t k = tasks.size();
  std::vector<std::size_t> shared = model.shared_param_indices();
  std::vector<std::size_t> all = model.params().all_indices();

  // One backward per active loss; keep the raw full-parameter gradients for the
  // final recombination and the shared-parameter slice for the QP.
  std::vector<std::vector<double>> raw_full(k);
  std::vector<std::vector<double>> raw_shared(k);
  for (std::size_t i = 0; i < k; ++i) {
    model.backward_task(batch, state, tasks[i]);
    raw_full[i] = model.params().flatten_grads(all);
    raw_shared[i] = model.params().flatten_grads(shared);
  }
  GradientBundle bundle = make_bundle(std::move(raw_shared));

  bool all_dead = true;
  bool any_dead = false;
  for (char c : bundle.degenerate) {
    all_dead = all_dead && c;
    any_dead = any_dead || c;
  }

  std::vector<double> gamma_active(k, 0.0);
  if (opts.use_qp) {
    if (!opts.gamma_override.empty()) {
      double sum = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        gamma_active[i] = opts.gamma_override[tasks[i]];
        sum += gamma_active[i];
      }
      if (sum <= 0.0) throw std::invalid_argument("pgm_step: bad gamma override");
      for (double& v : gamma_active) v /= sum;
    } else if (all_dead) {
      res.fallback = true;
    } else {
      std::vector<double> q = build_gram(bundle);
      TaskWeights tw = solve_simplex_qp(q, k, bundle.degenerate);
      gamma_active = tw.gamma;
      res.qp_objective = tw.objective;
      res.fallback = tw.fallback_used;
    }
  } else {
    if (!opts.gamma_override.empty()) {
      double sum = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        gamma_active[i] = opts.gamma_override[tasks[i]];
        sum += gamma_active[i];
      }
      if (sum <= 0.0) throw std::invalid_argument("pgm_step: bad gamma override");
      for (double& v : gamma_active) v /= sum;
    } else {
      gamma_active.assign(k, 1.0 / static_cast<double>(k));
    }
  }

  // Pareto direction in the normalized shared-gradient space.
  std::vector<double> direction(shared.empty() ? 0 : bundle.grads[0].size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    axpy(gamma_active[i], bundle.grads[i], direction);
  }
  res.direction_norm = l2_norm(direction);

  if (opts.use_qp && opts.gamma_override.empty() &&
      (res.direction_norm < kDirectionEps || all_dead || any_dead)) {
    // Opposing or vanished gradients: privilege the primary classification loss.
    gamma_active.assign(k, 0.0);
    gamma_active[0] = 1.0;
    res.fallback = true;
    direction.assign(direction.size(), 0.0);
    axpy(1.0, bundle.grads[0], direction);
    res.direction_norm = l2_norm(direction);
  }

  if (!res.fallback && opts.use_qp) {
    double dd = dot(direction, direction);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
      margin = std::min(margin, dot(direction, bundle.grads[i]) - dd);
    }
    res.mgda_margin = margin;
  }

  for (std::size_t i = 0; i < k; ++i) res.gamma[tasks[i]] = gamma_active[i];
  res.composite = composite_loss(res.gamma, res.losses);

  // Recombine raw task gradients; by linearity this equals the backward pass of
  // the composite loss with gamma held constant.
  std::vector<double> combined(raw_full[0].size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) axpy(gamma_active[i], raw_full[i], combined);
  model.params().write_grads(all, combined);
  optimizer.step(model.params());
  return res;
}

}  // namespace css
