#pragma once

#include <array>
#include <vector>

#include "css/adam.hpp"
#include "css/model.hpp"

namespace css {

/// Flattened per-task gradients over the shared parameters, L2-normalized, with
/// the original norms kept and near-zero gradients flagged instead of divided.
struct GradientBundle {
  std::vector<std::vector<double>> grads;  // k rows, unit norm unless degenerate
  std::vector<double> norms;               // pre-normalization L2 norms
  std::vector<char> degenerate;            // 1 where norm < eps
};

inline constexpr double kDegenerateEps = 1e-12;  // gradient-norm floor
inline constexpr double kDirectionEps = 1e-8;    // Pareto-direction norm floor

/// Normalizes raw rows in place semantics; rows with norm < eps are flagged and
/// left as zeros.
GradientBundle make_bundle(std::vector<std::vector<double>> raw, double eps = kDegenerateEps);

/// Three backward passes over the model, one per active task, flattened over
/// the given registry entries in registry order.
GradientBundle collect_task_gradients(Model& model, const DialogueBatch& batch,
                                      ForwardState& state, const std::vector<int>& tasks,
                                      const std::vector<std::size_t>& shared_entries);

/// Q(i,l) = <g_i, g_l>, row-major k x k, symmetric by construction.
std::vector<double> build_gram(const GradientBundle& bundle);

struct TaskWeights {
  std::vector<double> gamma;  // simplex point over the k tasks
  double objective = 0.0;     // 0.5 * gamma^T Q gamma on the clipped Q
  bool fallback_used = false; // every KKT support was skipped
};

/// Exact minimizer of 0.5 gamma^T Q gamma over the probability simplex by
/// enumerating all non-empty supports and solving each equality-constrained
/// KKT system as a minimum-norm least-squares problem (so flat optima resolve
/// to the smallest-norm weights). Candidates are compared by objective, then
/// ||gamma||_2, then lexicographic order. Degenerate tasks are pinned to zero.
/// Q must be symmetric and numerically PSD; eigenvalues down to -1e-8 are
/// clipped to zero, anything lower is rejected.
TaskWeights solve_simplex_qp(const std::vector<double>& q, std::size_t k,
                             const std::vector<char>& degenerate = {});

/// gamma . (l1, l2, l3); gamma is treated as a constant w.r.t. the parameters.
double composite_loss(const std::array<double, kNumTasks>& gamma, const LossReport& losses);

struct PgmOptions {
  bool use_qp = true;                  // false: fixed weights (uniform or override)
  std::vector<double> gamma_override;  // size kNumTasks when set
};

struct StepResult {
  std::array<double, kNumTasks> gamma{};  // dense over the 3 tasks, 0 when inactive
  double direction_norm = 0.0;            // ||sum gamma_i g_i|| in normalized space
  bool fallback = false;
  double qp_objective = 0.0;
  double mgda_margin = 0.0;  // min_i <d,g_i> - <d,d>, meaningful when not fallback
  LossReport losses;
  double composite = 0.0;
};

/// One training step: forward, a backward pass per active loss, the simplex QP
/// on the shared-parameter Gram matrix (or fixed weights), recombination of the
/// raw task gradients with gamma, and a single optimizer step. When the QP's
/// combined direction has near-zero norm or every task gradient is degenerate,
/// gamma falls back to (1, 0, 0).
StepResult pgm_step(Model& model, const DialogueBatch& batch, Adam& optimizer,
                    const PgmOptions& opts, ForwardState& state, Rng* dropout_rng = nullptr);

}  // namespace css
