#pragma once

#include <array>
#include <memory>
#include <vector>

#include "css/batch.hpp"
#include "css/encoder.hpp"
#include "css/objectives.hpp"
#include "css/param_store.hpp"
#include "css/rng.hpp"
#include "css/spf.hpp"

namespace css {

inline constexpr int kNumTasks = 3;  // L1 multimodal CE, L2 unimodal CE, L3 distillation

struct ModelConfig {
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t p = 3;
  std::size_t r = 8;
  std::size_t classes = 4;
  std::array<std::size_t, kNumModalities> d_in{12, 12, 12};
  std::size_t max_len = 12;
  std::size_t n_speakers = 8;
  double dropout = 0.0;
  double temperature = 1.0;
  bool spf_on = true;
  bool mae_on = true;
  bool iae_on = true;
  bool msp_on = true;
  bool use_l2 = true;
  bool use_l3 = true;
  bool distill_teacher_grad = false;  // gradient through the distillation teacher
};

/// Everything one forward pass produces; owned by the caller so a const model
/// can evaluate batches concurrently.
struct ForwardState {
  EncoderCache enc;
  FusionCache fusion;
  UnimodalHeads::Cache heads;
  DistillCache distill;
  LossReport losses;
};

/// Full classification model: two-stage encoder, fusion branch, unimodal heads
/// and the three supervision signals over them.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Encoder& encoder() const { return *encoder_; }

  /// Runs encoder, fusion and heads. Training mode is signalled by a non-null
  /// dropout rng.
  void forward(const DialogueBatch& batch, ForwardState& state, Rng* dropout_rng = nullptr) const;

  /// Computes L1/L2/L3 on an existing forward state. Inactive losses (use_l2 /
  /// use_l3 off) stay zero.
  LossReport compute_losses(const DialogueBatch& batch, ForwardState& state) const;

  /// Accumulates sum_i weights[i] * dL_i/dtheta into the store grads (grads are
  /// zeroed first). compute_losses must have run on `state`.
  void backward(const DialogueBatch& batch, ForwardState& state,
                const std::array<double, kNumTasks>& weights);

  /// Convenience wrapper: backward of a single task.
  void backward_task(const DialogueBatch& batch, ForwardState& state, int task);

  /// Task ids that participate in training under this config (0 always; 1 and 2
  /// when the corresponding losses are enabled).
  std::vector<int> active_tasks() const;

  /// Whether a task's backward reaches the given parameter group.
  static bool task_reaches(int task, ParamGroup group, const ModelConfig& cfg);

  /// Registry entries reached by at least two active tasks, in registry order.
  std::vector<std::size_t> shared_param_indices() const;

  /// Argmax class prediction per (batch, position) from the fused branch.
  std::vector<std::int32_t> predict(const ForwardState& state) const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<FusionBase> fusion_;
  std::unique_ptr<UnimodalHeads> heads_;
};

}  // namespace css
