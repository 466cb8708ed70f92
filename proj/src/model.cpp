#include "css/model.hpp"

#include <stdexcept>

#include "css/ops.hpp"

namespace css {

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  Rng init(init_seed);
  EncoderConfig ec;
  ec.d = cfg.d;
  ec.heads = cfg.heads;
  ec.d_ff = cfg.d_ff;
  ec.max_len = cfg.max_len;
  ec.n_speakers = cfg.n_speakers;
  ec.d_in = cfg.d_in;
  ec.dropout = cfg.dropout;
  ec.mae_on = cfg.mae_on;
  ec.iae_on = cfg.iae_on;
  encoder_ = std::make_unique<Encoder>(ec, store_, init.split(1));
  if (cfg.spf_on) {
    SpfConfig sc;
    sc.p = cfg.p;
    sc.r = cfg.r;
    sc.d = cfg.d;
    sc.classes = cfg.classes;
    sc.msp_on = cfg.msp_on;
    fusion_ = std::make_unique<SpfFusion>(sc, store_, init.split(2));
  } else {
    fusion_ = std::make_unique<ConcatFusion>(cfg.d, cfg.classes, store_, init.split(2));
  }
  heads_ = std::make_unique<UnimodalHeads>(cfg.d, cfg.classes, store_, init.split(3));
}

void Model::forward(const DialogueBatch& batch, ForwardState& state, Rng* dropout_rng) const {
  encoder_->forward(store_, batch, state.enc, dropout_rng);
  fusion_->forward(store_, state.enc.h_tilde, state.fusion);
  heads_->forward(store_, state.enc.h_tilde, state.heads);
}

LossReport Model::compute_losses(const DialogueBatch& batch, ForwardState& state) const {
  LossReport rep;
  rep.l1 = masked_cross_entropy(state.fusion.yhat, batch.labels, batch.mask);
  if (cfg_.use_l2) {
    for (int m = 0; m < kNumModalities; ++m) {
      rep.l2_m[m] = masked_cross_entropy(state.heads.yhat[m], batch.labels, batch.mask);
      rep.l2 += rep.l2_m[m];
    }
  }
  if (cfg_.use_l3) {
    rep.l3 = distill_kl(state.fusion.logits, state.heads.logits, cfg_.temperature, batch.mask,
                        state.distill, rep.l3_m);
  }
  state.losses = rep;
  return rep;
}

void Model::backward(const DialogueBatch& batch, ForwardState& state,
                     const std::array<double, kNumTasks>& weights) {
  store_.zero_grads();
  std::size_t B = batch.batch_size, L = batch.max_len;

  Tensor d_fused_logits({B, L, cfg_.classes}, 0.0);
  std::array<Tensor, kNumModalities> d_head_logits;
  for (int m = 0; m < kNumModalities; ++m) d_head_logits[m] = Tensor({B, L, cfg_.classes}, 0.0);

  if (weights[0] != 0.0) {
    masked_cross_entropy_backward(state.fusion.yhat, batch.labels, batch.mask, weights[0],
                                  d_fused_logits);
  }
  if (cfg_.use_l2 && weights[1] != 0.0) {
    for (int m = 0; m < kNumModalities; ++m) {
      masked_cross_entropy_backward(state.heads.yhat[m], batch.labels, batch.mask, weights[1],
                                    d_head_logits[m]);
    }
  }
  if (cfg_.use_l3 && weights[2] != 0.0) {
    for (int m = 0; m < kNumModalities; ++m) {
      distill_kl_backward(state.distill, cfg_.temperature, batch.mask, weights[2], m,
                          d_head_logits[m], &d_fused_logits, cfg_.distill_teacher_grad);
    }
  }

  std::array<Tensor, kNumModalities> d_tilde;
  for (int m = 0; m < kNumModalities; ++m) d_tilde[m] = Tensor({B, L, cfg_.d}, 0.0);
  fusion_->backward(store_, state.enc.h_tilde, state.fusion, d_fused_logits, d_tilde);
  heads_->backward(store_, state.enc.h_tilde, d_head_logits, d_tilde);
  encoder_->backward(store_, batch, state.enc, d_tilde);
}

void Model::backward_task(const DialogueBatch& batch, ForwardState& state, int task) {
  std::array<double, kNumTasks> w{0.0, 0.0, 0.0};
  if (task < 0 || task >= kNumTasks) throw std::invalid_argument("Model: bad task index");
  w[task] = 1.0;
  backward(batch, state, w);
}

std::vector<int> Model::active_tasks() const {
  std::vector<int> t{0};
  if (cfg_.use_l2) t.push_back(1);
  if (cfg_.use_l3) t.push_back(2);
  return t;
}

bool Model::task_reaches(int task, ParamGroup group, const ModelConfig& cfg) {
  switch (task) {
    case 0:  // fused classification
      return group == ParamGroup::kEncoder || group == ParamGroup::kFusion;
    case 1:  // unimodal hard labels
      return group == ParamGroup::kEncoder || group == ParamGroup::kHeads;
    case 2:  // distillation; fusion branch is reached only with a teacher grad
      return group == ParamGroup::kEncoder || group == ParamGroup::kHeads ||
             (cfg.distill_teacher_grad && group == ParamGroup::kFusion);
    default:
      return false;
  }
}

std::vector<std::size_t> Model::shared_param_indices() const {
  std::vector<int> tasks = active_tasks();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < store_.size(); ++i) {
    int reach = 0;
    for (int t : tasks) {
      if (task_reaches(t, store_.entry(i).group, cfg_)) ++reach;
    }
    if (reach >= 2) out.push_back(i);
  }
  return out;
}

std::vector<std::int32_t> Model::predict(const ForwardState& state) const {
  const Tensor& yhat = state.fusion.yhat;
  std::size_t c = yhat.shape().back();
  std::size_t n = yhat.size() / c;
  std::vector<std::int32_t> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = yhat.data() + i * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (p[k] > p[best]) best = k;
    }
    preds[i] = static_cast<std::int32_t>(best);
  }
  return preds;
}

}  // namespace css
