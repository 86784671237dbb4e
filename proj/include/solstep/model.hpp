#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "solstep/common.hpp"
#include "solstep/features.hpp"
#include "solstep/rng.hpp"

namespace solstep {

struct ModelConfig {
  int num_blocks = 4;
  int num_heads = 4;
  int head_size = 256;
  int ff_channels = 4;  // feed-forward bottleneck width
  double attn_dropout = 0.125;
  double mlp_dropout = 0.2;
  int mlp_units = 128;
  int n_classes = 0;
  int d_in = 0;
  bool use_positional_encoding = true;

  void validate() const;
  int64_t parameter_count() const;
};

struct BlockWeights {
  Matrix wq, wk, wv;  // d_in x (num_heads * head_size)
  Matrix wo;          // (num_heads * head_size) x d_in
  Vector ln1_gamma, ln1_beta;  // d_in
  Vector ln2_gamma, ln2_beta;  // d_in
  Matrix ff1_w;  // d_in x ff_channels
  Vector ff1_b;  // ff_channels
  Matrix ff2_w;  // ff_channels x d_in
  Vector ff2_b;  // d_in
};

struct HeadWeights {
  Matrix dense_w;  // d_in x mlp_units
  Vector dense_b;  // mlp_units
  Matrix out_w;    // mlp_units x n_classes
  Vector out_b;    // n_classes
};

struct ModelWeights {
  std::vector<BlockWeights> blocks;
  HeadWeights head;
};

// Enumerates every tensor in the serialization order: per block wq, wk, wv,
// wo, ln1_gamma, ln1_beta, ln2_gamma, ln2_beta, ff1_w, ff1_b, ff2_w, ff2_b;
// then dense_w, dense_b, out_w, out_b.
template <class W, class F>
void visit_tensors(W&& w, F&& f) {
  for (auto& b : w.blocks) {
    f(b.wq);
    f(b.wk);
    f(b.wv);
    f(b.wo);
    f(b.ln1_gamma);
    f(b.ln1_beta);
    f(b.ln2_gamma);
    f(b.ln2_beta);
    f(b.ff1_w);
    f(b.ff1_b);
    f(b.ff2_w);
    f(b.ff2_b);
  }
  f(w.head.dense_w);
  f(w.head.dense_b);
  f(w.head.out_w);
  f(w.head.out_b);
}

ModelWeights make_zero_weights(const ModelConfig& cfg);
ModelWeights init_weights(const ModelConfig& cfg, Rng& rng);
bool same_shapes(const ModelWeights& a, const ModelWeights& b);

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 64;
  int max_epochs = 150;
  int patience = 15;  // epochs of no validation-loss improvement tolerated
  uint64_t seed = 0;
  double input_channel_dropout_prob = 0.0;
  int threads = 0;  // 0 -> hardware concurrency; never affects results

  void validate() const;
};

// numerically stable softmax; shift-invariant, preserves argmax
Vector softmax(const Vector& logits);

// index of the largest entry; ties resolve to the lowest index
int argmax_lowest(const Vector& v);

// one head of scaled dot-product attention, scale 1/sqrt(key dim); fills
// *attn_weights with the post-softmax weights when provided
Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                            Matrix* attn_weights = nullptr);

// mean over the batch of -log p[label]; probabilities floored at 1e-12
double cross_entropy(const Matrix& probs, const std::vector<int>& labels);

// inverted dropout: zero with probability rate, survivors scaled by
// 1/(1-rate) so the mask expectation equals the identity
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

Matrix positional_encoding(Eigen::Index length, Eigen::Index dim);

// Batch forward pass. Each example is a [length x d_in] matrix. In train
// mode rng drives the dropout masks; eval mode never touches it. Returns
// [batch x n_classes] probabilities.
Matrix forward(const ModelWeights& w, const ModelConfig& cfg, const std::vector<Matrix>& batch,
               bool train_mode, Rng* rng);

// Gradients of the mean cross-entropy over the batch with respect to every
// weight (dropout off), plus the loss itself.
struct BackwardResult {
  ModelWeights grads;
  Matrix probs;  // batch x n_classes
  double loss = 0.0;
};
BackwardResult backward(const ModelWeights& w, const ModelConfig& cfg,
                        const std::vector<Matrix>& batch, const std::vector<int>& labels);

struct AdamState {
  std::vector<Vector> m, v;  // one flat slot per tensor, visit order
};
AdamState make_adam_state(const ModelConfig& cfg);

// bias-corrected Adam; t counts steps starting at 1
void adam_step(ModelWeights& w, const ModelWeights& grads, AdamState& state,
               const TrainConfig& cfg, int64_t t);

struct EpochStats {
  double train_loss = 0.0, train_accuracy = 0.0;
  double val_loss = 0.0, val_accuracy = 0.0;
};

struct TrainResult {
  ModelWeights weights;
  Normalizer normalizer;
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 0-based index into history
};

// Fits the normalizer on the training windows only (when ds_mode asks for
// it), then runs seeded mini-batch Adam with early stopping on validation
// loss. Returns the best-validation weights. classes fixes the label order;
// every class must appear in the training set.
TrainResult train(const std::vector<FeatureWindow>& train_windows,
                  const std::vector<FeatureWindow>& val_windows, const ModelConfig& cfg,
                  const TrainConfig& tcfg, const std::vector<std::string>& classes,
                  FeatureMode mode, int n_channels, bool normalize);

// eval-mode prediction; ties resolve to the lowest class index
struct Prediction {
  int label = 0;
  Vector probs;
};
Prediction predict(const ModelWeights& w, const ModelConfig& cfg, const Normalizer& normalizer,
                   const Matrix& window_values, bool normalize = true);

}  // namespace solstep
