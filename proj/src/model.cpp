#include "solstep/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace solstep {

int argmax_lowest(const Vector& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

void ModelConfig::validate() const {
  if (num_blocks < 1 || num_heads < 1 || head_size < 1 || ff_channels < 1 || mlp_units < 1) {
    throw ConfigError("model: block/head/unit counts must be positive");
  }
  if (n_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (d_in < 1) throw ConfigError("model: d_in must be positive");
  if (attn_dropout < 0.0 || attn_dropout >= 1.0 || mlp_dropout < 0.0 || mlp_dropout >= 1.0) {
    throw ConfigError("model: dropout rates must lie in [0, 1)");
  }
}

int64_t ModelConfig::parameter_count() const {
  const int64_t d = d_in, h = num_heads, s = head_size, f = ff_channels, u = mlp_units,
                c = n_classes;
  const int64_t per_block = 4 * d * h * s + 4 * d + (d * f + f) + (f * d + d);
  return num_blocks * per_block + (d * u + u) + (u * c + c);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be positive");
  if (patience < 0) throw ConfigError("train: patience must be >= 0");
  if (input_channel_dropout_prob < 0.0 || input_channel_dropout_prob > 1.0) {
    throw ConfigError("train: channel dropout probability must lie in [0, 1]");
  }
}

ModelWeights make_zero_weights(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_in, hs = cfg.num_heads * cfg.head_size, f = cfg.ff_channels,
            u = cfg.mlp_units, c = cfg.n_classes;
  ModelWeights w;
  w.blocks.resize(cfg.num_blocks);
  for (auto& b : w.blocks) {
    b.wq = Matrix::Zero(d, hs);
    b.wk = Matrix::Zero(d, hs);
    b.wv = Matrix::Zero(d, hs);
    b.wo = Matrix::Zero(hs, d);
    b.ln1_gamma = Vector::Zero(d);
    b.ln1_beta = Vector::Zero(d);
    b.ln2_gamma = Vector::Zero(d);
    b.ln2_beta = Vector::Zero(d);
    b.ff1_w = Matrix::Zero(d, f);
    b.ff1_b = Vector::Zero(f);
    b.ff2_w = Matrix::Zero(f, d);
    b.ff2_b = Vector::Zero(d);
  }
  w.head.dense_w = Matrix::Zero(d, u);
  w.head.dense_b = Vector::Zero(u);
  w.head.out_w = Matrix::Zero(u, c);
  w.head.out_b = Vector::Zero(c);
  return w;
}

namespace {

void glorot_fill(Matrix& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m(i, j) = rng.uniform(-limit, limit);
    }
  }
}

}  // namespace

ModelWeights init_weights(const ModelConfig& cfg, Rng& rng) {
  ModelWeights w = make_zero_weights(cfg);
  for (auto& b : w.blocks) {
    glorot_fill(b.wq, rng);
    glorot_fill(b.wk, rng);
    glorot_fill(b.wv, rng);
    glorot_fill(b.wo, rng);
    b.ln1_gamma.setOnes();
    b.ln2_gamma.setOnes();
    glorot_fill(b.ff1_w, rng);
    glorot_fill(b.ff2_w, rng);
  }
  glorot_fill(w.head.dense_w, rng);
  glorot_fill(w.head.out_w, rng);
  return w;
}

bool same_shapes(const ModelWeights& a, const ModelWeights& b) {
  if (a.blocks.size() != b.blocks.size()) return false;
  bool ok = true;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> sa, sb;
  visit_tensors(a, [&](const auto& t) { sa.emplace_back(t.rows(), t.cols()); });
  visit_tensors(b, [&](const auto& t) { sb.emplace_back(t.rows(), t.cols()); });
  ok = sa == sb;
  return ok;
}

Vector softmax(const Vector& logits) {
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<size_t>(probs.rows()) != labels.size()) {
    throw DataError("cross_entropy: batch size mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw DataError("cross_entropy: label out of range");
    total += -std::log(std::max(probs(i, y), 1e-12));
  }
  return total / static_cast<double>(probs.rows());
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  const double keep = 1.0 - rate;
  Matrix mask(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    }
  }
  return mask;
}

Matrix positional_encoding(Eigen::Index length, Eigen::Index dim) {
  Matrix pe(length, dim);
  for (Eigen::Index t = 0; t < length; ++t) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double angle =
          static_cast<double>(t) /
          std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
      pe(t, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace {

struct LnCache {
  Matrix xhat;     // normalized input, rows = time steps
  Vector inv_std;  // per row
};

constexpr double kLnEps = 1e-6;

void layernorm_forward(const Matrix& x, const Vector& gamma, const Vector& beta, Matrix& out,
                       LnCache& cache) {
  const auto d = static_cast<double>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  out.resize(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double mu = x.row(t).mean();
    const double var = (x.row(t).array() - mu).square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std[t] = inv;
    cache.xhat.row(t) = (x.row(t).array() - mu) * inv;
    out.row(t) = cache.xhat.row(t).cwiseProduct(gamma.transpose()) + beta.transpose();
  }
}

// returns dx; accumulates dgamma/dbeta
Matrix layernorm_backward(const Matrix& g, const Vector& gamma, const LnCache& cache,
                          Vector& dgamma, Vector& dbeta) {
  const auto d = static_cast<double>(g.cols());
  Matrix dx(g.rows(), g.cols());
  for (Eigen::Index t = 0; t < g.rows(); ++t) {
    dgamma += g.row(t).cwiseProduct(cache.xhat.row(t)).transpose();
    dbeta += g.row(t).transpose();
    const auto dxhat = g.row(t).cwiseProduct(gamma.transpose());
    const double inv = cache.inv_std[t];
    const double sum_dxhat = dxhat.sum();
    const double sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat.row(t)).sum();
    dx.row(t) =
        inv / d * (d * dxhat.array() - sum_dxhat - cache.xhat.row(t).array() * sum_dxhat_xhat);
  }
  return dx;
}

// Attention is evaluated through the d x d products m_h = wq_h wk_h^T and
// p_h = wv_h wo_h: scores = xn m_h xn^T / sqrt(hs) and the sublayer output
// is sum_h A_h xn p_h. Identical math to the wide projections, but the
// per-example cost no longer scales with head_size; the wide weights only
// reappear when gradients are mapped back onto them once per batch.
struct FoldedWeights {
  std::vector<std::vector<Matrix>> m;  // [block][head], d x d
  std::vector<std::vector<Matrix>> p;  // [block][head], d x d
};

FoldedWeights fold_weights(const ModelWeights& w, const ModelConfig& cfg) {
  const int hs = cfg.head_size;
  FoldedWeights f;
  f.m.resize(w.blocks.size());
  f.p.resize(w.blocks.size());
  for (size_t bi = 0; bi < w.blocks.size(); ++bi) {
    const BlockWeights& b = w.blocks[bi];
    f.m[bi].resize(static_cast<size_t>(cfg.num_heads));
    f.p[bi].resize(static_cast<size_t>(cfg.num_heads));
    for (int h = 0; h < cfg.num_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * hs;
      f.m[bi][static_cast<size_t>(h)].noalias() =
          b.wq.middleCols(off, hs) * b.wk.middleCols(off, hs).transpose();
      f.p[bi][static_cast<size_t>(h)].noalias() =
          b.wv.middleCols(off, hs) * b.wo.middleRows(off, hs);
    }
  }
  return f;
}

struct BlockCache {
  Matrix x_in;
  LnCache ln1;
  Matrix xn;                 // ln1 output
  std::vector<Matrix> attn;  // per head, L x L, post softmax
  std::vector<Matrix> z;     // per head, xn * p_h, L x d
  Matrix attn_mask;          // empty in eval mode
  Matrix x_mid;
  LnCache ln2;
  Matrix f1_pre, f1;
};

struct ExampleCache {
  Matrix x0;
  std::vector<BlockCache> blocks;
  Matrix x_final;
  Vector pooled;
  Vector hidden_pre, hidden;
  Matrix mlp_mask;  // 1 x units, empty in eval mode
  Vector logits, probs;
};

void softmax_rows_inplace(Matrix& scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - m).exp();
    scores.row(r) /= scores.row(r).sum();
  }
}

// writes a*v into out without materializing copies of the q/k/v slices
template <class QT, class KT, class VT, class OT>
void attention_into(const QT& q, const KT& k, const VT& v, OT&& out, Matrix& a) {
  a.noalias() = q * k.transpose();
  a *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
  softmax_rows_inplace(a);
  out.noalias() = a * v;
}

}  // namespace

Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                            Matrix* attn_weights) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw DataError("attention: inconsistent q/k/v shapes");
  }
  Matrix a;
  Matrix out(q.rows(), v.cols());
  attention_into(q, k, v, out, a);
  if (attn_weights) *attn_weights = std::move(a);
  return out;
}

namespace {

void forward_one(const ModelWeights& w, const FoldedWeights& fold, const ModelConfig& cfg,
                 const Matrix& input, bool train_mode, Rng* rng, ExampleCache& c) {
  if (input.cols() != cfg.d_in) {
    throw DataError("forward: window has " + std::to_string(input.cols()) +
                    " features, model expects " + std::to_string(cfg.d_in));
  }
  if (input.rows() < 1) throw DataError("forward: empty window");

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_size));
  const Eigen::Index L = input.rows();
  const bool want_attn_drop = train_mode && cfg.attn_dropout > 0.0;
  const bool want_mlp_drop = train_mode && cfg.mlp_dropout > 0.0;
  if ((want_attn_drop || want_mlp_drop) && rng == nullptr) {
    throw ConfigError("forward: dropout in train mode needs an rng");
  }

  c.x0 = input;
  if (cfg.use_positional_encoding) {
    thread_local Matrix pe_cache;
    if (pe_cache.rows() != L || pe_cache.cols() != cfg.d_in) {
      pe_cache = positional_encoding(L, cfg.d_in);
    }
    c.x0 += pe_cache;
  }

  c.blocks.resize(static_cast<size_t>(cfg.num_blocks));
  Matrix x = c.x0;
  for (int bi = 0; bi < cfg.num_blocks; ++bi) {
    const BlockWeights& b = w.blocks[static_cast<size_t>(bi)];
    BlockCache& bc = c.blocks[static_cast<size_t>(bi)];
    bc.x_in = x;

    layernorm_forward(x, b.ln1_gamma, b.ln1_beta, bc.xn, bc.ln1);
    bc.attn.resize(static_cast<size_t>(cfg.num_heads));
    bc.z.resize(static_cast<size_t>(cfg.num_heads));
    Matrix attn_out = Matrix::Zero(L, cfg.d_in);
    for (int h = 0; h < cfg.num_heads; ++h) {
      const auto hu = static_cast<size_t>(h);
      Matrix& a = bc.attn[hu];
      a.noalias() = bc.xn * fold.m[static_cast<size_t>(bi)][hu] * bc.xn.transpose();
      a *= scale;
      softmax_rows_inplace(a);
      bc.z[hu].noalias() = bc.xn * fold.p[static_cast<size_t>(bi)][hu];
      attn_out.noalias() += a * bc.z[hu];
    }
    if (want_attn_drop) {
      bc.attn_mask = dropout_mask(L, cfg.d_in, cfg.attn_dropout, *rng);
      attn_out = attn_out.cwiseProduct(bc.attn_mask);
    } else {
      bc.attn_mask.resize(0, 0);
    }
    bc.x_mid = bc.x_in + attn_out;

    Matrix yn;
    layernorm_forward(bc.x_mid, b.ln2_gamma, b.ln2_beta, yn, bc.ln2);
    bc.f1_pre.noalias() = yn * b.ff1_w;
    bc.f1_pre.rowwise() += b.ff1_b.transpose();
    bc.f1 = bc.f1_pre.cwiseMax(0.0);
    Matrix f2;
    f2.noalias() = bc.f1 * b.ff2_w;
    f2.rowwise() += b.ff2_b.transpose();
    x = bc.x_mid + f2;

    if (!x.allFinite()) {
      throw NumericError("forward: non-finite activations after block " + std::to_string(bi));
    }
  }
  c.x_final = x;

  c.pooled = x.colwise().mean().transpose();
  c.hidden_pre.noalias() = w.head.dense_w.transpose() * c.pooled;
  c.hidden_pre += w.head.dense_b;
  c.hidden = c.hidden_pre.cwiseMax(0.0);
  Vector hd = c.hidden;
  if (want_mlp_drop) {
    c.mlp_mask = dropout_mask(1, cfg.mlp_units, cfg.mlp_dropout, *rng);
    hd = hd.cwiseProduct(c.mlp_mask.row(0).transpose());
  } else {
    c.mlp_mask.resize(0, 0);
  }
  c.logits.noalias() = w.head.out_w.transpose() * hd;
  c.logits += w.head.out_b;
  if (!c.logits.allFinite()) throw NumericError("forward: non-finite activations in head");
  c.probs = softmax(c.logits);
}

// per-chunk gradient accumulator: attention gradients stay in the folded
// d x d space until the whole batch is reduced
struct GradAccum {
  ModelWeights w;
  std::vector<std::vector<Matrix>> dm, dp;  // [block][head], d x d
};

GradAccum make_grad_accum(const ModelConfig& cfg) {
  GradAccum g;
  g.w = make_zero_weights(cfg);
  g.dm.resize(static_cast<size_t>(cfg.num_blocks));
  g.dp.resize(static_cast<size_t>(cfg.num_blocks));
  for (int bi = 0; bi < cfg.num_blocks; ++bi) {
    for (int h = 0; h < cfg.num_heads; ++h) {
      g.dm[static_cast<size_t>(bi)].push_back(Matrix::Zero(cfg.d_in, cfg.d_in));
      g.dp[static_cast<size_t>(bi)].push_back(Matrix::Zero(cfg.d_in, cfg.d_in));
    }
  }
  return g;
}

// maps the folded attention gradients back onto wq/wk/wv/wo; runs once per
// batch after the chunk reduction
void finalize_attention_grads(GradAccum& g, const ModelWeights& w, const ModelConfig& cfg) {
  const int hs = cfg.head_size;
  for (size_t bi = 0; bi < g.w.blocks.size(); ++bi) {
    const BlockWeights& b = w.blocks[bi];
    BlockWeights& gb = g.w.blocks[bi];
    for (int h = 0; h < cfg.num_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * hs;
      const auto hu = static_cast<size_t>(h);
      gb.wq.middleCols(off, hs).noalias() = g.dm[bi][hu] * b.wk.middleCols(off, hs);
      gb.wk.middleCols(off, hs).noalias() = g.dm[bi][hu].transpose() * b.wq.middleCols(off, hs);
      gb.wv.middleCols(off, hs).noalias() = g.dp[bi][hu] * b.wo.middleRows(off, hs).transpose();
      gb.wo.middleRows(off, hs).noalias() = b.wv.middleCols(off, hs).transpose() * g.dp[bi][hu];
    }
  }
}

// accumulates the gradient of this example's contribution to the mean loss
// (dlogits already carries the 1/B factor)
void backward_one(const ModelWeights& w, const FoldedWeights& fold, const ModelConfig& cfg,
                  const ExampleCache& c, const Vector& dlogits, GradAccum& acc) {
  ModelWeights& g = acc.w;
  const Eigen::Index L = c.x0.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_size));

  // head
  Vector hd = c.hidden;
  if (c.mlp_mask.size() > 0) hd = hd.cwiseProduct(c.mlp_mask.row(0).transpose());
  g.head.out_w.noalias() += hd * dlogits.transpose();
  g.head.out_b += dlogits;
  Vector dhd = w.head.out_w * dlogits;
  if (c.mlp_mask.size() > 0) dhd = dhd.cwiseProduct(c.mlp_mask.row(0).transpose());
  Vector dhidden_pre =
      dhd.cwiseProduct((c.hidden_pre.array() > 0.0).cast<double>().matrix());
  g.head.dense_w.noalias() += c.pooled * dhidden_pre.transpose();
  g.head.dense_b += dhidden_pre;
  Vector dpooled = w.head.dense_w * dhidden_pre;

  Matrix dx = (Vector::Ones(L) / static_cast<double>(L)) * dpooled.transpose();

  for (int bi = cfg.num_blocks - 1; bi >= 0; --bi) {
    const auto bi_u = static_cast<size_t>(bi);
    const BlockWeights& b = w.blocks[bi_u];
    BlockWeights& gb = g.blocks[bi_u];
    const BlockCache& bc = c.blocks[bi_u];

    // feed-forward sublayer: x = x_mid + relu(ln2(x_mid) W1 + b1) W2 + b2
    Matrix df2 = dx;  // residual passes dx through unchanged
    Matrix df1 = df2 * b.ff2_w.transpose();
    gb.ff2_w.noalias() += bc.f1.transpose() * df2;
    gb.ff2_b += df2.colwise().sum().transpose();
    Matrix df1_pre = df1.cwiseProduct((bc.f1_pre.array() > 0.0).cast<double>().matrix());
    Matrix yn =
        ((bc.ln2.xhat.array().rowwise() * b.ln2_gamma.transpose().array()).rowwise() +
         b.ln2_beta.transpose().array())
            .matrix();
    gb.ff1_w.noalias() += yn.transpose() * df1_pre;
    gb.ff1_b += df1_pre.colwise().sum().transpose();
    Matrix dyn = df1_pre * b.ff1_w.transpose();
    Matrix dx_mid = dx + layernorm_backward(dyn, b.ln2_gamma, bc.ln2, gb.ln2_gamma, gb.ln2_beta);

    // attention sublayer: x_mid = x_in + mask . sum_h A_h (xn p_h)
    Matrix dattn = dx_mid;
    if (bc.attn_mask.size() > 0) dattn = dattn.cwiseProduct(bc.attn_mask);

    Matrix dxn = Matrix::Zero(L, cfg.d_in);
    for (int h = 0; h < cfg.num_heads; ++h) {
      const auto hu = static_cast<size_t>(h);
      const Matrix& a = bc.attn[hu];
      const Matrix& m = fold.m[bi_u][hu];
      const Matrix& p = fold.p[bi_u][hu];

      Matrix da;
      da.noalias() = dattn * bc.z[hu].transpose();  // L x L
      Matrix dz;
      dz.noalias() = a.transpose() * dattn;  // L x d
      acc.dp[bi_u][hu].noalias() += bc.xn.transpose() * dz;
      dxn.noalias() += dz * p.transpose();

      // softmax backward per row: ds = a . (da - sum(da . a))
      Matrix ds(L, L);
      for (Eigen::Index r = 0; r < L; ++r) {
        const double dot = da.row(r).cwiseProduct(a.row(r)).sum();
        ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
      }
      ds *= scale;
      acc.dm[bi_u][hu].noalias() += bc.xn.transpose() * ds * bc.xn;
      dxn.noalias() += ds * bc.xn * m.transpose();
      dxn.noalias() += ds.transpose() * bc.xn * m;
    }
    dx = dx_mid + layernorm_backward(dxn, b.ln1_gamma, bc.ln1, gb.ln1_gamma, gb.ln1_beta);
  }
}

struct BatchSlice {
  GradAccum grads;
  double loss_sum = 0.0;
  bool initialized = false;
};

// Runs forward (and optionally backward) over [begin, end) of the batch,
// writing probabilities into rows of probs_out. Gradients accumulate into
// slice.grads so chunk results can be reduced in a fixed order.
void run_examples(const ModelWeights& w, const FoldedWeights& fold, const ModelConfig& cfg,
                  const std::vector<const Matrix*>& batch, const std::vector<int>* labels,
                  bool train_mode, uint64_t mask_salt, size_t begin, size_t end,
                  Matrix* probs_out, BatchSlice* slice) {
  ExampleCache cache;
  const auto batch_n = static_cast<double>(batch.size());
  for (size_t i = begin; i < end; ++i) {
    Rng rng(mix64(mask_salt ^ mix64(0x5eed + i)));
    forward_one(w, fold, cfg, *batch[i], train_mode, &rng, cache);
    if (probs_out) probs_out->row(static_cast<Eigen::Index>(i)) = cache.probs.transpose();
    if (slice) {
      const int y = (*labels)[i];
      if (y < 0 || y >= cfg.n_classes) throw DataError("train: label index out of range");
      slice->loss_sum += -std::log(std::max(cache.probs[y], 1e-12));
      Vector dlogits = cache.probs / batch_n;
      dlogits[y] -= 1.0 / batch_n;
      if (!slice->initialized) {
        slice->grads = make_grad_accum(cfg);
        slice->initialized = true;
      }
      backward_one(w, fold, cfg, cache, dlogits, slice->grads);
    }
  }
}

// fixed chunk layout so the reduction order never depends on thread count
constexpr size_t kBatchChunks = 8;

void accumulate(ModelWeights& into, const ModelWeights& from) {
  std::vector<double*> dst;
  std::vector<Eigen::Index> sizes;
  visit_tensors(into, [&](auto& t) {
    dst.push_back(t.data());
    sizes.push_back(t.size());
  });
  std::vector<const double*> src;
  visit_tensors(from, [&](const auto& t) { src.push_back(t.data()); });
  for (size_t i = 0; i < dst.size(); ++i) {
    Eigen::Map<Vector>(dst[i], sizes[i]) += Eigen::Map<const Vector>(src[i], sizes[i]);
  }
}

void accumulate(GradAccum& into, const GradAccum& from) {
  accumulate(into.w, from.w);
  for (size_t b = 0; b < into.dm.size(); ++b) {
    for (size_t h = 0; h < into.dm[b].size(); ++h) {
      into.dm[b][h] += from.dm[b][h];
      into.dp[b][h] += from.dp[b][h];
    }
  }
}

}  // namespace

Matrix forward(const ModelWeights& w, const ModelConfig& cfg, const std::vector<Matrix>& batch,
               bool train_mode, Rng* rng) {
  cfg.validate();
  const FoldedWeights fold = fold_weights(w, cfg);
  Matrix probs(static_cast<Eigen::Index>(batch.size()), cfg.n_classes);
  std::vector<const Matrix*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& m : batch) ptrs.push_back(&m);
  const uint64_t salt = rng ? rng->next_u64() : 0;
  run_examples(w, fold, cfg, ptrs, nullptr, train_mode, salt, 0, ptrs.size(), &probs, nullptr);
  return probs;
}

BackwardResult backward(const ModelWeights& w, const ModelConfig& cfg,
                        const std::vector<Matrix>& batch, const std::vector<int>& labels) {
  cfg.validate();
  if (batch.size() != labels.size()) throw DataError("backward: batch/label size mismatch");
  if (batch.empty()) throw DataError("backward: empty batch");
  BackwardResult res;
  res.probs.resize(static_cast<Eigen::Index>(batch.size()), cfg.n_classes);
  std::vector<const Matrix*> ptrs;
  for (const auto& m : batch) ptrs.push_back(&m);
  const FoldedWeights fold = fold_weights(w, cfg);
  BatchSlice slice;
  run_examples(w, fold, cfg, ptrs, &labels, false, 0, 0, ptrs.size(), &res.probs, &slice);
  if (!slice.initialized) slice.grads = make_grad_accum(cfg);
  finalize_attention_grads(slice.grads, w, cfg);
  res.grads = std::move(slice.grads.w);
  res.loss = slice.loss_sum / static_cast<double>(batch.size());
  static const char* kTensorNames[] = {"wq",        "wk",       "wv",       "wo",
                                       "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta",
                                       "ff1_w",     "ff1_b",    "ff2_w",    "ff2_b"};
  size_t idx = 0;
  std::string bad;
  visit_tensors(res.grads, [&](const auto& t) {
    if (bad.empty() && !t.allFinite()) {
      if (idx < static_cast<size_t>(cfg.num_blocks) * 12) {
        bad = "block " + std::to_string(idx / 12) + " " + kTensorNames[idx % 12];
      } else {
        static const char* kHeadNames[] = {"dense_w", "dense_b", "out_w", "out_b"};
        bad = std::string("head ") + kHeadNames[(idx - static_cast<size_t>(cfg.num_blocks) * 12) % 4];
      }
    }
    ++idx;
  });
  if (!bad.empty()) throw NumericError("backward: non-finite gradient in " + bad);
  return res;
}

AdamState make_adam_state(const ModelConfig& cfg) {
  AdamState st;
  const ModelWeights proto = make_zero_weights(cfg);
  visit_tensors(proto, [&](const auto& t) {
    st.m.push_back(Vector::Zero(t.size()));
    st.v.push_back(Vector::Zero(t.size()));
  });
  return st;
}

void adam_step(ModelWeights& w, const ModelWeights& grads, AdamState& state,
               const TrainConfig& cfg, int64_t t) {
  if (t < 1) throw ConfigError("adam_step: t starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  size_t idx = 0;
  // walk weights and grads in lockstep via flat maps
  std::vector<double*> wp;
  std::vector<const double*> gp;
  std::vector<Eigen::Index> sizes;
  visit_tensors(w, [&](auto& tens) {
    wp.push_back(tens.data());
    sizes.push_back(tens.size());
  });
  visit_tensors(grads, [&](const auto& tens) { gp.push_back(tens.data()); });
  if (wp.size() != gp.size() || wp.size() != state.m.size()) {
    throw ConfigError("adam_step: state shape mismatch");
  }
  for (idx = 0; idx < wp.size(); ++idx) {
    Eigen::Map<Vector> wv(wp[idx], sizes[idx]);
    Eigen::Map<const Vector> gv(gp[idx], sizes[idx]);
    Vector& m = state.m[idx];
    Vector& v = state.v[idx];
    if (m.size() != sizes[idx]) throw ConfigError("adam_step: state size mismatch");
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * gv;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * gv.cwiseProduct(gv);
    wv.array() -=
        cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

namespace {

struct PreparedSet {
  std::vector<Matrix> values;
  std::vector<int> labels;
};

PreparedSet prepare(const std::vector<FeatureWindow>& windows,
                    const std::vector<std::string>& classes, const Normalizer* norm) {
  PreparedSet out;
  out.values.reserve(windows.size());
  out.labels.reserve(windows.size());
  for (const auto& w : windows) {
    out.values.push_back(norm ? apply_normalizer(*norm, w.values) : w.values);
    const auto it = std::lower_bound(classes.begin(), classes.end(), w.label);
    if (it == classes.end() || *it != w.label) {
      throw DataError("train: label '" + w.label + "' missing from class vocabulary");
    }
    out.labels.push_back(static_cast<int>(it - classes.begin()));
  }
  return out;
}

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalStats evaluate_set(const ModelWeights& w, const ModelConfig& cfg, const PreparedSet& set,
                       int threads) {
  EvalStats st;
  if (set.values.empty()) return st;
  std::vector<const Matrix*> ptrs;
  for (const auto& m : set.values) ptrs.push_back(&m);
  Matrix probs(static_cast<Eigen::Index>(ptrs.size()), cfg.n_classes);
  const FoldedWeights fold = fold_weights(w, cfg);

  const size_t n = ptrs.size();
  const size_t chunks = std::min<size_t>(kBatchChunks, n);
  std::vector<std::thread> workers;
  const size_t use_threads = std::max<size_t>(1, std::min<size_t>(static_cast<size_t>(threads), chunks));
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t c = next.fetch_add(1);
      if (c >= chunks) break;
      const size_t begin = c * n / chunks;
      const size_t end = (c + 1) * n / chunks;
      run_examples(w, fold, cfg, ptrs, nullptr, false, 0, begin, end, &probs, nullptr);
    }
  };
  if (use_threads > 1) {
    for (size_t i = 0; i < use_threads; ++i) workers.emplace_back(worker);
    for (auto& t : workers) t.join();
  } else {
    worker();
  }

  int correct = 0;
  for (size_t i = 0; i < n; ++i) {
    if (argmax_lowest(probs.row(static_cast<Eigen::Index>(i)).transpose()) == set.labels[i]) {
      ++correct;
    }
    st.loss += -std::log(std::max(probs(static_cast<Eigen::Index>(i), set.labels[i]), 1e-12));
  }
  st.loss /= static_cast<double>(n);
  st.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return st;
}

}  // namespace

TrainResult train(const std::vector<FeatureWindow>& train_windows,
                  const std::vector<FeatureWindow>& val_windows, const ModelConfig& cfg,
                  const TrainConfig& tcfg, const std::vector<std::string>& classes,
                  FeatureMode mode, int n_channels, bool normalize) {
  cfg.validate();
  tcfg.validate();
  if (train_windows.empty()) throw DataError("train: empty training set");
  if (static_cast<int>(classes.size()) != cfg.n_classes) {
    throw ConfigError("train: class vocabulary size does not match n_classes");
  }
  if (!std::is_sorted(classes.begin(), classes.end())) {
    throw ConfigError("train: class vocabulary must be sorted");
  }
  {
    std::vector<bool> seen(classes.size(), false);
    for (const auto& w : train_windows) {
      const auto it = std::lower_bound(classes.begin(), classes.end(), w.label);
      if (it != classes.end() && *it == w.label) seen[static_cast<size_t>(it - classes.begin())] = true;
    }
    for (size_t i = 0; i < seen.size(); ++i) {
      if (!seen[i]) throw DataError("train: class '" + classes[i] + "' missing from training set");
    }
  }
  if (train_windows.front().values.cols() != cfg.d_in) {
    throw ConfigError("train: feature dim " + std::to_string(train_windows.front().values.cols()) +
                      " does not match d_in " + std::to_string(cfg.d_in));
  }

  TrainResult result;
  if (normalize) {
    result.normalizer = fit_normalizer(train_windows);
  } else {
    result.normalizer.mean = Vector::Zero(cfg.d_in);
    result.normalizer.std = Vector::Ones(cfg.d_in);
  }
  const Normalizer& norm = result.normalizer;
  PreparedSet tr = prepare(train_windows, classes, &norm);
  PreparedSet va = prepare(val_windows, classes, &norm);

  const int threads = tcfg.threads > 0
                          ? tcfg.threads
                          : std::max(1u, std::thread::hardware_concurrency());

  Rng master(tcfg.seed);
  Rng init_rng = master.fork(1);
  ModelWeights weights = init_weights(cfg, init_rng);
  AdamState adam = make_adam_state(cfg);
  Rng shuffle_rng = master.fork(2);
  Rng occlusion_rng = master.fork(3);
  Rng mask_salt_rng = master.fork(4);

  ModelWeights best_weights = weights;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale_epochs = 0;
  int64_t step = 0;

  std::vector<size_t> order(tr.values.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    int epoch_correct = 0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tcfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(tcfg.batch_size));
      const size_t bsize = end - start;

      std::vector<const Matrix*> batch(bsize);
      std::vector<int> labels(bsize);
      std::vector<Matrix> occluded;  // storage for channel-dropped copies
      occluded.reserve(bsize);
      for (size_t i = 0; i < bsize; ++i) {
        const size_t src = order[start + i];
        labels[i] = tr.labels[src];
        if (tcfg.input_channel_dropout_prob > 0.0 &&
            occlusion_rng.uniform() < tcfg.input_channel_dropout_prob) {
          const int ch = static_cast<int>(occlusion_rng.below(static_cast<uint64_t>(n_channels)));
          Matrix copy = tr.values[src];
          for (int col : feature_columns_of_channel(mode, n_channels, ch)) copy.col(col).setZero();
          occluded.push_back(std::move(copy));
          batch[i] = &occluded.back();
        } else {
          batch[i] = &tr.values[src];
        }
      }

      const uint64_t salt = mask_salt_rng.next_u64();
      const size_t chunks = std::min<size_t>(kBatchChunks, bsize);
      std::vector<BatchSlice> slices(chunks);
      Matrix probs(static_cast<Eigen::Index>(bsize), cfg.n_classes);
      const FoldedWeights fold = fold_weights(weights, cfg);
      {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
          while (true) {
            const size_t ci = next.fetch_add(1);
            if (ci >= chunks) break;
            const size_t b = ci * bsize / chunks;
            const size_t e = (ci + 1) * bsize / chunks;
            run_examples(weights, fold, cfg, batch, &labels, true, salt, b, e, &probs,
                         &slices[ci]);
          }
        };
        const size_t use_threads = std::max<size_t>(1, std::min<size_t>(static_cast<size_t>(threads), chunks));
        if (use_threads > 1) {
          std::vector<std::thread> workers;
          for (size_t i = 0; i < use_threads; ++i) workers.emplace_back(worker);
          for (auto& t : workers) t.join();
        } else {
          worker();
        }
      }

      GradAccum grads = make_grad_accum(cfg);
      double batch_loss = 0.0;
      for (size_t ci = 0; ci < chunks; ++ci) {  // fixed reduction order
        if (slices[ci].initialized) accumulate(grads, slices[ci].grads);
        batch_loss += slices[ci].loss_sum;
      }
      finalize_attention_grads(grads, weights, cfg);
      // per-example dlogits carried 1/bsize already
      adam_step(weights, grads.w, adam, tcfg, ++step);

      epoch_loss += batch_loss;
      for (size_t i = 0; i < bsize; ++i) {
        if (argmax_lowest(probs.row(static_cast<Eigen::Index>(i)).transpose()) == labels[i]) {
          ++epoch_correct;
        }
      }
      seen += bsize;
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / static_cast<double>(seen);
    stats.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(seen);
    const EvalStats vs = evaluate_set(weights, cfg, va, threads);
    stats.val_loss = vs.loss;
    stats.val_accuracy = vs.accuracy;
    result.history.push_back(stats);

    const double monitored = va.values.empty() ? stats.train_loss : stats.val_loss;
    if (monitored < best_val) {
      best_val = monitored;
      best_weights = weights;
      best_epoch = epoch;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (stale_epochs > tcfg.patience) break;
    }
  }

  result.weights = std::move(best_weights);
  result.best_epoch = best_epoch;
  return result;
}

Prediction predict(const ModelWeights& w, const ModelConfig& cfg, const Normalizer& normalizer,
                   const Matrix& window_values, bool normalize) {
  Matrix input = normalize ? apply_normalizer(normalizer, window_values) : window_values;
  ExampleCache cache;
  const FoldedWeights fold = fold_weights(w, cfg);
  forward_one(w, fold, cfg, input, false, nullptr, cache);
  Prediction p;
  p.probs = cache.probs;
  p.label = argmax_lowest(cache.probs);
  return p;
}

}  // namespace solstep
