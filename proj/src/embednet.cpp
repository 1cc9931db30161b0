// Copyright 2026 The SERF Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "serf/embednet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "serf/parallel.hpp"

namespace serf {

namespace nn {

namespace {

using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void im2col(const Tensor3& x, std::int64_t e, int kernel, Eigen::MatrixXd& cols) {
  const std::int64_t cin = x.c, l = x.l;
  const int pad = (kernel - 1) / 2;
  cols.resize(cin * kernel, l);
  for (std::int64_t j = 0; j < l; ++j) {
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const double* row = x.at(e, ci);
      double* col = cols.data() + j * cols.rows() + ci * kernel;
      for (int k = 0; k < kernel; ++k) {
        const std::int64_t idx = j + k - pad;
        col[k] = (idx >= 0 && idx < l) ? row[idx] : 0.0;
      }
    }
  }
}

}  // namespace

void conv_forward(const Tensor3& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                  Tensor3& z) {
  const std::int64_t cout = w.rows();
  const int kernel = static_cast<int>(w.cols() / x.c);
  z = Tensor3(x.n, cout, x.l);
  parallel_for(x.n, [&](std::int64_t e) {
    Eigen::MatrixXd cols;
    im2col(x, e, kernel, cols);
    RowMajorMap zmap(z.at(e, 0), cout, x.l);
    zmap.noalias() = w * cols;
    zmap.colwise() += b;
  });
}

void conv_backward(const Tensor3& x, const Eigen::MatrixXd& w, const Tensor3& dz, Tensor3& dx,
                   Eigen::MatrixXd& dw, Eigen::VectorXd& db) {
  const std::int64_t cout = w.rows();
  const int kernel = static_cast<int>(w.cols() / x.c);
  const int pad = (kernel - 1) / 2;
  dx = Tensor3(x.n, x.c, x.l);

  // Per-epoch weight-gradient contributions, reduced in index order so
  // the result does not depend on the thread count.
  std::vector<Eigen::MatrixXd> dw_parts(x.n);
  std::vector<Eigen::VectorXd> db_parts(x.n);
  parallel_for(x.n, [&](std::int64_t e) {
    Eigen::MatrixXd cols;
    im2col(x, e, kernel, cols);
    ConstRowMajorMap dzmap(dz.at(e, 0), cout, x.l);
    dw_parts[e].noalias() = dzmap * cols.transpose();
    db_parts[e] = dzmap.rowwise().sum();
    // col2im of w^T dz
    Eigen::MatrixXd g = w.transpose() * dzmap;  // (cin*K) x L
    for (std::int64_t j = 0; j < x.l; ++j) {
      for (std::int64_t ci = 0; ci < x.c; ++ci) {
        double* out = dx.at(e, ci);
        const double* col = g.data() + j * g.rows() + ci * kernel;
        for (int k = 0; k < kernel; ++k) {
          const std::int64_t idx = j + k - pad;
          if (idx >= 0 && idx < x.l) out[idx] += col[k];
        }
      }
    }
  });
  dw = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  db = Eigen::VectorXd::Zero(cout);
  for (std::int64_t e = 0; e < x.n; ++e) {
    dw += dw_parts[e];
    db += db_parts[e];
  }
}

void batchnorm_forward_train(const Tensor3& x, const Eigen::VectorXd& gamma,
                             const Eigen::VectorXd& beta, Tensor3& y, BnCache& cache) {
  const std::int64_t n = x.n, c = x.c, l = x.l;
  const double count = static_cast<double>(n * l);

  // Deterministic two-phase reduction: per-epoch partials, then a serial
  // sum in epoch order.
  Eigen::MatrixXd sum_parts = Eigen::MatrixXd::Zero(c, n), sq_parts = Eigen::MatrixXd::Zero(c, n);
  parallel_for(n, [&](std::int64_t e) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* row = x.at(e, ci);
      double s = 0.0, s2 = 0.0;
      for (std::int64_t t = 0; t < l; ++t) {
        s += row[t];
        s2 += row[t] * row[t];
      }
      sum_parts(ci, e) = s;
      sq_parts(ci, e) = s2;
    }
  });
  cache.mean = Eigen::VectorXd::Zero(c);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(c);
  for (std::int64_t e = 0; e < n; ++e) {
    cache.mean += sum_parts.col(e);
    sq += sq_parts.col(e);
  }
  cache.mean /= count;
  cache.inv_std.resize(c);
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const double var = sq[ci] / count - cache.mean[ci] * cache.mean[ci];
    cache.inv_std[ci] = 1.0 / std::sqrt(std::max(var, 0.0) + 1e-5);
  }

  cache.xhat = Tensor3(n, c, l);
  y = Tensor3(n, c, l);
  parallel_for(n, [&](std::int64_t e) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* row = x.at(e, ci);
      double* xh = cache.xhat.at(e, ci);
      double* out = y.at(e, ci);
      const double mu = cache.mean[ci], is = cache.inv_std[ci];
      const double g = gamma[ci], bt = beta[ci];
      for (std::int64_t t = 0; t < l; ++t) {
        xh[t] = (row[t] - mu) * is;
        out[t] = g * xh[t] + bt;
      }
    }
  });
}

void batchnorm_forward_eval(const Tensor3& x, const Eigen::VectorXd& gamma,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd& run_mean,
                            const Eigen::VectorXd& run_var, Tensor3& y) {
  for (std::int64_t ci = 0; ci < x.c; ++ci)
    if (!(run_var[ci] > 0))
      throw NumericError("batchnorm: ModeError (running statistics unavailable in eval mode)");
  y = Tensor3(x.n, x.c, x.l);
  parallel_for(x.n, [&](std::int64_t e) {
    for (std::int64_t ci = 0; ci < x.c; ++ci) {
      const double* row = x.at(e, ci);
      double* out = y.at(e, ci);
      const double mu = run_mean[ci];
      const double is = 1.0 / std::sqrt(run_var[ci] + 1e-5);
      const double g = gamma[ci], bt = beta[ci];
      for (std::int64_t t = 0; t < x.l; ++t) out[t] = g * (row[t] - mu) * is + bt;
    }
  });
}

void batchnorm_backward(const Tensor3& dy, const BnCache& cache, const Eigen::VectorXd& gamma,
                        Tensor3& dx, Eigen::VectorXd& dgamma, Eigen::VectorXd& dbeta) {
  const std::int64_t n = dy.n, c = dy.c, l = dy.l;
  const double count = static_cast<double>(n * l);

  Eigen::MatrixXd s_dy = Eigen::MatrixXd::Zero(c, n), s_dyx = Eigen::MatrixXd::Zero(c, n);
  parallel_for(n, [&](std::int64_t e) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* d = dy.at(e, ci);
      const double* xh = cache.xhat.at(e, ci);
      double a = 0.0, bsum = 0.0;
      for (std::int64_t t = 0; t < l; ++t) {
        a += d[t];
        bsum += d[t] * xh[t];
      }
      s_dy(ci, e) = a;
      s_dyx(ci, e) = bsum;
    }
  });
  dbeta = Eigen::VectorXd::Zero(c);
  dgamma = Eigen::VectorXd::Zero(c);
  for (std::int64_t e = 0; e < n; ++e) {
    dbeta += s_dy.col(e);
    dgamma += s_dyx.col(e);
  }

  dx = Tensor3(n, c, l);
  parallel_for(n, [&](std::int64_t e) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* d = dy.at(e, ci);
      const double* xh = cache.xhat.at(e, ci);
      double* out = dx.at(e, ci);
      const double g_is = gamma[ci] * cache.inv_std[ci];
      const double mean_dy = dbeta[ci] / count;
      const double mean_dyx = dgamma[ci] / count;
      for (std::int64_t t = 0; t < l; ++t)
        out[t] = g_is * (d[t] - mean_dy - xh[t] * mean_dyx);
    }
  });
}

void relu_forward(Tensor3& x) {
  parallel_for(x.n, [&](std::int64_t e) {
    double* p = x.at(e, 0);
    for (std::int64_t i = 0; i < x.c * x.l; ++i) p[i] = std::max(p[i], 0.0);
  });
}

void relu_backward(const Tensor3& y, Tensor3& dy) {
  parallel_for(y.n, [&](std::int64_t e) {
    const double* yp = y.at(e, 0);
    double* dp = dy.at(e, 0);
    for (std::int64_t i = 0; i < y.c * y.l; ++i)
      if (yp[i] <= 0.0) dp[i] = 0.0;
  });
}

void maxpool_forward(const Tensor3& x, int width, Tensor3& y, std::vector<std::int32_t>& argmax) {
  const std::int64_t lout = x.l / width;
  y = Tensor3(x.n, x.c, lout);
  argmax.assign(x.n * x.c * lout, 0);
  parallel_for(x.n, [&](std::int64_t e) {
    for (std::int64_t ci = 0; ci < x.c; ++ci) {
      const double* row = x.at(e, ci);
      double* out = y.at(e, ci);
      std::int32_t* am = argmax.data() + (e * x.c + ci) * lout;
      for (std::int64_t j = 0; j < lout; ++j) {
        std::int64_t best = j * width;
        for (std::int64_t t = j * width + 1; t < (j + 1) * width; ++t)
          if (row[t] > row[best]) best = t;  // first maximum wins ties
        out[j] = row[best];
        am[j] = static_cast<std::int32_t>(best);
      }
    }
  });
}

void maxpool_backward(const Tensor3& dy, const std::vector<std::int32_t>& argmax, Tensor3& dx) {
  const std::int64_t lout = dy.l;
  parallel_for(dy.n, [&](std::int64_t e) {
    for (std::int64_t ci = 0; ci < dy.c; ++ci) {
      const double* d = dy.at(e, ci);
      double* out = dx.at(e, ci);
      const std::int32_t* am = argmax.data() + (e * dy.c + ci) * lout;
      for (std::int64_t j = 0; j < lout; ++j) out[am[j]] += d[j];
    }
  });
}

namespace {
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

void lstm_forward(const LstmDirection& p, const Eigen::MatrixXd& inputs, bool reverse,
                  Eigen::MatrixXd& h_out, LstmCache& cache) {
  const Eigen::Index hid = p.wh.cols();
  const Eigen::Index t_len = inputs.cols();
  cache.gates.resize(4 * hid, t_len);
  cache.cells.resize(hid, t_len);
  cache.hidden.resize(hid, t_len);
  h_out.resize(hid, t_len);

  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(hid);
  Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(hid);
  Eigen::VectorXd a(4 * hid);
  for (Eigen::Index step = 0; step < t_len; ++step) {
    const Eigen::Index t = reverse ? t_len - 1 - step : step;
    a.noalias() = p.wx * inputs.col(t);
    a.noalias() += p.wh * h_prev;
    a += p.bias;
    auto gate = cache.gates.col(t);
    for (Eigen::Index j = 0; j < hid; ++j) {
      const double i = sigmoid(a[j]);
      const double f = sigmoid(a[hid + j]);
      const double g = std::tanh(a[2 * hid + j]);
      const double o = sigmoid(a[3 * hid + j]);
      gate[j] = i;
      gate[hid + j] = f;
      gate[2 * hid + j] = g;
      gate[3 * hid + j] = o;
      const double c = f * c_prev[j] + i * g;
      cache.cells(j, t) = c;
      cache.hidden(j, t) = o * std::tanh(c);
    }
    c_prev = cache.cells.col(t);
    h_prev = cache.hidden.col(t);
  }
  h_out = cache.hidden;
}

void lstm_backward(const LstmDirection& p, const Eigen::MatrixXd& inputs, bool reverse,
                   const LstmCache& cache, const Eigen::MatrixXd& dh_out, Eigen::MatrixXd& dinputs,
                   LstmDirection& grads) {
  const Eigen::Index hid = p.wh.cols();
  const Eigen::Index t_len = inputs.cols();
  dinputs = Eigen::MatrixXd::Zero(inputs.rows(), t_len);
  grads.wx = Eigen::MatrixXd::Zero(p.wx.rows(), p.wx.cols());
  grads.wh = Eigen::MatrixXd::Zero(p.wh.rows(), p.wh.cols());
  grads.bias = Eigen::VectorXd::Zero(p.bias.size());

  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(hid);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(hid);
  Eigen::VectorXd da(4 * hid);
  for (Eigen::Index step = t_len - 1; step >= 0; --step) {
    // reverse direction processed t_len-1..0 forward, so unwinds 0..t_len-1
    const Eigen::Index t = reverse ? t_len - 1 - step : step;
    const Eigen::Index t_prev_step = reverse ? t + 1 : t - 1;
    const bool has_prev = reverse ? (t + 1 < t_len) : (t > 0);

    Eigen::VectorXd dh = dh_out.col(t) + dh_next;
    const auto gate = cache.gates.col(t);
    Eigen::VectorXd dc = dc_next;
    for (Eigen::Index j = 0; j < hid; ++j) {
      const double i = gate[j], f = gate[hid + j], g = gate[2 * hid + j], o = gate[3 * hid + j];
      const double c = cache.cells(j, t);
      const double tc = std::tanh(c);
      const double do_ = dh[j] * tc;
      dc[j] += dh[j] * o * (1.0 - tc * tc);
      const double di = dc[j] * g;
      const double dg = dc[j] * i;
      const double c_prev = has_prev ? cache.cells(j, t_prev_step) : 0.0;
      const double df = dc[j] * c_prev;
      da[j] = di * i * (1.0 - i);
      da[hid + j] = df * f * (1.0 - f);
      da[2 * hid + j] = dg * (1.0 - g * g);
      da[3 * hid + j] = do_ * o * (1.0 - o);
      dc_next[j] = dc[j] * f;
    }
    grads.wx.noalias() += da * inputs.col(t).transpose();
    if (has_prev) grads.wh.noalias() += da * cache.hidden.col(t_prev_step).transpose();
    grads.bias += da;
    dinputs.col(t).noalias() += p.wx.transpose() * da;
    dh_next.noalias() = p.wh.transpose() * da;
  }
}

Eigen::MatrixXd softmax_rows(Eigen::MatrixXd scores) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    scores.row(i) = (scores.row(i).array() - mx).exp();
    scores.row(i) /= scores.row(i).sum();
  }
  return scores;
}

}  // namespace nn

// --- model -----------------------------------------------------------------

namespace {

void validate_shapes(const EmbedderConfig& c) {
  if (c.input_channels <= 0 || c.input_length <= 0 || c.lstm_hidden <= 0)
    throw ConfigError("embedder config: dimensions must be positive");
  if (c.conv_out_channels.size() != c.conv_kernels.size() ||
      c.conv_kernels.size() != c.pool_widths.size() || c.conv_out_channels.empty())
    throw ConfigError("embedder config: layer lists must have equal nonzero length");
  int len = c.input_length;
  for (size_t i = 0; i < c.conv_kernels.size(); ++i) {
    if (c.conv_kernels[i] > len)
      throw ConfigError("ShapeInfeasible: kernel " + std::to_string(c.conv_kernels[i]) +
                        " exceeds sequence length " + std::to_string(len));
    len /= c.pool_widths[i];
    if (len < 1) throw ConfigError("ShapeInfeasible: pooling reduces length below 1");
  }
}

int flatten_dim(const EmbedderConfig& c) {
  int len = c.input_length;
  for (size_t i = 0; i < c.pool_widths.size(); ++i) len /= c.pool_widths[i];
  return len * c.conv_out_channels.back();
}

void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, double bound, Rng& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
}

struct StackCache {
  std::vector<Tensor3> inputs;    // inputs[i] feeds block i; inputs.back() = final pooled
  std::vector<nn::BnCache> bn;
  std::vector<Tensor3> postrelu;  // pool input (also the ReLU mask)
  std::vector<std::vector<std::int32_t>> argmax;
  Eigen::MatrixXd lstm_in;  // flat_dim x T
  nn::LstmCache fwd, bwd;
};

Tensor3 slice_epochs(const EpochSet& epochs, std::int64_t begin, std::int64_t count) {
  Tensor3 x(count, epochs.c(), epochs.l());
  std::copy(epochs.data.begin() + begin * epochs.c() * epochs.l(),
            epochs.data.begin() + (begin + count) * epochs.c() * epochs.l(), x.v.begin());
  return x;
}

ForwardResult run_forward(const EmbedderModel& model, Tensor3 x, bool train_mode,
                          StackCache* cache, EmbedderModel* running_update) {
  const auto& cfg = model.config;
  const std::int64_t n = x.n;
  StackCache local;
  StackCache& cc = cache ? *cache : local;
  cc.inputs.clear();
  cc.bn.resize(model.blocks.size());
  cc.postrelu.resize(model.blocks.size());
  cc.argmax.resize(model.blocks.size());

  cc.inputs.push_back(std::move(x));
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    const ConvBlock& blk = model.blocks[i];
    Tensor3 z;
    nn::conv_forward(cc.inputs[i], blk.w, blk.b, z);
    Tensor3 y;
    if (train_mode) {
      nn::batchnorm_forward_train(z, blk.bn_gamma, blk.bn_beta, y, cc.bn[i]);
      if (running_update) {
        // momentum 0.1
        ConvBlock& mut = running_update->blocks[i];
        for (Eigen::Index ci = 0; ci < mut.bn_run_mean.size(); ++ci) {
          const double var = 1.0 / (cc.bn[i].inv_std[ci] * cc.bn[i].inv_std[ci]) - 1e-5;
          mut.bn_run_mean[ci] = 0.9 * mut.bn_run_mean[ci] + 0.1 * cc.bn[i].mean[ci];
          mut.bn_run_var[ci] = 0.9 * mut.bn_run_var[ci] + 0.1 * var;
        }
      }
    } else {
      nn::batchnorm_forward_eval(z, blk.bn_gamma, blk.bn_beta, blk.bn_run_mean, blk.bn_run_var, y);
    }
    nn::relu_forward(y);
    cc.postrelu[i] = std::move(y);
    Tensor3 pooled;
    nn::maxpool_forward(cc.postrelu[i], blk.pool, pooled, cc.argmax[i]);
    cc.inputs.push_back(std::move(pooled));
    if (!cache && i > 0) cc.bn[i - 1] = nn::BnCache{};  // inference: drop stale caches
  }

  // Flatten: the n pooled maps become the LSTM input sequence.
  const Tensor3& last = cc.inputs.back();
  const std::int64_t flat = last.c * last.l;
  cc.lstm_in.resize(flat, n);
  for (std::int64_t e = 0; e < n; ++e)
    std::copy(last.at(e, 0), last.at(e, 0) + flat, cc.lstm_in.data() + e * flat);

  Eigen::MatrixXd h_fwd, h_bwd;
  nn::lstm_forward(model.lstm_fwd, cc.lstm_in, false, h_fwd, cc.fwd);
  nn::lstm_forward(model.lstm_bwd, cc.lstm_in, true, h_bwd, cc.bwd);

  ForwardResult result;
  const int hid = cfg.lstm_hidden;
  result.embeddings.resize(n, cfg.embedding_dim());
  for (std::int64_t e = 0; e < n; ++e) {
    result.embeddings.row(e).head(hid) = h_fwd.col(e).transpose();
    result.embeddings.row(e).tail(hid) = h_bwd.col(e).transpose();
  }
  result.logits = result.embeddings * model.head_w;
  result.logits.rowwise() += model.head_b.transpose();
  result.probabilities = nn::softmax_rows(result.logits);
  return result;
}

}  // namespace

EmbedderModel init_model(const EmbedderConfig& config) {
  validate_shapes(config);
  EmbedderModel model;
  model.config = config;
  Rng rng(config.seed);

  int cin = config.input_channels;
  for (size_t i = 0; i < config.conv_out_channels.size(); ++i) {
    ConvBlock blk;
    blk.in_channels = cin;
    blk.kernel = config.conv_kernels[i];
    blk.pool = config.pool_widths[i];
    const int cout = config.conv_out_channels[i];
    blk.w.resize(cout, cin * blk.kernel);
    fill_uniform(blk.w, 1.0 / std::sqrt(static_cast<double>(cin * blk.kernel)), rng);
    blk.b = Eigen::VectorXd::Zero(cout);
    blk.bn_gamma = Eigen::VectorXd::Ones(cout);
    blk.bn_beta = Eigen::VectorXd::Zero(cout);
    blk.bn_run_mean = Eigen::VectorXd::Zero(cout);
    blk.bn_run_var = Eigen::VectorXd::Ones(cout);
    model.blocks.push_back(std::move(blk));
    cin = cout;
  }

  const int flat = flatten_dim(config);
  const int hid = config.lstm_hidden;
  for (LstmDirection* dir : {&model.lstm_fwd, &model.lstm_bwd}) {
    dir->wx.resize(4 * hid, flat);
    fill_uniform(dir->wx, 1.0 / std::sqrt(static_cast<double>(flat)), rng);
    dir->wh.resize(4 * hid, hid);
    fill_uniform(dir->wh, 1.0 / std::sqrt(static_cast<double>(hid)), rng);
    dir->bias = Eigen::VectorXd::Zero(4 * hid);
  }
  model.head_w.resize(config.embedding_dim(), config.num_classes);
  fill_uniform(model.head_w, 1.0 / std::sqrt(static_cast<double>(config.embedding_dim())), rng);
  model.head_b = Eigen::VectorXd::Zero(config.num_classes);
  return model;
}

ForwardResult forward(const EmbedderModel& model, const EpochSet& epochs, std::int64_t begin,
                      std::int64_t count) {
  if (count < 0) count = epochs.n() - begin;
  if (epochs.c() != model.config.input_channels || epochs.l() != model.config.input_length)
    throw DataError("forward: ShapeMismatch against embedder config");
  if (count > model.config.max_sequence) throw DataError("forward: sequence exceeds max_sequence");
  return run_forward(model, slice_epochs(epochs, begin, count), model.training, nullptr, nullptr);
}

double loss(const Eigen::MatrixXd& probabilities, const std::vector<Stage>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probabilities.rows())
    throw DataError("loss: label count mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i)
    total -= std::log(std::max(probabilities(i, static_cast<int>(labels[i])), 1e-12));
  return total / probabilities.rows();
}

namespace {

struct AdamState {
  std::map<std::string, Eigen::MatrixXd> m, v;
  std::int64_t step = 0;
};

// One optimizer step on one contiguous sequence.
double train_step(EmbedderModel& model, const EpochSet& epochs, std::int64_t begin,
                  std::int64_t count, AdamState& adam) {
  const auto& cfg = model.config;
  StackCache cache;
  const ForwardResult fwd =
      run_forward(model, slice_epochs(epochs, begin, count), true, &cache, &model);

  std::vector<Stage> labels(epochs.labels.begin() + begin, epochs.labels.begin() + begin + count);
  const double batch_loss = loss(fwd.probabilities, labels);
  if (!std::isfinite(batch_loss))
    throw NumericError("train: NonFiniteLoss at step " + std::to_string(adam.step));

  // Combined softmax + cross-entropy gradient: (s - y) / n.
  Eigen::MatrixXd dlogits = fwd.probabilities;
  for (std::int64_t i = 0; i < count; ++i) dlogits(i, static_cast<int>(labels[i])) -= 1.0;
  dlogits /= static_cast<double>(count);

  EmbedderModel grads = model;  // same shapes; values overwritten below
  grads.head_w = fwd.embeddings.transpose() * dlogits;
  grads.head_b = dlogits.colwise().sum().transpose();
  Eigen::MatrixXd demb = dlogits * model.head_w.transpose();  // n x D

  const int hid = cfg.lstm_hidden;
  Eigen::MatrixXd dh_fwd(hid, count), dh_bwd(hid, count);
  for (std::int64_t e = 0; e < count; ++e) {
    dh_fwd.col(e) = demb.row(e).head(hid).transpose();
    dh_bwd.col(e) = demb.row(e).tail(hid).transpose();
  }
  Eigen::MatrixXd dlstm_in_f, dlstm_in_b;
  nn::lstm_backward(model.lstm_fwd, cache.lstm_in, false, cache.fwd, dh_fwd, dlstm_in_f,
                    grads.lstm_fwd);
  nn::lstm_backward(model.lstm_bwd, cache.lstm_in, true, cache.bwd, dh_bwd, dlstm_in_b,
                    grads.lstm_bwd);
  Eigen::MatrixXd dflat = dlstm_in_f + dlstm_in_b;  // flat x n

  // Un-flatten into the last pooled tensor and walk the conv stack back.
  const Tensor3& last = cache.inputs.back();
  Tensor3 dpool(last.n, last.c, last.l);
  for (std::int64_t e = 0; e < count; ++e)
    std::copy(dflat.data() + e * dflat.rows(), dflat.data() + (e + 1) * dflat.rows(),
              dpool.at(e, 0));

  for (int i = static_cast<int>(model.blocks.size()) - 1; i >= 0; --i) {
    ConvBlock& gblk = grads.blocks[i];
    Tensor3 drelu(cache.postrelu[i].n, cache.postrelu[i].c, cache.postrelu[i].l);
    nn::maxpool_backward(dpool, cache.argmax[i], drelu);
    nn::relu_backward(cache.postrelu[i], drelu);
    Tensor3 dz;
    Eigen::VectorXd dgamma, dbeta;
    nn::batchnorm_backward(drelu, cache.bn[i], model.blocks[i].bn_gamma, dz, dgamma, dbeta);
    gblk.bn_gamma = dgamma;
    gblk.bn_beta = dbeta;
    Tensor3 dx;
    nn::conv_backward(cache.inputs[i], model.blocks[i].w, dz, dx, gblk.w, gblk.b);
    dpool = std::move(dx);
  }

  // Adam update.
  ++adam.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
  for_each_param(model, [&](const std::string& name, auto& param) {
    Eigen::MatrixXd g;
    for_each_param(grads, [&](const std::string& gname, auto& gparam) {
      if (gname == name) g = gparam;
    });
    auto& m = adam.m[name];
    auto& v = adam.v[name];
    if (m.size() == 0) {
      m = Eigen::MatrixXd::Zero(g.rows(), g.cols());
      v = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    }
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v.array().matrix() + (1.0 - b2) * g.array().square().matrix();
    const Eigen::ArrayXXd update =
        (m.array() / bias1) / ((v.array() / bias2).sqrt() + cfg.adam_eps);
    param -= (cfg.learning_rate * update).matrix();
  });
  return batch_loss;
}

std::vector<std::pair<std::int64_t, std::int64_t>> sequence_chunks(const EpochSet& epochs,
                                                                   int max_sequence) {
  std::vector<std::pair<std::int64_t, std::int64_t>> chunks;  // (begin, count)
  std::int64_t begin = 0;
  for (std::int64_t i = 1; i <= epochs.n(); ++i) {
    if (i == epochs.n() || epochs.subject_ids[i] != epochs.subject_ids[begin]) {
      for (std::int64_t s = begin; s < i; s += max_sequence)
        chunks.push_back({s, std::min<std::int64_t>(max_sequence, i - s)});
      begin = i;
    }
  }
  return chunks;
}

}  // namespace

TrainStats train(EmbedderModel& model, const EpochSet& epochs, const EmbedderConfig& config) {
  model.config = config;
  model.training = true;
  TrainStats stats;
  AdamState adam;
  auto chunks = sequence_chunks(epochs, config.max_sequence);
  Rng shuffle_rng(Rng(config.seed).derive(4).next_u64());

  for (int ep = 0; ep < config.train_epochs; ++ep) {
    // Seeded Fisher-Yates over recording chunks.
    for (std::int64_t i = static_cast<std::int64_t>(chunks.size()) - 1; i > 0; --i)
      std::swap(chunks[i], chunks[shuffle_rng.below(i + 1)]);
    for (const auto& [begin, count] : chunks)
      stats.loss_trace.push_back(train_step(model, epochs, begin, count, adam));
  }
  model.training = false;  // frozen batch-norm statistics from here on
  return stats;
}

Eigen::MatrixXd extract_embeddings(const EmbedderModel& model, const EpochSet& epochs) {
  if (epochs.c() != model.config.input_channels || epochs.l() != model.config.input_length)
    throw DataError("extract_embeddings: ShapeMismatch against embedder config");
  Eigen::MatrixXd out(epochs.n(), model.config.embedding_dim());
  EmbedderModel eval_model = model;
  eval_model.training = false;
  for (const auto& [begin, count] : sequence_chunks(epochs, model.config.max_sequence)) {
    const ForwardResult r =
        run_forward(eval_model, slice_epochs(epochs, begin, count), false, nullptr, nullptr);
    out.middleRows(begin, count) = r.embeddings;
  }
  return out;
}

void write_loss_trace_csv(const TrainStats& stats, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "step,loss\n";
  for (size_t i = 0; i < stats.loss_trace.size(); ++i) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, stats.loss_trace[i]);
    out << buf;
  }
}

}  // namespace serf
