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

#ifndef SERF_EMBEDNET_HPP_
#define SERF_EMBEDNET_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "serf/common.hpp"
#include "serf/psg_io.hpp"

namespace serf {

struct EmbedderConfig {
  std::vector<int> conv_out_channels = {256, 128, 64};
  std::vector<int> conv_kernels = {201, 11, 11};
  std::vector<int> pool_widths = {4, 4, 4};
  int lstm_hidden = 256;  // per direction; D = 2 * lstm_hidden
  int num_classes = kNumStages;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int train_epochs = 20;
  int max_sequence = 1000;  // epochs per optimizer step
  std::uint64_t seed = 0;
  int input_channels = 0;
  int input_length = 0;

  int embedding_dim() const { return 2 * lstm_hidden; }
};

// batch of epochs: n x channels x length, epoch-major
struct Tensor3 {
  std::int64_t n = 0, c = 0, l = 0;
  std::vector<double> v;

  Tensor3() = default;
  Tensor3(std::int64_t n_, std::int64_t c_, std::int64_t l_) : n(n_), c(c_), l(l_), v(n_ * c_ * l_, 0.0) {}
  double* at(std::int64_t e, std::int64_t ch) { return v.data() + (e * c + ch) * l; }
  const double* at(std::int64_t e, std::int64_t ch) const { return v.data() + (e * c + ch) * l; }
};

struct ConvBlock {
  Eigen::MatrixXd w;  // C_out x (C_in * K)
  Eigen::VectorXd b;  // C_out
  Eigen::VectorXd bn_gamma, bn_beta;
  Eigen::VectorXd bn_run_mean, bn_run_var;
  int in_channels = 0, kernel = 0, pool = 0;
};

struct LstmDirection {
  Eigen::MatrixXd wx;   // 4H x In  (gate order i, f, g, o)
  Eigen::MatrixXd wh;   // 4H x H
  Eigen::VectorXd bias; // 4H
};

struct EmbedderModel {
  EmbedderConfig config;
  std::vector<ConvBlock> blocks;
  LstmDirection lstm_fwd, lstm_bwd;
  Eigen::MatrixXd head_w;  // D x classes
  Eigen::VectorXd head_b;
  bool training = true;
};

struct ForwardResult {
  Eigen::MatrixXd embeddings;     // n x D
  Eigen::MatrixXd logits;         // n x classes
  Eigen::MatrixXd probabilities;  // n x classes, rows sum to 1
};

struct TrainStats {
  std::vector<double> loss_trace;  // one entry per optimizer step
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
// batch-norm scale 1 / shift 0; deterministic in config.seed.
EmbedderModel init_model(const EmbedderConfig& config);

// Full sequence pass for contiguous epochs of one recording.
ForwardResult forward(const EmbedderModel& model, const EpochSet& epochs, std::int64_t begin = 0,
                      std::int64_t count = -1);

// Mean cross-entropy with the log clamped at 1e-12.
double loss(const Eigen::MatrixXd& probabilities, const std::vector<Stage>& labels);

// Adam over per-recording sequences of up to max_sequence epochs,
// recording order shuffled per training epoch. Leaves the model in eval
// mode with frozen batch-norm statistics.
TrainStats train(EmbedderModel& model, const EpochSet& epochs, const EmbedderConfig& config);

// N x D matrix aligned with the epoch order; eval-mode batch norm.
Eigen::MatrixXd extract_embeddings(const EmbedderModel& model, const EpochSet& epochs);

void write_loss_trace_csv(const TrainStats& stats, const std::string& path);

// Apply fn(name, matrix) to every trainable parameter, fixed order.
template <typename Fn>
void for_each_param(EmbedderModel& model, Fn&& fn) {
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    auto& blk = model.blocks[i];
    const std::string p = "conv" + std::to_string(i) + "/";
    fn(p + "w", blk.w);
    fn(p + "b", blk.b);
    fn(p + "bn_gamma", blk.bn_gamma);
    fn(p + "bn_beta", blk.bn_beta);
  }
  fn("lstm_fwd/wx", model.lstm_fwd.wx);
  fn("lstm_fwd/wh", model.lstm_fwd.wh);
  fn("lstm_fwd/bias", model.lstm_fwd.bias);
  fn("lstm_bwd/wx", model.lstm_bwd.wx);
  fn("lstm_bwd/wh", model.lstm_bwd.wh);
  fn("lstm_bwd/bias", model.lstm_bwd.bias);
  fn("head/w", model.head_w);
  fn("head/b", model.head_b);
}

// --- layer primitives, exposed for the gradient-check suite ---------------

namespace nn {

// "same" zero padding, stride 1.
void conv_forward(const Tensor3& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                  Tensor3& z);
void conv_backward(const Tensor3& x, const Eigen::MatrixXd& w, const Tensor3& dz, Tensor3& dx,
                   Eigen::MatrixXd& dw, Eigen::VectorXd& db);

struct BnCache {
  Eigen::VectorXd mean, inv_std;
  Tensor3 xhat;
};
// Train-mode batch norm over the (epoch x time) axes per channel.
void batchnorm_forward_train(const Tensor3& x, const Eigen::VectorXd& gamma,
                             const Eigen::VectorXd& beta, Tensor3& y, BnCache& cache);
void batchnorm_forward_eval(const Tensor3& x, const Eigen::VectorXd& gamma,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd& run_mean,
                            const Eigen::VectorXd& run_var, Tensor3& y);
void batchnorm_backward(const Tensor3& dy, const BnCache& cache, const Eigen::VectorXd& gamma,
                        Tensor3& dx, Eigen::VectorXd& dgamma, Eigen::VectorXd& dbeta);

void relu_forward(Tensor3& x);  // in place
void relu_backward(const Tensor3& y, Tensor3& dy);  // masks dy in place by y > 0

void maxpool_forward(const Tensor3& x, int width, Tensor3& y, std::vector<std::int32_t>& argmax);
void maxpool_backward(const Tensor3& dy, const std::vector<std::int32_t>& argmax, Tensor3& dx);

struct LstmCache {
  Eigen::MatrixXd gates;  // 4H x T (post-nonlinearity)
  Eigen::MatrixXd cells;  // H x T
  Eigen::MatrixXd hidden; // H x T
};
// One direction over a T-step sequence of column inputs (In x T).
// reverse=true processes t = T-1 .. 0.
void lstm_forward(const LstmDirection& p, const Eigen::MatrixXd& inputs, bool reverse,
                  Eigen::MatrixXd& h_out, LstmCache& cache);
void lstm_backward(const LstmDirection& p, const Eigen::MatrixXd& inputs, bool reverse,
                   const LstmCache& cache, const Eigen::MatrixXd& dh_out, Eigen::MatrixXd& dinputs,
                   LstmDirection& grads);

Eigen::MatrixXd softmax_rows(Eigen::MatrixXd scores);

}  // namespace nn

}  // namespace serf

#endif  // SERF_EMBEDNET_HPP_
