#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trigada/common.hpp"

namespace trigada {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
/// Time-major sequence: one (dim x batch) matrix per position.
using Seq = std::vector<Mat>;
/// One (1 x batch) 0/1 row per position.
using SeqMask = std::vector<RowVec>;

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)), trainable(train) {}
  void zero_grad() { grad.setZero(); }
};

void init_uniform(Param& p, Rng& rng, double bound);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out);

  Mat forward(const Mat& x) const;
  /// Accumulates parameter gradients; returns the input gradient.
  Mat backward(const Mat& x, const Mat& dy);
  void init(Rng& rng);
  void collect(std::vector<Param*>& out);
  Eigen::Index in_dim() const { return weight.value.cols(); }
  Eigen::Index out_dim() const { return weight.value.rows(); }

  Param weight;
  Param bias;
};

// Linear layers with ReLU between them. `hidden` lists the widths of the
// hidden layers; the last layer is a plain linear map to `out`.
class Mlp {
 public:
  struct Cache {
    std::vector<Mat> inputs;
    std::vector<Mat> pre;
  };

  Mlp() = default;
  Mlp(const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out);

  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void init(Rng& rng);
  void collect(std::vector<Param*>& out);
  const std::vector<Linear>& layers() const { return layers_; }
  std::vector<Linear>& layers() { return layers_; }

 private:
  std::vector<Linear> layers_;
};

// Single-direction LSTM over a masked, right-padded batch. Padded columns
// carry the previous state through unchanged, so a reversed pass starts
// from a zero state at each sentence's last real token.
class Lstm {
 public:
  struct Step {
    Mat x, h_prev, c_prev, i, f, g, o, c, tanh_c;
    RowVec m;
  };
  struct Cache {
    std::vector<Step> steps;  // processing order
  };

  Lstm() = default;
  Lstm(const std::string& name, Eigen::Index in, Eigen::Index hidden);

  Seq forward(const Seq& x, const SeqMask& mask, bool reverse, Cache* cache) const;
  /// dy is indexed by position; returns dx indexed by position.
  Seq backward(const Cache& cache, const Seq& dy, bool reverse);
  void init(Rng& rng);
  void collect(std::vector<Param*>& out);
  Eigen::Index hidden() const { return w_hh.value.cols(); }

  Param w_ih;  // 4H x in, gate order i, f, g, o
  Param w_hh;  // 4H x H
  Param bias;  // 4H x 1
};

inline constexpr double kLstmInitBound = 0.08;
inline constexpr double kForgetBiasInit = 1.0;

enum class PoolMode { MEAN, MAX, LAST };

const char* to_string(PoolMode m);
PoolMode parse_pool_mode(const std::string& s);

class Pooler {
 public:
  struct Cache {
    std::vector<Eigen::Index> length;
    std::vector<Eigen::Index> last;
    SeqMask mask;
    Eigen::MatrixXi argmax;  // MAX: position per (dim, batch)
    Eigen::Index dim = 0;
    std::size_t steps = 0;
  };

  explicit Pooler(PoolMode mode = PoolMode::MEAN) : mode_(mode) {}
  PoolMode mode() const { return mode_; }

  /// Returns (dim x batch). Every batch column needs at least one unmasked position.
  Mat forward(const Seq& h, const SeqMask& mask, Cache* cache) const;
  Seq backward(const Cache& cache, const Mat& dpooled) const;

 private:
  PoolMode mode_;
};

// Identity forward; the backward pass multiplies upstream gradients by -lambda.
class GradientReversal {
 public:
  explicit GradientReversal(double lambda = 1.0);
  double lambda() const { return lambda_; }
  const Mat& forward(const Mat& v) const { return v; }
  Mat backward(const Mat& upstream) const { return -lambda_ * upstream; }

 private:
  double lambda_;
};

struct LossAndGrad {
  double loss = 0.0;
  Mat grad;  // same shape as the logits
};

/// Mean negative log-likelihood over columns with target >= 0. Throws when
/// no column is labeled.
LossAndGrad token_cross_entropy(const Mat& logits, std::span<const int> targets);
/// Sum over labeled columns of weight * NLL. Weights of unlabeled columns are ignored.
LossAndGrad weighted_cross_entropy(const Mat& logits, std::span<const int> targets, std::span<const double> weights);

/// Column-wise log-softmax.
Mat log_softmax(const Mat& logits);

/// Inverted dropout mask (entries 0 or 1/(1-p)).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);

Mat stack_columns(const Seq& seq);
Seq unstack_columns(const Mat& flat, std::size_t steps);

}  // namespace trigada
