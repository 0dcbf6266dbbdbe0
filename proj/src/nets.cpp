#include "trigada/nets.hpp"

#include <cmath>
#include <limits>

#include "trigada/kv.hpp"

namespace trigada {

namespace {

Mat sigmoid(const Mat& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

}  // namespace

void init_uniform(Param& p, Rng& rng, double bound) {
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = rng.uniform(-bound, bound);
}

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out)
    : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {}

Mat Linear::forward(const Mat& x) const {
  Mat y = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy) {
  weight.grad.noalias() += dy * x.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  return weight.value.transpose() * dy;
}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
  init_uniform(weight, rng, bound);
  init_uniform(bias, rng, bound);
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out) {
  Eigen::Index prev = in;
  for (std::size_t k = 0; k < hidden.size(); ++k) {
    layers_.emplace_back(name + ".l" + std::to_string(k), prev, hidden[k]);
    prev = hidden[k];
  }
  layers_.emplace_back(name + ".out", prev, out);
}

Mat Mlp::forward(const Mat& x, Cache* cache) const {
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Mat a = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Mat z = layers_[k].forward(a);
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->pre.push_back(z);
    }
    if (k + 1 < layers_.size())
      a = z.cwiseMax(0.0);
    else
      a = std::move(z);
  }
  return a;
}

Mat Mlp::backward(const Cache& cache, const Mat& dy) {
  Mat d = dy;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) d = d.cwiseProduct((cache.pre[k].array() > 0.0).cast<double>().matrix());
    d = layers_[k].backward(cache.inputs[k], d);
  }
  return d;
}

void Mlp::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

void Mlp::collect(std::vector<Param*>& out) {
  for (auto& l : layers_) l.collect(out);
}

Lstm::Lstm(const std::string& name, Eigen::Index in, Eigen::Index hidden)
    : w_ih(name + ".w_ih", 4 * hidden, in), w_hh(name + ".w_hh", 4 * hidden, hidden), bias(name + ".bias", 4 * hidden, 1) {}

void Lstm::init(Rng& rng) {
  init_uniform(w_ih, rng, kLstmInitBound);
  init_uniform(w_hh, rng, kLstmInitBound);
  init_uniform(bias, rng, kLstmInitBound);
  const Eigen::Index h = hidden();
  bias.value.block(h, 0, h, 1).setConstant(kForgetBiasInit);
}

void Lstm::collect(std::vector<Param*>& out) {
  out.push_back(&w_ih);
  out.push_back(&w_hh);
  out.push_back(&bias);
}

Seq Lstm::forward(const Seq& x, const SeqMask& mask, bool reverse, Cache* cache) const {
  const std::size_t steps = x.size();
  if (steps == 0) return {};
  const Eigen::Index batch = x[0].cols();
  const Eigen::Index hd = hidden();
  Mat h = Mat::Zero(hd, batch);
  Mat c = Mat::Zero(hd, batch);
  Seq y(steps);
  if (cache) {
    cache->steps.clear();
    cache->steps.reserve(steps);
  }
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    Mat z = w_ih.value * x[t];
    z.noalias() += w_hh.value * h;
    z.colwise() += bias.value.col(0);
    Mat i = sigmoid(z.topRows(hd));
    Mat f = sigmoid(z.middleRows(hd, hd));
    Mat g = z.middleRows(2 * hd, hd).array().tanh().matrix();
    Mat o = sigmoid(z.bottomRows(hd));
    Mat cn = f.cwiseProduct(c) + i.cwiseProduct(g);
    Mat tc = cn.array().tanh().matrix();
    Mat hn = o.cwiseProduct(tc);
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (mask[t](b) == 0.0) {
        cn.col(b) = c.col(b);
        hn.col(b) = h.col(b);
      }
    }
    if (cache)
      cache->steps.push_back(Step{x[t], std::move(h), std::move(c), std::move(i), std::move(f), std::move(g),
                                  std::move(o), Mat(), std::move(tc), mask[t]});
    h = std::move(hn);
    c = std::move(cn);
    y[t] = h;
  }
  return y;
}

Seq Lstm::backward(const Cache& cache, const Seq& dy, bool reverse) {
  const std::size_t steps = cache.steps.size();
  Seq dx(steps);
  if (steps == 0) return dx;
  const Eigen::Index hd = hidden();
  const Eigen::Index batch = cache.steps[0].x.cols();
  Mat dh = Mat::Zero(hd, batch);
  Mat dc = Mat::Zero(hd, batch);
  Mat dz(4 * hd, batch);
  for (std::size_t k = steps; k-- > 0;) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    const Step& s = cache.steps[k];
    const Mat dht = dy[t] + dh;
    const Mat dcn = dc + dht.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix());
    const auto one = [](const Mat& a) { return (a.array() * (1.0 - a.array())).matrix(); };
    dz.topRows(hd) = dcn.cwiseProduct(s.g).cwiseProduct(one(s.i));
    dz.middleRows(hd, hd) = dcn.cwiseProduct(s.c_prev).cwiseProduct(one(s.f));
    dz.middleRows(2 * hd, hd) = dcn.cwiseProduct(s.i).cwiseProduct((1.0 - s.g.array().square()).matrix());
    dz.bottomRows(hd) = dht.cwiseProduct(s.tanh_c).cwiseProduct(one(s.o));
    Mat dc_prev = dcn.cwiseProduct(s.f);
    for (Eigen::Index b = 0; b < batch; ++b)
      if (s.m(b) == 0.0) dz.col(b).setZero();

    w_ih.grad.noalias() += dz * s.x.transpose();
    w_hh.grad.noalias() += dz * s.h_prev.transpose();
    bias.grad.col(0) += dz.rowwise().sum();
    dx[t] = w_ih.value.transpose() * dz;
    dh = w_hh.value.transpose() * dz;
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (s.m(b) == 0.0) {
        dh.col(b) = dht.col(b);
        dc_prev.col(b) = dc.col(b);
      }
    }
    dc = std::move(dc_prev);
  }
  return dx;
}

const char* to_string(PoolMode m) {
  switch (m) {
    case PoolMode::MEAN: return "mean";
    case PoolMode::MAX: return "max";
    case PoolMode::LAST: return "last";
  }
  return "?";
}

PoolMode parse_pool_mode(const std::string& s) {
  const auto v = to_lower(s);
  if (v == "mean") return PoolMode::MEAN;
  if (v == "max") return PoolMode::MAX;
  if (v == "last") return PoolMode::LAST;
  throw ConfigError("unknown pooling mode '" + s + "'");
}

Mat Pooler::forward(const Seq& h, const SeqMask& mask, Cache* cache) const {
  if (h.empty()) throw ValidationError("pooling over an empty sequence");
  const Eigen::Index dim = h[0].rows();
  const Eigen::Index batch = h[0].cols();
  const std::size_t steps = h.size();
  std::vector<Eigen::Index> length(static_cast<std::size_t>(batch), 0);
  std::vector<Eigen::Index> last(static_cast<std::size_t>(batch), -1);
  for (std::size_t t = 0; t < steps; ++t)
    for (Eigen::Index b = 0; b < batch; ++b)
      if (mask[t](b) != 0.0) {
        ++length[static_cast<std::size_t>(b)];
        last[static_cast<std::size_t>(b)] = static_cast<Eigen::Index>(t);
      }
  for (auto n : length)
    if (n == 0) throw ValidationError("pooling over an all-masked row");

  Mat out = Mat::Zero(dim, batch);
  Eigen::MatrixXi argmax;
  switch (mode_) {
    case PoolMode::MEAN:
      for (std::size_t t = 0; t < steps; ++t)
        for (Eigen::Index b = 0; b < batch; ++b)
          if (mask[t](b) != 0.0) out.col(b) += h[t].col(b);
      for (Eigen::Index b = 0; b < batch; ++b) out.col(b) /= static_cast<double>(length[static_cast<std::size_t>(b)]);
      break;
    case PoolMode::MAX:
      argmax = Eigen::MatrixXi::Constant(dim, batch, -1);
      out.setConstant(-std::numeric_limits<double>::infinity());
      for (std::size_t t = 0; t < steps; ++t)
        for (Eigen::Index b = 0; b < batch; ++b) {
          if (mask[t](b) == 0.0) continue;
          for (Eigen::Index d = 0; d < dim; ++d)
            if (h[t](d, b) > out(d, b)) {
              out(d, b) = h[t](d, b);
              argmax(d, b) = static_cast<int>(t);
            }
        }
      break;
    case PoolMode::LAST:
      for (Eigen::Index b = 0; b < batch; ++b)
        out.col(b) = h[static_cast<std::size_t>(last[static_cast<std::size_t>(b)])].col(b);
      break;
  }
  if (cache) {
    cache->length = length;
    cache->argmax = std::move(argmax);
    cache->dim = dim;
    cache->steps = steps;
    cache->last = std::move(last);
    cache->mask = mask;
  }
  return out;
}

Seq Pooler::backward(const Cache& cache, const Mat& dpooled) const {
  const Eigen::Index batch = dpooled.cols();
  Seq dh(cache.steps, Mat::Zero(cache.dim, batch));
  switch (mode_) {
    case PoolMode::MEAN:
      for (std::size_t t = 0; t < cache.steps; ++t)
        for (Eigen::Index b = 0; b < batch; ++b)
          if (cache.mask[t](b) != 0.0)
            dh[t].col(b) = dpooled.col(b) / static_cast<double>(cache.length[static_cast<std::size_t>(b)]);
      break;
    case PoolMode::MAX:
      for (Eigen::Index b = 0; b < batch; ++b)
        for (Eigen::Index d = 0; d < cache.dim; ++d)
          dh[static_cast<std::size_t>(cache.argmax(d, b))](d, b) += dpooled(d, b);
      break;
    case PoolMode::LAST:
      for (Eigen::Index b = 0; b < batch; ++b)
        dh[static_cast<std::size_t>(cache.last[static_cast<std::size_t>(b)])].col(b) += dpooled.col(b);
      break;
  }
  return dh;
}

GradientReversal::GradientReversal(double lambda) : lambda_(lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("gradient reversal lambda must be non-negative");
}

Mat log_softmax(const Mat& logits) {
  Mat out = logits;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.col(j).array() -= lse;
  }
  return out;
}

LossAndGrad weighted_cross_entropy(const Mat& logits, std::span<const int> targets, std::span<const double> weights) {
  if (targets.size() != static_cast<std::size_t>(logits.cols()) || weights.size() != targets.size())
    throw ValidationError("cross entropy: logits, targets and weights disagree in length");
  const Mat lp = log_softmax(logits);
  LossAndGrad r{0.0, Mat::Zero(logits.rows(), logits.cols())};
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = targets[static_cast<std::size_t>(j)];
    if (y < 0) continue;
    if (y >= logits.rows()) throw ValidationError("cross entropy: target class out of range");
    const double w = weights[static_cast<std::size_t>(j)];
    r.loss -= w * lp(y, j);
    r.grad.col(j) = w * lp.col(j).array().exp().matrix();
    r.grad(y, j) -= w;
  }
  return r;
}

LossAndGrad token_cross_entropy(const Mat& logits, std::span<const int> targets) {
  std::size_t n = 0;
  for (int y : targets) n += y >= 0;
  if (n == 0) throw ValidationError("cross entropy over an empty mask");
  const std::vector<double> w(targets.size(), 1.0 / static_cast<double>(n));
  return weighted_cross_entropy(logits, targets, w);
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  if (p <= 0.0) {
    m.setOnes();
    return m;
  }
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() < p ? 0.0 : keep;
  return m;
}

Mat stack_columns(const Seq& seq) {
  if (seq.empty()) return {};
  const Eigen::Index b = seq[0].cols();
  Mat out(seq[0].rows(), b * static_cast<Eigen::Index>(seq.size()));
  for (std::size_t t = 0; t < seq.size(); ++t) out.middleCols(static_cast<Eigen::Index>(t) * b, b) = seq[t];
  return out;
}

Seq unstack_columns(const Mat& flat, std::size_t steps) {
  Seq out(steps);
  if (steps == 0) return out;
  const Eigen::Index b = flat.cols() / static_cast<Eigen::Index>(steps);
  for (std::size_t t = 0; t < steps; ++t) out[t] = flat.middleCols(static_cast<Eigen::Index>(t) * b, b);
  return out;
}

}  // namespace trigada
