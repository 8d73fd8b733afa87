#include "kdctc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace kdctc {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

std::int64_t conv_out_size(std::int64_t in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// col is (in_ch*k*k) x (oh*ow), row-major.
void im2col(const real* img, std::int64_t C, std::int64_t H, std::int64_t W, int k, int stride, int pad,
            std::int64_t oh, std::int64_t ow, real* col) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        real* dst = col + ((c * k + ky) * k + kx) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(dst + oy * ow, dst + (oy + 1) * ow, real{0});
            continue;
          }
          const real* src_row = img + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            dst[oy * ow + ox] = (ix >= 0 && ix < W) ? src_row[ix] : real{0};
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back into an image gradient.
void col2im_add(const real* col, std::int64_t C, std::int64_t H, std::int64_t W, int k, int stride, int pad,
                std::int64_t oh, std::int64_t ow, real* img) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const real* src = col + ((c * k + ky) * k + kx) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          real* dst_row = img + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst_row[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

// C = A(m x k) * B(k x n), all row-major real. fp32 drops the multiply to
// float; products land back in real.
void gemm(const real* a, const real* b, real* c, std::int64_t m, std::int64_t k, std::int64_t n, bool fp32,
          bool transpose_a = false, bool transpose_b = false) {
  const std::int64_t ar = transpose_a ? k : m, ac = transpose_a ? m : k;
  const std::int64_t br = transpose_b ? n : k, bc = transpose_b ? k : n;
  MapConst A(a, ar, ac), B(b, br, bc);
  MapMat C(c, m, n);
  if (fp32) {
    RowMatF Af = A.cast<float>(), Bf = B.cast<float>();
    RowMatF Cf;
    if (transpose_a && transpose_b) Cf = Af.transpose() * Bf.transpose();
    else if (transpose_a) Cf = Af.transpose() * Bf;
    else if (transpose_b) Cf = Af * Bf.transpose();
    else Cf = Af * Bf;
    C = Cf.cast<real>();
  } else {
    if (transpose_a && transpose_b) C.noalias() = A.transpose() * B.transpose();
    else if (transpose_a) C.noalias() = A.transpose() * B;
    else if (transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A * B;
  }
}

Tensor shape_token(std::initializer_list<std::int64_t> vals) {
  Tensor t({static_cast<std::int64_t>(vals.size())});
  std::int64_t i = 0;
  for (auto v : vals) t[i++] = static_cast<real>(v);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, bool with_bias)
    : weight(name + ".weight", {out_ch, in_ch, kernel, kernel}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
  if (with_bias) bias = std::make_unique<Param>(name + ".bias", std::vector<std::int64_t>{out_ch});
}

Tensor Conv2d::forward(const Tensor& x, const FwdOpts& opts, Tape* tape) {
  if (x.rank() != 4 || x.shape[1] != in_ch_)
    throw ShapeError("conv '" + weight.name + "': bad input " + x.shape_str());
  const std::int64_t N = x.shape[0], H = x.shape[2], W = x.shape[3];
  const std::int64_t oh = conv_out_size(H, kernel_, stride_, pad_);
  const std::int64_t ow = conv_out_size(W, kernel_, stride_, pad_);
  if (oh < 1 || ow < 1) throw ShapeError("conv '" + weight.name + "': input " + x.shape_str() + " too small");

  Tensor y({N, out_ch_, oh, ow});
  const std::int64_t ck2 = static_cast<std::int64_t>(in_ch_) * kernel_ * kernel_;
  std::vector<real> col(static_cast<std::size_t>(ck2 * oh * ow));

  for (std::int64_t n = 0; n < N; ++n) {
    const real* img = x.data.data() + n * in_ch_ * H * W;
    im2col(img, in_ch_, H, W, kernel_, stride_, pad_, oh, ow, col.data());
    real* out = y.data.data() + n * out_ch_ * oh * ow;
    gemm(weight.value.data.data(), col.data(), out, out_ch_, ck2, oh * ow, opts.fp32);
    if (bias) {
      for (std::int64_t oc = 0; oc < out_ch_; ++oc) {
        const real b = bias->value[oc];
        real* row = out + oc * oh * ow;
        for (std::int64_t i = 0; i < oh * ow; ++i) row[i] += b;
      }
    }
  }
  if (tape) tape->push(x);  // input is enough; columns are rebuilt in backward
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) {
  Tensor x = tape.pop();
  const std::int64_t N = x.shape[0], H = x.shape[2], W = x.shape[3];
  const std::int64_t oh = dy.shape[2], ow = dy.shape[3];
  const std::int64_t ck2 = static_cast<std::int64_t>(in_ch_) * kernel_ * kernel_;

  Tensor dx(x.shape);
  std::vector<real> col(static_cast<std::size_t>(ck2 * oh * ow));
  std::vector<real> dcol(static_cast<std::size_t>(ck2 * oh * ow));
  std::vector<real> dw_sample(static_cast<std::size_t>(out_ch_ * ck2));

  for (std::int64_t n = 0; n < N; ++n) {
    const real* img = x.data.data() + n * in_ch_ * H * W;
    const real* dout = dy.data.data() + n * out_ch_ * oh * ow;
    im2col(img, in_ch_, H, W, kernel_, stride_, pad_, oh, ow, col.data());

    // dW += dY * col^T
    gemm(dout, col.data(), dw_sample.data(), out_ch_, oh * ow, ck2, opts.fp32, false, true);
    MapMat(weight.grad.data.data(), out_ch_, ck2) += MapConst(dw_sample.data(), out_ch_, ck2);

    if (bias) {
      for (std::int64_t oc = 0; oc < out_ch_; ++oc) {
        real s = 0;
        const real* row = dout + oc * oh * ow;
        for (std::int64_t i = 0; i < oh * ow; ++i) s += row[i];
        bias->grad[oc] += s;
      }
    }

    // dcol = W^T * dY, then scatter back to the input gradient.
    gemm(weight.value.data.data(), dout, dcol.data(), ck2, out_ch_, oh * ow, opts.fp32, true, false);
    col2im_add(dcol.data(), in_ch_, H, W, kernel_, stride_, pad_, oh, ow, dx.data.data() + n * in_ch_ * H * W);
  }
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight);
  if (bias) out.push_back(bias.get());
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels, real eps, real momentum)
    : gamma(name + ".weight", {channels}),
      beta(name + ".bias", {channels}),
      running_mean(name + ".running_mean", {channels}, false),
      running_var(name + ".running_var", {channels}, false),
      channels_(channels),
      eps_(eps),
      momentum_(momentum) {
  gamma.value.fill(1);
  running_var.value.fill(1);
}

Tensor BatchNorm2d::forward(const Tensor& x, const FwdOpts& opts, Tape* tape) {
  if (x.rank() != 4 || x.shape[1] != channels_)
    throw ShapeError("batchnorm '" + gamma.name + "': bad input " + x.shape_str());
  const std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t plane = H * W;
  const std::int64_t M = N * plane;

  Tensor y(x.shape);
  Tensor xhat(x.shape);
  Tensor invstd({C});

  for (std::int64_t c = 0; c < C; ++c) {
    real mean, var;
    if (opts.train) {
      real sum = 0, sq = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const real* p = x.data.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += p[i] * p[i];
        }
      }
      mean = sum / static_cast<real>(M);
      var = sq / static_cast<real>(M) - mean * mean;
      var = std::max(var, real{0});
      // Running stats track every train-mode pass, global and local alike.
      const real unbiased = (M > 1) ? var * static_cast<real>(M) / static_cast<real>(M - 1) : var;
      running_mean.value[c] = (1 - momentum_) * running_mean.value[c] + momentum_ * mean;
      running_var.value[c] = (1 - momentum_) * running_var.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const real is = real{1} / std::sqrt(var + eps_);
    invstd[c] = is;
    const real g = gamma.value[c], b = beta.value[c];
    for (std::int64_t n = 0; n < N; ++n) {
      const real* p = x.data.data() + (n * C + c) * plane;
      real* xh = xhat.data.data() + (n * C + c) * plane;
      real* py = y.data.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean) * is;
        py[i] = g * xh[i] + b;
      }
    }
  }

  if (tape) {
    tape->push(std::move(xhat));
    tape->push(std::move(invstd));
    tape->push(shape_token({opts.train ? 1 : 0}));
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) {
  (void)opts;
  const Tensor mode = tape.pop();
  const Tensor invstd = tape.pop();
  const Tensor xhat = tape.pop();
  const bool trained = mode[0] != 0;

  const std::int64_t N = dy.shape[0], C = dy.shape[1], plane = dy.shape[2] * dy.shape[3];
  const std::int64_t M = N * plane;
  Tensor dx(dy.shape);

  for (std::int64_t c = 0; c < C; ++c) {
    real sum_dy = 0, sum_dy_xhat = 0;
    for (std::int64_t n = 0; n < N; ++n) {
      const real* pdy = dy.data.data() + (n * C + c) * plane;
      const real* pxh = xhat.data.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += pdy[i] * pxh[i];
      }
    }
    gamma.grad[c] += sum_dy_xhat;
    beta.grad[c] += sum_dy;

    const real g = gamma.value[c], is = invstd[c];
    if (trained) {
      const real k = g * is / static_cast<real>(M);
      for (std::int64_t n = 0; n < N; ++n) {
        const real* pdy = dy.data.data() + (n * C + c) * plane;
        const real* pxh = xhat.data.data() + (n * C + c) * plane;
        real* pdx = dx.data.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i)
          pdx[i] = k * (static_cast<real>(M) * pdy[i] - sum_dy - pxh[i] * sum_dy_xhat);
      }
    } else {
      // Stats were constants (eval-mode forward): straight-through scale.
      const real k = g * is;
      for (std::int64_t n = 0; n < N; ++n) {
        const real* pdy = dy.data.data() + (n * C + c) * plane;
        real* pdx = dx.data.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) pdx[i] = k * pdy[i];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x, const FwdOpts&, Tape* tape) {
  Tensor y(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0 ? x[i] : 0;
  if (tape) tape->push(x);
  return y;
}

Tensor ReLU::backward(const Tensor& dy, const FwdOpts&, Tape& tape) {
  Tensor x = tape.pop();
  Tensor dx(dy.shape);
  for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] = x[i] > 0 ? dy[i] : 0;
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

Tensor MaxPool2d::forward(const Tensor& x, const FwdOpts&, Tape* tape) {
  const std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t oh = conv_out_size(H, kernel_, stride_, pad_);
  const std::int64_t ow = conv_out_size(W, kernel_, stride_, pad_);
  if (oh < 1 || ow < 1) throw ShapeError("maxpool: input " + x.shape_str() + " too small");

  Tensor y({N, C, oh, ow});
  Tensor argmax({N, C, oh, ow});  // flat plane index of the winner

  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const real* plane = x.data.data() + (n * C + c) * H * W;
      real* py = y.data.data() + (n * C + c) * oh * ow;
      real* pa = argmax.data.data() + (n * C + c) * oh * ow;
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          real best = -std::numeric_limits<real>::infinity();
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < kernel_; ++ky) {
            const std::int64_t iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const std::int64_t ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= W) continue;
              const real v = plane[iy * W + ix];
              if (v > best) {  // first maximum wins on ties
                best = v;
                best_idx = iy * W + ix;
              }
            }
          }
          py[oy * ow + ox] = best;
          pa[oy * ow + ox] = static_cast<real>(best_idx);
        }
    }

  if (tape) {
    tape->push(std::move(argmax));
    tape->push(shape_token({N, C, H, W}));
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy, const FwdOpts&, Tape& tape) {
  const Tensor shp = tape.pop();
  const Tensor argmax = tape.pop();
  const std::int64_t N = static_cast<std::int64_t>(shp[0]), C = static_cast<std::int64_t>(shp[1]);
  const std::int64_t H = static_cast<std::int64_t>(shp[2]), W = static_cast<std::int64_t>(shp[3]);
  const std::int64_t ohw = dy.shape[2] * dy.shape[3];

  Tensor dx({N, C, H, W});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const real* pdy = dy.data.data() + (n * C + c) * ohw;
      const real* pa = argmax.data.data() + (n * C + c) * ohw;
      real* pdx = dx.data.data() + (n * C + c) * H * W;
      for (std::int64_t i = 0; i < ohw; ++i) {
        const std::int64_t idx = static_cast<std::int64_t>(pa[i]);
        if (idx >= 0) pdx[idx] += pdy[i];
      }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, const FwdOpts&, Tape* tape) {
  const std::int64_t N = x.shape[0], C = x.shape[1], plane = x.shape[2] * x.shape[3];
  Tensor y({N, C});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const real* p = x.data.data() + (n * C + c) * plane;
      real s = 0;
      for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      y.at(n, c) = s / static_cast<real>(plane);
    }
  if (tape) tape->push(shape_token({x.shape[2], x.shape[3]}));
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy, const FwdOpts&, Tape& tape) {
  const Tensor shp = tape.pop();
  const std::int64_t H = static_cast<std::int64_t>(shp[0]), W = static_cast<std::int64_t>(shp[1]);
  const std::int64_t N = dy.shape[0], C = dy.shape[1], plane = H * W;
  Tensor dx({N, C, H, W});
  const real inv = real{1} / static_cast<real>(plane);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      real* p = dx.data.data() + (n * C + c) * plane;
      const real g = dy.at(n, c) * inv;
      for (std::int64_t i = 0; i < plane; ++i) p[i] = g;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}),
      bias(name + ".bias", {out_features}),
      in_features_(in_features),
      out_features_(out_features) {}

Tensor Linear::forward(const Tensor& x, const FwdOpts& opts, Tape* tape) {
  if (x.rank() != 2 || x.shape[1] != in_features_)
    throw ShapeError("linear '" + weight.name + "': bad input " + x.shape_str());
  const std::int64_t N = x.shape[0];
  Tensor y({N, out_features_});
  gemm(x.data.data(), weight.value.data.data(), y.data.data(), N, in_features_, out_features_, opts.fp32, false, true);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < out_features_; ++o) y.at(n, o) += bias.value[o];
  if (tape) tape->push(x);
  return y;
}

Tensor Linear::backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) {
  Tensor x = tape.pop();
  const std::int64_t N = x.shape[0];

  std::vector<real> dw(static_cast<std::size_t>(out_features_ * in_features_));
  gemm(dy.data.data(), x.data.data(), dw.data(), out_features_, N, in_features_, opts.fp32, true, false);
  MapMat(weight.grad.data.data(), out_features_, in_features_) += MapConst(dw.data(), out_features_, in_features_);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < out_features_; ++o) bias.grad[o] += dy.at(n, o);

  Tensor dx({N, in_features_});
  gemm(dy.data.data(), weight.value.data.data(), dx.data.data(), N, out_features_, in_features_, opts.fp32);
  return dx;
}

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// Sequential

Tensor Sequential::forward(const Tensor& x, const FwdOpts& opts, Tape* tape) {
  Tensor cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, opts, tape);
  return cur;
}

Tensor Sequential::backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) {
  Tensor cur = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur, opts, tape);
  return cur;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& layer : layers_) layer->collect_params(out);
}

// ---------------------------------------------------------------------------
// Bottleneck

Bottleneck::Bottleneck(const std::string& name, int in_ch, int mid_ch, int out_ch, int stride, bool with_downsample) {
  main_.add(std::make_unique<Conv2d>(name + ".conv1", in_ch, mid_ch, 1, 1, 0, false));
  main_.add(std::make_unique<BatchNorm2d>(name + ".bn1", mid_ch));
  main_.add(std::make_unique<ReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv2", mid_ch, mid_ch, 3, stride, 1, false));
  main_.add(std::make_unique<BatchNorm2d>(name + ".bn2", mid_ch));
  main_.add(std::make_unique<ReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv3", mid_ch, out_ch, 1, 1, 0, false));
  main_.add(std::make_unique<BatchNorm2d>(name + ".bn3", out_ch));
  if (with_downsample) {
    shortcut_ = std::make_unique<Sequential>();
    shortcut_->add(std::make_unique<Conv2d>(name + ".downsample.0", in_ch, out_ch, 1, stride, 0, false));
    shortcut_->add(std::make_unique<BatchNorm2d>(name + ".downsample.1", out_ch));
  }
}

Tensor Bottleneck::forward(const Tensor& x, const FwdOpts& opts, Tape* tape) {
  Tensor main_out = main_.forward(x, opts, tape);
  Tensor shortcut_out = shortcut_ ? shortcut_->forward(x, opts, tape) : x;
  check_same_shape(main_out, shortcut_out, "bottleneck residual add");

  Tensor y(main_out.shape);
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    const real s = main_out[i] + shortcut_out[i];
    y[i] = s > 0 ? s : 0;
  }
  if (tape) tape->push(y);  // relu mask comes from the output sign
  return y;
}

Tensor Bottleneck::backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) {
  const Tensor y = tape.pop();
  Tensor dsum(dy.shape);
  for (std::int64_t i = 0; i < dy.numel(); ++i) dsum[i] = y[i] > 0 ? dy[i] : 0;

  // LIFO: the shortcut was pushed after the main path.
  Tensor dx;
  if (shortcut_) {
    dx = shortcut_->backward(dsum, opts, tape);
  } else {
    dx = dsum;
  }
  Tensor dx_main = main_.backward(dsum, opts, tape);
  for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dx_main[i];
  return dx;
}

void Bottleneck::collect_params(std::vector<Param*>& out) {
  main_.collect_params(out);
  if (shortcut_) shortcut_->collect_params(out);
}

}  // namespace kdctc
