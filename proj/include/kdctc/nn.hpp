#pragma once

#include <memory>
#include <string>
#include <vector>

#include "kdctc/tensor.hpp"

namespace kdctc {

// Named learnable tensor. Buffers (batch-norm running stats) set
// requires_grad=false: saved in checkpoints, never touched by the optimizer.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  explicit Param(std::string n, std::vector<std::int64_t> shape, bool rg = true)
      : name(std::move(n)), value(shape), grad(std::move(shape)), requires_grad(rg) {}
  void zero_grad() { grad.fill(0); }
};

struct FwdOpts {
  bool train = false;
  bool fp32 = false;  // run the heavy GEMMs in float32
};

// LIFO of tensors saved during forward and consumed, in reverse, during
// backward. A fresh tape per forward pass keeps layers reentrant and lets a
// step do two independent forward/backward rounds over the same parameters.
struct Tape {
  std::vector<Tensor> stack;

  void push(Tensor t) { stack.push_back(std::move(t)); }
  Tensor pop() {
    if (stack.empty()) throw Error("tape underflow (backward without matching forward)");
    Tensor t = std::move(stack.back());
    stack.pop_back();
    return t;
  }
};

class Layer {
 public:
  virtual ~Layer() = default;
  // tape == nullptr means inference-only: nothing is saved.
  virtual Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) = 0;
  // Pops exactly what forward pushed; accumulates into param grads.
  virtual Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) = 0;
  virtual void collect_params(std::vector<Param*>& out) {}
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, bool bias);
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;
  void collect_params(std::vector<Param*>& out) override;

  Param weight;
  std::unique_ptr<Param> bias;  // null when the conv is bias-free (pre-BN)

 private:
  int in_ch_, out_ch_, kernel_, stride_, pad_;
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, real eps = 1e-5, real momentum = 0.1);
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;
  void collect_params(std::vector<Param*>& out) override;

  Param gamma, beta, running_mean, running_var;

 private:
  int channels_;
  real eps_, momentum_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int pad);
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;

 private:
  int kernel_, stride_, pad_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;
};

class Linear : public Layer {
 public:
  Linear(std::string name, int in_features, int out_features);
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;
  void collect_params(std::vector<Param*>& out) override;

  Param weight, bias;

 private:
  int in_features_, out_features_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;
  void collect_params(std::vector<Param*>& out) override;
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// conv1x1 -> bn -> relu -> conv3x3(stride) -> bn -> relu -> conv1x1 -> bn,
// plus identity or 1x1-conv shortcut, relu after the sum.
class Bottleneck : public Layer {
 public:
  Bottleneck(const std::string& name, int in_ch, int mid_ch, int out_ch, int stride, bool with_downsample);
  Tensor forward(const Tensor& x, const FwdOpts& opts, Tape* tape) override;
  Tensor backward(const Tensor& dy, const FwdOpts& opts, Tape& tape) override;
  void collect_params(std::vector<Param*>& out) override;

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;  // null -> identity
};

}  // namespace kdctc
