#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vltd/tensor.hpp"

namespace vltd {

// Platform-stable random source: only the raw mt19937_64 stream is used, so
// the derived uniform/normal draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  // Derives an independent child seed.
  uint64_t fork() { return engine_() ^ 0x9E3779B97F4A7C15ULL; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

Tensor normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = true);
void set_trainable(const ParamList& params, bool trainable);

class Linear {
 public:
  Linear() = default;
  // Weights ~ N(0, 1/fan_in) unless a std is given; bias zero.
  Linear(int64_t in, int64_t out, Rng& rng, bool bias = true, double stddev = -1.0);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
  int64_t in_features() const { return weight.dim(0); }
  int64_t out_features() const { return weight.dim(1); }

  Tensor weight;  // [in, out]
  Tensor bias;    // [out], may be undefined
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int64_t dim);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor gamma;
  Tensor beta;
};

class Conv2d {
 public:
  Conv2d() = default;
  // He-normal init (fan-in = in * k * k), zero bias.
  Conv2d(int64_t in, int64_t out, int kernel, int stride, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor weight;  // [out, in, k, k]
  Tensor bias;
  int stride = 1;
  int padding = 0;
};

}  // namespace vltd
