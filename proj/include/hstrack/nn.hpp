#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "hstrack/tensor.hpp"

namespace hstrack {

/// Deterministic RNG: splitmix64 stream with Box-Muller normals. Avoids
/// std::*_distribution so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // mean 0, stddev 1
  int uniform_int(int lo, int hi);        // inclusive bounds

  /// Independent substream, e.g. one per frame. Keyed so any evaluation
  /// order yields the same draws.
  static Rng split(uint64_t seed, uint64_t key);

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Arena owning every Var and non-trainable buffer of a model. Storage is a
/// deque so addresses stay valid for the lifetime of the arena; layers hold
/// plain pointers and stay freely movable.
class Params {
 public:
  Params() = default;
  Params(const Params&) = delete;
  Params& operator=(const Params&) = delete;

  Var* var(const std::string& name, Tensor init);
  std::vector<double>* buffer(const std::string& name, std::vector<double> init);

  const std::vector<Var*>& vars() const { return vars_; }
  const std::vector<std::pair<std::string, std::vector<double>*>>& buffers() const {
    return buffers_;
  }
  Var* find(const std::string& name) const;
  std::vector<double>* find_buffer(const std::string& name) const;

  void zero_grad();
  long long count() const;

 private:
  std::deque<Var> var_store_;
  std::deque<std::vector<double>> buf_store_;
  std::vector<Var*> vars_;
  std::vector<std::pair<std::string, std::vector<double>*>> buffers_;
};

// Parameter initializers.
Tensor init_uniform_fan_in(Rng& rng, Shape shape, int fan_in);
Tensor init_normal(Rng& rng, Shape shape, double stddev);

/// y = x W^T + b applied to the trailing feature axis of [.., in].
struct Linear {
  Var* weight = nullptr;  // [out, in]
  Var* bias = nullptr;    // [out] when present

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, Params& ps,
         bool with_bias = true);
  Tensor forward(Tape* tape, const Tensor& x) const;
};

struct Conv2d {
  Var* weight = nullptr;  // [out, in/groups, k, k]
  Var* bias = nullptr;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int k, int stride,
         int padding, int groups, Rng& rng, Params& ps, bool with_bias = true);
  Tensor forward(Tape* tape, const Tensor& x) const;
};

/// Composed from catalogue ops. Train mode uses batch statistics over
/// (N,H,W) and updates running statistics with momentum 0.1; at batch size 1
/// (or in eval mode) it normalizes with the running statistics.
struct BatchNorm2d {
  Var* gamma = nullptr;  // [C]
  Var* beta = nullptr;   // [C]
  std::vector<double>* running_mean = nullptr;
  std::vector<double>* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
  int channels = 0;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, Params& ps);
  Tensor forward(Tape* tape, const Tensor& x, bool training) const;
  // training forward with the running-statistic side effect
  Tensor forward_train(Tape* tape, const Tensor& x);
};

/// Normalizes the trailing axis; composed from catalogue ops.
struct LayerNorm {
  Var* gamma = nullptr;
  Var* beta = nullptr;
  double eps = 1e-5;
  int dim = 0;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim, Params& ps);
  Tensor forward(Tape* tape, const Tensor& x) const;
};

/// Decoupled weight decay variant of Adam.
class AdamW {
 public:
  AdamW(std::vector<Var*> vars, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Var*> vars_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

}  // namespace hstrack
