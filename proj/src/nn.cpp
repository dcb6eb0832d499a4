#include "hstrack/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace hstrack {

namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor watch_of(Tape* tape, Var* v) { return tape ? tape->watch(*v) : v->value; }
}  // namespace

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

Rng Rng::split(uint64_t seed, uint64_t key) {
  uint64_t s = seed;
  uint64_t mixed = splitmix64(s) ^ (key * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  return Rng(mixed);
}

// ---- Params -----------------------------------------------------------------

Var* Params::var(const std::string& name, Tensor init) {
  if (find(name) != nullptr)
    throw std::invalid_argument("Params: duplicate var name " + name);
  var_store_.emplace_back(name, std::move(init));
  vars_.push_back(&var_store_.back());
  return vars_.back();
}

std::vector<double>* Params::buffer(const std::string& name,
                                    std::vector<double> init) {
  if (find_buffer(name) != nullptr)
    throw std::invalid_argument("Params: duplicate buffer name " + name);
  buf_store_.push_back(std::move(init));
  buffers_.emplace_back(name, &buf_store_.back());
  return buffers_.back().second;
}

Var* Params::find(const std::string& name) const {
  for (Var* v : vars_)
    if (v->name == name) return v;
  return nullptr;
}

std::vector<double>* Params::find_buffer(const std::string& name) const {
  for (const auto& [n, b] : buffers_)
    if (n == name) return b;
  return nullptr;
}

void Params::zero_grad() {
  for (Var* v : vars_) v->zero_grad();
}

long long Params::count() const {
  long long n = 0;
  for (const Var* v : vars_) n += v->value.numel();
  return n;
}

Tensor init_uniform_fan_in(Rng& rng, Shape shape, int fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  int n = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  int n = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

// ---- Linear -------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out, Rng& rng, Params& ps,
               bool with_bias) {
  weight = ps.var(name + ".weight", init_uniform_fan_in(rng, {out, in}, in));
  if (with_bias)
    bias = ps.var(name + ".bias", init_uniform_fan_in(rng, {out}, in));
}

Tensor Linear::forward(Tape* tape, const Tensor& x) const {
  Tensor wt = watch_of(tape, weight);
  int in = weight->value.dim(1);
  int out = weight->value.dim(0);
  if (x.dim(x.rank() - 1) != in)
    throw std::invalid_argument("Linear " + weight->name + ": input " +
                                shape_str(x.shape()) + " does not end in " +
                                std::to_string(in));
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Tensor flat = reshape(x, {x.numel() / in, in});
  Tensor y = matmul(flat, permute(wt, {1, 0}));
  if (bias != nullptr) y = add(y, reshape(watch_of(tape, bias), {1, out}));
  return reshape(y, out_shape);
}

// ---- Conv2d -------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in, int out, int k, int stride_,
               int padding_, int groups_, Rng& rng, Params& ps, bool with_bias)
    : stride(stride_), padding(padding_), groups(groups_) {
  if (in % groups_ != 0 || out % groups_ != 0)
    throw std::invalid_argument("Conv2d " + name + ": groups " +
                                std::to_string(groups_) +
                                " do not divide channels");
  int fan_in = (in / groups_) * k * k;
  weight = ps.var(name + ".weight",
                  init_uniform_fan_in(rng, {out, in / groups_, k, k}, fan_in));
  if (with_bias)
    bias = ps.var(name + ".bias", init_uniform_fan_in(rng, {out}, fan_in));
}

Tensor Conv2d::forward(Tape* tape, const Tensor& x) const {
  Tensor wt = watch_of(tape, weight);
  if (bias != nullptr) {
    Tensor bt = watch_of(tape, bias);
    return conv2d(x, wt, &bt, stride, padding, groups);
  }
  return conv2d(x, wt, nullptr, stride, padding, groups);
}

// ---- BatchNorm2d ----------------------------------------------------------

BatchNorm2d::BatchNorm2d(const std::string& name, int channels_, Params& ps)
    : channels(channels_) {
  gamma = ps.var(name + ".gamma", Tensor::full({channels_}, 1.0));
  beta = ps.var(name + ".beta", Tensor::zeros({channels_}));
  running_mean =
      ps.buffer(name + ".running_mean", std::vector<double>(static_cast<size_t>(channels_), 0.0));
  running_var =
      ps.buffer(name + ".running_var", std::vector<double>(static_cast<size_t>(channels_), 1.0));
}

namespace {
Tensor bn_affine(Tape* tape, const Tensor& xhat, Var* gamma, Var* beta, int C) {
  Tensor gt = watch_of(tape, gamma);
  Tensor bt = watch_of(tape, beta);
  Shape bshape = xhat.rank() == 4 ? Shape{1, C, 1, 1} : Shape{C, 1, 1};
  return add(mul(xhat, reshape(gt, bshape)), reshape(bt, bshape));
}
}  // namespace

Tensor BatchNorm2d::forward(Tape* tape, const Tensor& x, bool training) const {
  bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3)
    throw std::invalid_argument("BatchNorm2d: expects rank 3 or 4, got " +
                                shape_str(x.shape()));
  int C = batched ? x.dim(1) : x.dim(0);
  if (C != channels)
    throw std::invalid_argument("BatchNorm2d " + gamma->name + ": channels " +
                                std::to_string(C) + " != " +
                                std::to_string(channels));
  int N = batched ? x.dim(0) : 1;

  if (training && N > 1) {
    // batch statistics over (N, H, W), composed so the adjoint is exact
    Tensor x4 = batched ? x : reshape(x, {1, C, x.dim(1), x.dim(2)});
    Tensor mu = mean_axis(mean_axis(mean_axis(x4, 3), 2), 0);  // [1,C,1,1]
    Tensor centered = sub(x4, mu);
    Tensor var = mean_axis(mean_axis(mean_axis(mul(centered, centered), 3), 2), 0);
    Tensor xhat = div(centered, sqrt(add_scalar(var, eps)));
    Tensor y = bn_affine(tape, xhat, gamma, beta, C);
    return batched ? y : reshape(y, x.shape());
  }

  Shape bshape = batched ? Shape{1, C, 1, 1} : Shape{C, 1, 1};
  Tensor mu = reshape(Tensor::from({C}, *running_mean), bshape);
  std::vector<double> inv(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c)
    inv[static_cast<size_t>(c)] =
        1.0 / std::sqrt((*running_var)[static_cast<size_t>(c)] + eps);
  Tensor xhat = mul(sub(x, mu), reshape(Tensor::from({C}, inv), bshape));
  return bn_affine(tape, xhat, gamma, beta, C);
}

Tensor BatchNorm2d::forward_train(Tape* tape, const Tensor& x) {
  bool batched = x.rank() == 4;
  int N = batched ? x.dim(0) : 1;
  Tensor y = forward(tape, x, true);
  if (N > 1) {
    // update running statistics from detached batch values
    int C = x.dim(1), H = x.dim(2), W = x.dim(3);
    long long per = static_cast<long long>(N) * H * W;
    const std::vector<double>& v = x.values();
    for (int c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = v.data() + ((static_cast<long long>(n) * C + c) * H) * W;
        for (long long i = 0; i < static_cast<long long>(H) * W; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      double mean = s / static_cast<double>(per);
      double var = s2 / static_cast<double>(per) - mean * mean;
      double unbiased = per > 1 ? var * static_cast<double>(per) /
                                      static_cast<double>(per - 1)
                                : var;
      (*running_mean)[static_cast<size_t>(c)] =
          (1.0 - momentum) * (*running_mean)[static_cast<size_t>(c)] + momentum * mean;
      (*running_var)[static_cast<size_t>(c)] =
          (1.0 - momentum) * (*running_var)[static_cast<size_t>(c)] + momentum * unbiased;
    }
  }
  return y;
}

// ---- LayerNorm ------------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, int dim_, Params& ps) : dim(dim_) {
  gamma = ps.var(name + ".gamma", Tensor::full({dim_}, 1.0));
  beta = ps.var(name + ".beta", Tensor::zeros({dim_}));
}

Tensor LayerNorm::forward(Tape* tape, const Tensor& x) const {
  if (x.dim(x.rank() - 1) != dim)
    throw std::invalid_argument("LayerNorm " + gamma->name + ": trailing dim of " +
                                shape_str(x.shape()) + " != " + std::to_string(dim));
  int axis = x.rank() - 1;
  Tensor mu = mean_axis(x, axis);
  Tensor centered = sub(x, mu);
  Tensor var = mean_axis(mul(centered, centered), axis);
  Tensor xhat = div(centered, sqrt(add_scalar(var, eps)));
  return add(mul(xhat, watch_of(tape, gamma)), watch_of(tape, beta));
}

// ---- AdamW ------------------------------------------------------------------

AdamW::AdamW(std::vector<Var*> vars, double lr, double weight_decay,
             double beta1, double beta2, double eps)
    : vars_(std::move(vars)), lr_(lr), weight_decay_(weight_decay),
      beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Var* v : vars_) {
    m_.emplace_back(static_cast<size_t>(v->value.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(v->value.numel()), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t p = 0; p < vars_.size(); ++p) {
    Var* var = vars_[p];
    if (!var->trainable) continue;
    std::vector<double> x = var->value.values();
    std::vector<double>& m = m_[p];
    std::vector<double>& v = v_[p];
    for (size_t i = 0; i < x.size(); ++i) {
      double g = var->grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      x[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * x[i]);
    }
    var->value = Tensor::from(var->value.shape(), std::move(x));
  }
}

}  // namespace hstrack
