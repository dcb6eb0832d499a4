#include "hstrack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hstrack {

namespace {

constexpr double kLogFloor = 1e-12;
constexpr double kExpClamp = 700.0;

std::shared_ptr<const std::vector<double>> share(std::vector<double> v) {
  return std::make_shared<const std::vector<double>>(std::move(v));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a,
                              const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

Tape* result_tape(const std::initializer_list<const Tensor*>& ins) {
  Tape* t = nullptr;
  for (const Tensor* in : ins) {
    if (!in->requires_grad()) continue;
    if (t != nullptr && t != in->tape())
      throw std::invalid_argument("op mixes tensors from different tapes");
    t = in->tape();
  }
  return t;
}

// Strides (in elements) of a row-major layout.
std::vector<long long> strides_of(const Shape& s) {
  std::vector<long long> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] =
        st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}

// ---- broadcasting -----------------------------------------------------------

Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Per-output-dim input strides, 0 where the input is broadcast.
std::vector<long long> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<long long> st(out.size(), 0);
  std::vector<long long> own = strides_of(in);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    if (in[i] != 1) st[off + i] = own[i];
  return st;
}

// Apply f(a_i, b_i) over the broadcast iteration space.
template <typename F>
void broadcast_iter(const Shape& out, const std::vector<long long>& sa,
                    const std::vector<long long>& sb, F&& f) {
  int n = shape_numel(out);
  size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int> idx(rank, 0);
  long long ia = 0, ib = 0;
  for (int flat = 0; flat < n; ++flat) {
    f(flat, ia, ib);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      size_t ud = static_cast<size_t>(d);
      ++idx[ud];
      ia += sa[ud];
      ib += sb[ud];
      if (idx[ud] < out[ud]) break;
      ia -= sa[ud] * out[ud];
      ib -= sb[ud] * out[ud];
      idx[ud] = 0;
    }
  }
}

// Reduce a gradient over the broadcast output shape back onto `in`'s shape.
void reduce_grad(const std::vector<double>& g, const Shape& out,
                 const Shape& in, std::vector<double>& acc) {
  std::vector<long long> si = broadcast_strides(in, out);
  int n = shape_numel(out);
  size_t rank = out.size();
  if (rank == 0) {
    acc[0] += g[0];
    return;
  }
  std::vector<int> idx(rank, 0);
  long long ii = 0;
  for (int flat = 0; flat < n; ++flat) {
    acc[static_cast<size_t>(ii)] += g[static_cast<size_t>(flat)];
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      size_t ud = static_cast<size_t>(d);
      ++idx[ud];
      ii += si[ud];
      if (idx[ud] < out[ud]) break;
      ii -= si[ud] * out[ud];
      idx[ud] = 0;
    }
  }
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Shared implementation for the four arithmetic broadcast ops.
// fwd(a,b) -> value; bwd fills (da, db) contributions given (g, a, b).
template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const std::string& name, const Tensor& a, const Tensor& b,
                 Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  Tape* tape = result_tape({&a, &b});
  Shape out_shape;
  std::vector<double> out;
  const std::vector<double>& av = a.values();
  const std::vector<double>& bv = b.values();

  if (same_shape(a.shape(), b.shape())) {
    out_shape = a.shape();
    out.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    out_shape = broadcast_shape(name, a.shape(), b.shape());
    out.resize(static_cast<size_t>(shape_numel(out_shape)));
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    broadcast_iter(out_shape, sa, sb, [&](int o, long long ia, long long ib) {
      out[static_cast<size_t>(o)] =
          fwd(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
    });
  }
  if (tape == nullptr) return Tensor(std::move(out_shape), share(std::move(out)), nullptr, -1);

  int an = a.node(), bn = b.node();
  Shape ash = a.shape(), bsh = b.shape(), osh = out_shape;
  auto adata = a.values();  // value copies kept alive for the adjoint
  auto bdata = b.values();
  // The backward needs the output node id, which only exists after push_op;
  // capture it through a shared slot.
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, bn, ash, bsh, osh, adata, bdata, bwd_a, bwd_b,
                   out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    bool simple = same_shape(ash, bsh);
    if (an >= 0) {
      std::vector<double>& ga = t.grad_buf(an);
      if (simple) {
        for (size_t i = 0; i < g.size(); ++i)
          ga[i] += bwd_a(g[i], adata[i], bdata[i]);
      } else {
        std::vector<double> full(g.size());
        auto sa = broadcast_strides(ash, osh);
        auto sb = broadcast_strides(bsh, osh);
        broadcast_iter(osh, sa, sb, [&](int o, long long ia, long long ib) {
          full[static_cast<size_t>(o)] =
              bwd_a(g[static_cast<size_t>(o)], adata[static_cast<size_t>(ia)],
                    bdata[static_cast<size_t>(ib)]);
        });
        reduce_grad(full, osh, ash, ga);
      }
    }
    if (bn >= 0) {
      std::vector<double>& gb = t.grad_buf(bn);
      if (simple) {
        for (size_t i = 0; i < g.size(); ++i)
          gb[i] += bwd_b(g[i], adata[i], bdata[i]);
      } else {
        std::vector<double> full(g.size());
        auto sa = broadcast_strides(ash, osh);
        auto sb = broadcast_strides(bsh, osh);
        broadcast_iter(osh, sa, sb, [&](int o, long long ia, long long ib) {
          full[static_cast<size_t>(o)] =
              bwd_b(g[static_cast<size_t>(o)], adata[static_cast<size_t>(ia)],
                    bdata[static_cast<size_t>(ib)]);
        });
        reduce_grad(full, osh, bsh, gb);
      }
    }
  };
  int node = tape->push_op(shape_numel(out_shape), backward);
  *out_node = node;
  return Tensor(std::move(out_shape), share(std::move(out)), tape, node);
}

// Unary op helper: value map plus df/dx evaluated from (x, y).
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd dydx) {
  Tape* tape = result_tape({&a});
  const std::vector<double>& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  if (tape == nullptr)
    return Tensor(a.shape(), share(std::move(out)), nullptr, -1);

  int an = a.node();
  auto adata = a.values();
  auto odata = out;  // some adjoints reuse the forward value
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, adata, odata, dydx, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    std::vector<double>& ga = t.grad_buf(an);
    for (size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * dydx(adata[i], odata[i]);
  };
  int node = tape->push_op(a.numel(), backward);
  *out_node = node;
  return Tensor(a.shape(), share(std::move(out)), tape, node);
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

int shape_numel(const Shape& s) {
  long long n = 1;
  for (int e : s) {
    if (e < 0) throw std::invalid_argument("negative extent in " + shape_str(s));
    n *= e;
  }
  if (n > (1LL << 31)) throw std::invalid_argument("tensor too large: " + shape_str(s));
  return static_cast<int>(n);
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
               Tape* tape, int node)
    : data_(std::move(data)), shape_(std::move(shape)),
      numel_(shape_numel(shape_)), tape_(tape), node_(node) {
  if (static_cast<int>(data_->size()) != numel_)
    throw std::invalid_argument("data length " + std::to_string(data_->size()) +
                                " does not match shape " + shape_str(shape_));
}

Tensor Tensor::zeros(Shape shape) {
  int n = shape_numel(shape);
  return Tensor(std::move(shape), share(std::vector<double>(static_cast<size_t>(n), 0.0)),
                nullptr, -1);
}

Tensor Tensor::full(Shape shape, double value) {
  int n = shape_numel(shape);
  return Tensor(std::move(shape), share(std::vector<double>(static_cast<size_t>(n), value)),
                nullptr, -1);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(std::move(shape), share(std::move(values)), nullptr, -1);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::value() const {
  if (numel_ != 1)
    throw std::invalid_argument("value() on non-scalar tensor " + shape_str(shape_));
  return (*data_)[0];
}

double Tensor::at(const std::vector<int>& idx) const {
  if (idx.size() != shape_.size())
    throw std::invalid_argument("index rank mismatch for " + shape_str(shape_));
  auto st = strides_of(shape_);
  long long off = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= shape_[i])
      throw std::out_of_range("index out of range for " + shape_str(shape_));
    off += idx[i] * st[i];
  }
  return (*data_)[static_cast<size_t>(off)];
}

Tensor Tensor::detach() const { return Tensor(shape_, data_, nullptr, -1); }

void Var::assign(Tensor v) {
  if (v.shape() != value.shape())
    throw std::invalid_argument("Var " + name + ": assign shape " +
                                shape_str(v.shape()) + " != " +
                                shape_str(value.shape()));
  value = v.detach();
}

// ---- Tape -------------------------------------------------------------------

int Tape::push_leaf(int numel) {
  nodes_.push_back(Node{numel, {}, {}});
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::push_op(int numel, std::function<void(Tape&)> bw) {
  nodes_.push_back(Node{numel, std::move(bw), {}});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buf(int node) {
  Node& n = nodes_[static_cast<size_t>(node)];
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.numel), 0.0);
  return n.grad;
}

bool Tape::has_grad(int node) const {
  return !nodes_[static_cast<size_t>(node)].grad.empty();
}

Tensor Tape::watch(Var& v) {
  auto it = watch_memo_.find(&v);
  if (it != watch_memo_.end())
    return Tensor(v.value.shape(),
                  std::make_shared<const std::vector<double>>(v.value.values()),
                  this, it->second);
  int node = push_leaf(v.value.numel());
  watch_memo_[&v] = node;
  watched_.emplace_back(&v, node);
  return Tensor(v.value.shape(),
                std::make_shared<const std::vector<double>>(v.value.values()),
                this, node);
}

Tensor Tape::watch(const Tensor& t) {
  int node = push_leaf(t.numel());
  return Tensor(t.shape(),
                std::make_shared<const std::vector<double>>(t.values()), this,
                node);
}

void Tape::backward(const Tensor& root) {
  if (root.tape() != this || root.node() < 0)
    throw std::invalid_argument("backward root is not tracked on this tape");
  if (root.numel() != 1)
    throw std::invalid_argument("backward root must be scalar, got " +
                                shape_str(root.shape()));
  grad_buf(root.node())[0] += 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.bw && !n.grad.empty()) n.bw(*this);
  }
}

std::vector<double> Tape::grad_of(const Tensor& leaf) const {
  if (leaf.tape() != this || leaf.node() < 0)
    throw std::invalid_argument("grad_of: tensor is not tracked on this tape");
  const Node& n = nodes_[static_cast<size_t>(leaf.node())];
  if (n.grad.empty()) return std::vector<double>(static_cast<size_t>(n.numel), 0.0);
  return n.grad;
}

void Tape::collect() {
  for (auto& [var, node] : watched_) {
    const Node& n = nodes_[static_cast<size_t>(node)];
    if (n.grad.empty()) continue;
    for (size_t i = 0; i < n.grad.size(); ++i) var->grad[i] += n.grad[i];
  }
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double g, double x, double y) { return x >= y ? g : 0.0; },
      [](double g, double x, double y) { return x >= y ? 0.0 : g; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double g, double x, double y) { return x <= y ? g : 0.0; },
      [](double g, double x, double y) { return x <= y ? 0.0 : g; });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(a, [slope](double x) { return x > 0 ? x : slope * x; },
                  [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& a) {
  auto sig = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary_op(a, sig, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary_op(a,
                  [](double x) {
                    return std::exp(std::clamp(x, -kExpClamp, kExpClamp));
                  },
                  [](double x, double y) {
                    return (x >= -kExpClamp && x <= kExpClamp) ? y : 0.0;
                  });
}

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(std::max(x, kLogFloor)); },
                  [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(std::max(x, 0.0)); },
                  [](double x, double y) { return x > 0 ? 0.5 / y : 0.0; });
}

Tensor abs(const Tensor& a) {
  return unary_op(a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor acos(const Tensor& a) {
  return unary_op(a,
                  [](double x) { return std::acos(std::clamp(x, -1.0, 1.0)); },
                  [](double x, double) {
                    if (x <= -1.0 || x >= 1.0) return 0.0;
                    return -1.0 / std::sqrt(1.0 - x * x);
                  });
}

// ---- matmul -----------------------------------------------------------------

namespace {

// c[M,N] += a[M,K] * b[K,N], row-major raw loops (ikj order).
void mm_acc(const double* a, const double* b, double* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* arow = a + static_cast<long long>(i) * K;
    double* crow = c + static_cast<long long>(i) * N;
    for (int k = 0; k < K; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<long long>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[M,N] += a[M,K] * b[N,K]^T
void mm_bt_acc(const double* a, const double* b, double* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* arow = a + static_cast<long long>(i) * K;
    double* crow = c + static_cast<long long>(i) * N;
    for (int j = 0; j < N; ++j) {
      const double* brow = b + static_cast<long long>(j) * K;
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += arow[k] * brow[k];
      crow[j] += s;
    }
  }
}

// c[K,N] += a[M,K]^T * b[M,N]
void mt_m_acc(const double* a, const double* b, double* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* arow = a + static_cast<long long>(i) * K;
    const double* brow = b + static_cast<long long>(i) * N;
    for (int k = 0; k < K; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      double* crow = c + static_cast<long long>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_error("matmul", a.shape(), b.shape());
  int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<double> out(static_cast<size_t>(M) * N, 0.0);
  mm_acc(a.values().data(), b.values().data(), out.data(), M, K, N);

  Tape* tape = result_tape({&a, &b});
  if (tape == nullptr) return Tensor({M, N}, share(std::move(out)), nullptr, -1);
  int an = a.node(), bn = b.node();
  auto adata = a.values();
  auto bdata = b.values();
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, bn, adata, bdata, M, K, N, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    if (an >= 0) mm_bt_acc(g.data(), bdata.data(), t.grad_buf(an).data(), M, N, K);
    if (bn >= 0) mt_m_acc(adata.data(), g.data(), t.grad_buf(bn).data(), M, K, N);
  };
  int node = tape->push_op(M * N, backward);
  *out_node = node;
  return Tensor({M, N}, share(std::move(out)), tape, node);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1))
    shape_error("bmm", a.shape(), b.shape());
  int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  std::vector<double> out(static_cast<size_t>(B) * M * N, 0.0);
  for (int i = 0; i < B; ++i)
    mm_acc(a.values().data() + static_cast<long long>(i) * M * K,
           b.values().data() + static_cast<long long>(i) * K * N,
           out.data() + static_cast<long long>(i) * M * N, M, K, N);

  Tape* tape = result_tape({&a, &b});
  if (tape == nullptr)
    return Tensor({B, M, N}, share(std::move(out)), nullptr, -1);
  int an = a.node(), bn = b.node();
  auto adata = a.values();
  auto bdata = b.values();
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, bn, adata, bdata, B, M, K, N, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    for (int i = 0; i < B; ++i) {
      const double* gi = g.data() + static_cast<long long>(i) * M * N;
      if (an >= 0)
        mm_bt_acc(gi, bdata.data() + static_cast<long long>(i) * K * N,
                  t.grad_buf(an).data() + static_cast<long long>(i) * M * K, M,
                  N, K);
      if (bn >= 0)
        mt_m_acc(adata.data() + static_cast<long long>(i) * M * K, gi,
                 t.grad_buf(bn).data() + static_cast<long long>(i) * K * N, M,
                 K, N);
    }
  };
  int node = tape->push_op(B * M * N, backward);
  *out_node = node;
  return Tensor({B, M, N}, share(std::move(out)), tape, node);
}

// ---- conv2d -----------------------------------------------------------------

namespace {

struct ConvDims {
  int N, Ci, H, W, Co, Cig, kh, kw, Ho, Wo;
};

void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* y, const ConvDims& d, int stride, int pad,
                    int groups) {
  int co_per_g = d.Co / groups;
  for (int n = 0; n < d.N; ++n) {
    for (int co = 0; co < d.Co; ++co) {
      int g = co / co_per_g;
      double* yp = y + ((static_cast<long long>(n) * d.Co + co) * d.Ho) * d.Wo;
      double b0 = bias != nullptr ? bias[co] : 0.0;
      for (int oy = 0; oy < d.Ho; ++oy)
        for (int ox = 0; ox < d.Wo; ++ox) {
          double s = b0;
          int iy0 = oy * stride - pad;
          int ix0 = ox * stride - pad;
          for (int ci = 0; ci < d.Cig; ++ci) {
            const double* xp =
                x + ((static_cast<long long>(n) * d.Ci + g * d.Cig + ci) * d.H) * d.W;
            const double* wp =
                w + ((static_cast<long long>(co) * d.Cig + ci) * d.kh) * d.kw;
            for (int ky = 0; ky < d.kh; ++ky) {
              int iy = iy0 + ky;
              if (iy < 0 || iy >= d.H) continue;
              for (int kx = 0; kx < d.kw; ++kx) {
                int ix = ix0 + kx;
                if (ix < 0 || ix >= d.W) continue;
                s += xp[static_cast<long long>(iy) * d.W + ix] *
                     wp[static_cast<long long>(ky) * d.kw + kx];
              }
            }
          }
          yp[static_cast<long long>(oy) * d.Wo + ox] = s;
        }
    }
  }
}

void conv2d_backward(const double* x, const double* w, const double* g,
                     double* gx, double* gw, double* gb, const ConvDims& d,
                     int stride, int pad, int groups) {
  int co_per_g = d.Co / groups;
  for (int n = 0; n < d.N; ++n) {
    for (int co = 0; co < d.Co; ++co) {
      int grp = co / co_per_g;
      const double* gp = g + ((static_cast<long long>(n) * d.Co + co) * d.Ho) * d.Wo;
      for (int oy = 0; oy < d.Ho; ++oy)
        for (int ox = 0; ox < d.Wo; ++ox) {
          double gv = gp[static_cast<long long>(oy) * d.Wo + ox];
          if (gv == 0.0) continue;
          if (gb != nullptr) gb[co] += gv;
          int iy0 = oy * stride - pad;
          int ix0 = ox * stride - pad;
          for (int ci = 0; ci < d.Cig; ++ci) {
            long long xoff =
                ((static_cast<long long>(n) * d.Ci + grp * d.Cig + ci) * d.H) * d.W;
            long long woff =
                ((static_cast<long long>(co) * d.Cig + ci) * d.kh) * d.kw;
            for (int ky = 0; ky < d.kh; ++ky) {
              int iy = iy0 + ky;
              if (iy < 0 || iy >= d.H) continue;
              for (int kx = 0; kx < d.kw; ++kx) {
                int ix = ix0 + kx;
                if (ix < 0 || ix >= d.W) continue;
                long long xi = xoff + static_cast<long long>(iy) * d.W + ix;
                long long wi = woff + static_cast<long long>(ky) * d.kw + kx;
                if (gx != nullptr) gx[xi] += gv * w[wi];
                if (gw != nullptr) gw[wi] += gv * x[xi];
              }
            }
          }
        }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias,
              int stride, int padding, int groups) {
  if (kernel.rank() != 4)
    throw std::invalid_argument("conv2d: kernel must be rank 4, got " +
                                shape_str(kernel.shape()));
  bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3)
    throw std::invalid_argument("conv2d: input must be rank 3 or 4, got " +
                                shape_str(input.shape()));
  ConvDims d;
  d.N = batched ? input.dim(0) : 1;
  d.Ci = input.dim(batched ? 1 : 0);
  d.H = input.dim(batched ? 2 : 1);
  d.W = input.dim(batched ? 3 : 2);
  d.Co = kernel.dim(0);
  d.Cig = kernel.dim(1);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  if (groups < 1 || d.Ci % groups != 0 || d.Co % groups != 0)
    throw std::invalid_argument(
        "conv2d: groups " + std::to_string(groups) + " must divide channels " +
        std::to_string(d.Ci) + " and " + std::to_string(d.Co));
  if (d.Cig != d.Ci / groups) shape_error("conv2d", input.shape(), kernel.shape());
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != d.Co))
    shape_error("conv2d bias", bias->shape(), kernel.shape());
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
  if (d.Ho <= 0 || d.Wo <= 0)
    shape_error("conv2d", input.shape(), kernel.shape());

  std::vector<double> out(static_cast<size_t>(d.N) * d.Co * d.Ho * d.Wo, 0.0);
  conv2d_forward(input.values().data(), kernel.values().data(),
                 bias != nullptr ? bias->values().data() : nullptr, out.data(),
                 d, stride, padding, groups);
  Shape out_shape = batched ? Shape{d.N, d.Co, d.Ho, d.Wo}
                            : Shape{d.Co, d.Ho, d.Wo};

  const Tensor empty;
  const Tensor& bref = bias != nullptr ? *bias : empty;
  Tape* tape = bias != nullptr ? result_tape({&input, &kernel, bias})
                               : result_tape({&input, &kernel});
  if (tape == nullptr)
    return Tensor(std::move(out_shape), share(std::move(out)), nullptr, -1);

  int xn = input.node(), wn = kernel.node(),
      bn = bias != nullptr ? bref.node() : -1;
  auto xdata = input.values();
  auto wdata = kernel.values();
  auto out_node = std::make_shared<int>(-1);
  auto backward = [xn, wn, bn, xdata, wdata, d, stride, padding, groups,
                   out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    conv2d_backward(xdata.data(), wdata.data(), g.data(),
                    xn >= 0 ? t.grad_buf(xn).data() : nullptr,
                    wn >= 0 ? t.grad_buf(wn).data() : nullptr,
                    bn >= 0 ? t.grad_buf(bn).data() : nullptr, d, stride,
                    padding, groups);
  };
  int node = tape->push_op(shape_numel(out_shape), backward);
  *out_node = node;
  return Tensor(std::move(out_shape), share(std::move(out)), tape, node);
}

// ---- layout ops -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    shape_error("reshape", a.shape(), shape);
  Tape* tape = result_tape({&a});
  if (tape == nullptr)
    return Tensor(std::move(shape),
                  std::make_shared<const std::vector<double>>(a.values()),
                  nullptr, -1);
  int an = a.node();
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    std::vector<double>& ga = t.grad_buf(an);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  int node = tape->push_op(a.numel(), backward);
  *out_node = node;
  return Tensor(std::move(shape),
                std::make_shared<const std::vector<double>>(a.values()), tape,
                node);
}

Tensor permute(const Tensor& a, const std::vector<int>& dims) {
  size_t rank = a.shape().size();
  if (dims.size() != rank)
    throw std::invalid_argument("permute: dims rank mismatch for " +
                                shape_str(a.shape()));
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) {
    int dd = dims[i];
    if (dd < 0 || dd >= static_cast<int>(rank) || seen[static_cast<size_t>(dd)])
      throw std::invalid_argument("permute: invalid axis list");
    seen[static_cast<size_t>(dd)] = true;
    out_shape[i] = a.shape()[static_cast<size_t>(dd)];
  }
  auto in_strides = strides_of(a.shape());
  int n = a.numel();

  // flat index map out -> in, reused by the adjoint in reverse; captured by
  // value because the adjoint outlives this frame
  auto map_fwd = [rank, n, dims, in_strides, out_shape](
                     const std::vector<double>& src, std::vector<double>& dst,
                     bool inverse) {
    std::vector<int> idx(rank, 0);
    for (int flat = 0; flat < n; ++flat) {
      long long src_off = 0;
      for (size_t i = 0; i < rank; ++i)
        src_off += static_cast<long long>(idx[i]) * in_strides[static_cast<size_t>(dims[i])];
      if (!inverse)
        dst[static_cast<size_t>(flat)] = src[static_cast<size_t>(src_off)];
      else
        dst[static_cast<size_t>(src_off)] += src[static_cast<size_t>(flat)];
      for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
        size_t ud = static_cast<size_t>(d);
        if (++idx[ud] < out_shape[ud]) break;
        idx[ud] = 0;
      }
    }
  };

  std::vector<double> out(static_cast<size_t>(n));
  map_fwd(a.values(), out, false);

  Tape* tape = result_tape({&a});
  if (tape == nullptr)
    return Tensor(std::move(out_shape), share(std::move(out)), nullptr, -1);
  int an = a.node();
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, map_fwd, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    map_fwd(t.grad_buf(*out_node), t.grad_buf(an), true);
  };
  int node = tape->push_op(n, backward);
  *out_node = node;
  return Tensor(std::move(out_shape), share(std::move(out)), tape, node);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  size_t rank = s0.size();
  if (axis < 0 || axis >= static_cast<int>(rank))
    throw std::invalid_argument("concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  int total = s0[static_cast<size_t>(axis)];
  for (size_t p = 1; p < parts.size(); ++p) {
    const Shape& sp = parts[p].shape();
    if (sp.size() != rank) shape_error("concat", s0, sp);
    for (size_t i = 0; i < rank; ++i)
      if (static_cast<int>(i) != axis && sp[i] != s0[i])
        shape_error("concat", s0, sp);
    total += sp[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;

  // outer x axis x inner layout
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < rank; ++i) inner *= s0[i];

  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<int> extents;
  extents.reserve(parts.size());
  for (const Tensor& p : parts) extents.push_back(p.dim(axis));

  long long out_row = static_cast<long long>(total) * inner;
  {
    long long off = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      const std::vector<double>& v = parts[p].values();
      long long in_row = static_cast<long long>(extents[p]) * inner;
      for (int o = 0; o < outer; ++o)
        std::copy(v.begin() + o * in_row, v.begin() + (o + 1) * in_row,
                  out.begin() + o * out_row + off);
      off += in_row;
    }
  }

  std::vector<const Tensor*> refs;
  refs.reserve(parts.size());
  for (const Tensor& p : parts) refs.push_back(&p);
  Tape* tape = nullptr;
  for (const Tensor& p : parts)
    if (p.requires_grad()) {
      if (tape != nullptr && tape != p.tape())
        throw std::invalid_argument("concat mixes tensors from different tapes");
      tape = p.tape();
    }
  if (tape == nullptr)
    return Tensor(std::move(out_shape), share(std::move(out)), nullptr, -1);

  std::vector<int> in_nodes;
  in_nodes.reserve(parts.size());
  for (const Tensor& p : parts) in_nodes.push_back(p.node());
  auto out_node = std::make_shared<int>(-1);
  auto backward = [in_nodes, extents, outer, inner, out_row, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    long long off = 0;
    for (size_t p = 0; p < in_nodes.size(); ++p) {
      long long in_row = static_cast<long long>(extents[p]) * inner;
      if (in_nodes[p] >= 0) {
        std::vector<double>& gp = t.grad_buf(in_nodes[p]);
        for (int o = 0; o < outer; ++o)
          for (long long i = 0; i < in_row; ++i)
            gp[static_cast<size_t>(o * in_row + i)] +=
                g[static_cast<size_t>(o * out_row + off + i)];
      }
      off += in_row;
    }
  };
  int node = tape->push_op(shape_numel(out_shape), backward);
  *out_node = node;
  return Tensor(std::move(out_shape), share(std::move(out)), tape, node);
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= a.rank())
    throw std::invalid_argument("slice: axis out of range for " + shape_str(s));
  int extent = s[static_cast<size_t>(axis)];
  if (start < 0 || len < 0 || start + len > extent)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) +
                                ") out of bounds for " + shape_str(s));
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = len;
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];

  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  long long in_row = static_cast<long long>(extent) * inner;
  long long out_row = static_cast<long long>(len) * inner;
  long long off = static_cast<long long>(start) * inner;
  const std::vector<double>& v = a.values();
  for (int o = 0; o < outer; ++o)
    std::copy(v.begin() + o * in_row + off, v.begin() + o * in_row + off + out_row,
              out.begin() + o * out_row);

  Tape* tape = result_tape({&a});
  if (tape == nullptr)
    return Tensor(std::move(out_shape), share(std::move(out)), nullptr, -1);
  int an = a.node();
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, outer, in_row, out_row, off, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    std::vector<double>& ga = t.grad_buf(an);
    for (int o = 0; o < outer; ++o)
      for (long long i = 0; i < out_row; ++i)
        ga[static_cast<size_t>(o * in_row + off + i)] +=
            g[static_cast<size_t>(o * out_row + i)];
  };
  int node = tape->push_op(shape_numel(out_shape), backward);
  *out_node = node;
  return Tensor(std::move(out_shape), share(std::move(out)), tape, node);
}

// ---- softmax / reductions ----------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= a.rank())
    throw std::invalid_argument("softmax: axis out of range for " + shape_str(s));
  int L = s[static_cast<size_t>(axis)];
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];

  const std::vector<double>& v = a.values();
  std::vector<double> out(v.size());
  for (int o = 0; o < outer; ++o)
    for (int in = 0; in < inner; ++in) {
      long long base = static_cast<long long>(o) * L * inner + in;
      double mx = -1e308;
      for (int l = 0; l < L; ++l)
        mx = std::max(mx, v[static_cast<size_t>(base + static_cast<long long>(l) * inner)]);
      double sum = 0.0;
      for (int l = 0; l < L; ++l) {
        size_t i = static_cast<size_t>(base + static_cast<long long>(l) * inner);
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
      }
      for (int l = 0; l < L; ++l)
        out[static_cast<size_t>(base + static_cast<long long>(l) * inner)] /= sum;
    }

  Tape* tape = result_tape({&a});
  if (tape == nullptr) return Tensor(s, share(std::move(out)), nullptr, -1);
  int an = a.node();
  auto ydata = out;
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, ydata, L, outer, inner, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    const std::vector<double>& g = t.grad_buf(*out_node);
    std::vector<double>& ga = t.grad_buf(an);
    for (int o = 0; o < outer; ++o)
      for (int in = 0; in < inner; ++in) {
        long long base = static_cast<long long>(o) * L * inner + in;
        double dot = 0.0;
        for (int l = 0; l < L; ++l) {
          size_t i = static_cast<size_t>(base + static_cast<long long>(l) * inner);
          dot += g[i] * ydata[i];
        }
        for (int l = 0; l < L; ++l) {
          size_t i = static_cast<size_t>(base + static_cast<long long>(l) * inner);
          ga[i] += ydata[i] * (g[i] - dot);
        }
      }
  };
  int node = tape->push_op(a.numel(), backward);
  *out_node = node;
  return Tensor(s, share(std::move(out)), tape, node);
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tape* tape = result_tape({&a});
  if (tape == nullptr) return Tensor::scalar(s);
  int an = a.node();
  int n = a.numel();
  auto out_node = std::make_shared<int>(-1);
  auto backward = [an, n, out_node](Tape& t) {
    if (!t.has_grad(*out_node)) return;
    double g = t.grad_buf(*out_node)[0];
    std::vector<double>& ga = t.grad_buf(an);
    for (int i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g;
  };
  int node = tape->push_op(1, backward);
  *out_node = node;
  return Tensor({1}, share({s}), tape, node);
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / std::max(1, a.numel()));
}

Tensor sum_axis(const Tensor& a, int axis, bool keepdim) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= a.rank())
    throw std::invalid_argument("sum_axis: axis out of range for " + shape_str(s));
  int L = s[static_cast<size_t>(axis)];
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];

  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = 1;
  const std::vector<double>& v = a.values();
  std::vector<double> out(static_cast<size_t>(outer) * inner, 0.0);
  for (int o = 0; o < outer; ++o)
    for (int l = 0; l < L; ++l) {
      long long base = (static_cast<long long>(o) * L + l) * inner;
      for (int in = 0; in < inner; ++in)
        out[static_cast<size_t>(o) * inner + in] += v[static_cast<size_t>(base + in)];
    }

  Tape* tape = result_tape({&a});
  Tensor res;
  if (tape == nullptr) {
    res = Tensor(out_shape, share(std::move(out)), nullptr, -1);
  } else {
    int an = a.node();
    auto out_node = std::make_shared<int>(-1);
    auto backward = [an, L, outer, inner, out_node](Tape& t) {
      if (!t.has_grad(*out_node)) return;
      const std::vector<double>& g = t.grad_buf(*out_node);
      std::vector<double>& ga = t.grad_buf(an);
      for (int o = 0; o < outer; ++o)
        for (int l = 0; l < L; ++l) {
          long long base = (static_cast<long long>(o) * L + l) * inner;
          for (int in = 0; in < inner; ++in)
            ga[static_cast<size_t>(base + in)] += g[static_cast<size_t>(o) * inner + in];
        }
    };
    int node = tape->push_op(outer * inner, backward);
    *out_node = node;
    res = Tensor(out_shape, share(std::move(out)), tape, node);
  }
  if (!keepdim) {
    Shape squeezed;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
      if (i != axis) squeezed.push_back(s[static_cast<size_t>(i)]);
    if (squeezed.empty()) squeezed.push_back(1);
    res = reshape(res, squeezed);
  }
  return res;
}

Tensor mean_axis(const Tensor& a, int axis, bool keepdim) {
  int L = a.shape()[static_cast<size_t>(axis)];
  return mul_scalar(sum_axis(a, axis, keepdim), 1.0 / std::max(1, L));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw std::invalid_argument("attention: expects rank-3 [B,T,D] inputs");
  int D = q.dim(2);
  Tensor scores = bmm(q, permute(k, {0, 2, 1}));
  scores = mul_scalar(scores, 1.0 / std::sqrt(static_cast<double>(D)));
  Tensor w = softmax(scores, 2);
  return bmm(w, v);
}

// ---- grad check --------------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw std::invalid_argument("grad_check: eps must be in [1e-7, 1e-3]");

  Tape tape;
  Tensor xt = tape.watch(x);
  Tensor y = f(tape, xt);
  if (y.numel() != 1)
    throw std::invalid_argument("grad_check: f must be scalar-valued");
  tape.backward(y);
  std::vector<double> analytic = tape.grad_of(xt);

  for (size_t i = 0; i < analytic.size(); ++i)
    if (!std::isfinite(analytic[i]))
      throw std::runtime_error("grad_check: non-finite analytic gradient at coordinate " +
                               std::to_string(i));

  auto eval = [&](const std::vector<double>& vals) {
    Tape t2;
    Tensor xp = t2.watch(Tensor::from(x.shape(), vals));
    return f(t2, xp).value();
  };

  double max_err = 0.0;
  std::vector<double> base = x.values();
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<double> lo = base, hi = base;
    hi[i] += eps;
    lo[i] -= eps;
    double cd = (eval(hi) - eval(lo)) / (2.0 * eps);
    double err = std::fabs(analytic[i] - cd) / std::max(1.0, std::fabs(cd));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace hstrack
