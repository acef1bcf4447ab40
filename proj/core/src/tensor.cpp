#include "agfa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "agfa/error.hpp"

namespace agfa {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

ConvParams ConvParams::same(int in_channels, int out_channels, std::array<int, 3> kernel,
                            std::array<int, 3> dilation) {
  ConvParams p;
  p.kernel = kernel;
  p.dilation = dilation;
  for (int a = 0; a < 3; ++a) p.padding[a] = dilation[a] * (kernel[a] - 1) / 2;
  p.stride = {1, 1, 1};
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  return p;
}

RunningStats RunningStats::identity(int channels) {
  RunningStats rs;
  rs.mean.assign(channels, 0.0);
  rs.var.assign(channels, 1.0);
  rs.initialized = true;
  return rs;
}

// ---------------------------------------------------------------------------

struct Tensor::Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // empty for leaves
  bool consumed = false;
  int backward_runs = 0;

  bool is_leaf() const { return !backward_fn; }

  void accumulate(const std::vector<double>& g) {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

namespace {

using Node = Tensor::Node;

void check_shape(const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::kShapeMismatch, "tensor rank must be >= 1");
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0)
      fail(ErrorKind::kShapeMismatch,
           "extent of axis " + std::to_string(i) + " must be positive, got " +
               std::to_string(shape[i]));
  }
}

std::shared_ptr<Node> make_leaf(const Shape& shape, std::vector<double> values,
                                bool requires_grad) {
  check_shape(shape);
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    fail(ErrorKind::kShapeMismatch, "value count " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

}  // namespace

Tensor make_op_result(const Shape& shape, std::vector<double> values,
                      std::vector<Tensor> parents, std::function<void(Node&)> backward_fn) {
  auto n = make_leaf(shape, std::move(values), false);
  bool track = false;
  for (const auto& p : parents) track = track || p.requires_grad();
  if (track) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  struct Access : Tensor {
    explicit Access(std::shared_ptr<Node> node) : Tensor(std::move(node)) {}
  };
  return Access(std::move(n));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  check_shape(shape);
  return Tensor(make_leaf(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  check_shape(shape);
  return Tensor(make_leaf(shape, std::vector<double>(shape_numel(shape), value), requires_grad));
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) fail(ErrorKind::kState, "tensor is not defined");
  return node_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int64_t Tensor::size() const { return shape_numel(shape()); }

std::vector<double>& Tensor::values() {
  if (!node_) fail(ErrorKind::kState, "tensor is not defined");
  return node_->values;
}

const std::vector<double>& Tensor::values() const {
  if (!node_) fail(ErrorKind::kState, "tensor is not defined");
  return node_->values;
}

double Tensor::value() const {
  if (size() != 1) fail(ErrorKind::kShapeMismatch, "value() needs a scalar, got " + shape_str(shape()));
  return values()[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) fail(ErrorKind::kShapeMismatch, "index rank mismatch");
  int64_t flat = 0;
  int a = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[a]) fail(ErrorKind::kInvalidArgument, "index out of range on axis " + std::to_string(a));
    flat = flat * s[a] + i;
    ++a;
  }
  return values()[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool requires_grad) {
  if (!node_) fail(ErrorKind::kState, "tensor is not defined");
  if (!node_->is_leaf()) fail(ErrorKind::kState, "requires_grad is settable on leaf tensors only");
  node_->requires_grad = requires_grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) fail(ErrorKind::kState, "tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detached() const { return from_values(shape(), values()); }

bool Tensor::is_leaf() const { return node_ && node_->is_leaf(); }

int Tensor::backward_runs() const { return node_ ? node_->backward_runs : 0; }

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss, bool retain_graph) {
  if (!loss.defined()) fail(ErrorKind::kState, "backward: loss is not defined");
  if (loss.size() != 1)
    fail(ErrorKind::kShapeMismatch, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) fail(ErrorKind::kState, "backward: loss does not require grad");

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf() && n->consumed)
      fail(ErrorKind::kState,
           "backward: graph already traversed; rerun the forward pass or retain the graph");
  }

  loss.node()->accumulate({1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
    n->backward_fn(*n);
    n->backward_runs++;
    if (!retain_graph) n->consumed = true;
  }
}

// ---------------------------------------------------------------------------
// op helpers

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4)
    fail(ErrorKind::kShapeMismatch,
         std::string(what) + " must be rank-4 [C,D,H,W], got " + shape_str(t.shape()));
}

inline int64_t idx4(int c, int z, int y, int x, int D, int H, int W) {
  return ((static_cast<int64_t>(c) * D + z) * H + y) * W + x;
}

constexpr int64_t kOmpThreshold = 1 << 14;

}  // namespace

// ---------------------------------------------------------------------------
// conv3d

Tensor conv3d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvParams& params) {
  require_rank4(input, "conv3d input");
  if (weights.rank() != 5)
    fail(ErrorKind::kShapeMismatch,
         "conv3d weights must be rank-5 [C_out,C_in,kd,kh,kw], got " + shape_str(weights.shape()));
  const Shape& is = input.shape();
  const Shape& ws = weights.shape();
  const int Cin = is[0], D = is[1], H = is[2], W = is[3];
  const int Cout = ws[0];
  for (int a = 0; a < 3; ++a) {
    if (params.kernel[a] <= 0 || params.kernel[a] % 2 == 0)
      fail(ErrorKind::kInvalidArgument,
           "conv3d kernel extent on axis " + std::to_string(a) + " must be odd and positive");
    if (params.dilation[a] <= 0 || params.stride[a] <= 0 || params.padding[a] < 0)
      fail(ErrorKind::kInvalidArgument, "conv3d dilation/stride/padding invalid on axis " + std::to_string(a));
  }
  if (params.in_channels != Cin)
    fail(ErrorKind::kShapeMismatch, "conv3d: params.in_channels " + std::to_string(params.in_channels) +
                                        " != input channels " + std::to_string(Cin) + " (axis 0)");
  if (ws[1] != Cin)
    fail(ErrorKind::kShapeMismatch, "conv3d: weight channel axis 1 is " + std::to_string(ws[1]) +
                                        ", input has " + std::to_string(Cin));
  if (params.out_channels != Cout)
    fail(ErrorKind::kShapeMismatch, "conv3d: params.out_channels != weight axis 0");
  if (ws[2] != params.kernel[0] || ws[3] != params.kernel[1] || ws[4] != params.kernel[2])
    fail(ErrorKind::kShapeMismatch, "conv3d: weight kernel extents do not match params");
  if (bias.rank() != 1 || bias.shape()[0] != Cout)
    fail(ErrorKind::kShapeMismatch, "conv3d: bias must be [C_out]");

  const std::array<int, 3> in_ext{D, H, W};
  std::array<int, 3> out_ext{};
  for (int a = 0; a < 3; ++a) {
    int reach = params.dilation[a] * (params.kernel[a] - 1) + 1;
    int num = in_ext[a] + 2 * params.padding[a] - reach;
    if (num < 0)
      fail(ErrorKind::kShapeMismatch, "conv3d: kernel reach exceeds padded input on axis " +
                                          std::to_string(a + 1) + " (extent " + std::to_string(in_ext[a]) + ")");
    out_ext[a] = num / params.stride[a] + 1;
    if (out_ext[a] <= 0)
      fail(ErrorKind::kShapeMismatch, "conv3d: zero output extent on axis " + std::to_string(a + 1));
  }
  const int Do = out_ext[0], Ho = out_ext[1], Wo = out_ext[2];

  const auto& in = input.values();
  const auto& w = weights.values();
  const auto& b = bias.values();
  const int kd = params.kernel[0], kh = params.kernel[1], kw = params.kernel[2];
  const int dd = params.dilation[0], dh = params.dilation[1], dw = params.dilation[2];
  const int pd = params.padding[0], ph = params.padding[1], pw = params.padding[2];
  const int sd = params.stride[0], sh = params.stride[1], sw = params.stride[2];

  std::vector<double> out(static_cast<size_t>(Cout) * Do * Ho * Wo);
  const int64_t out_spatial = static_cast<int64_t>(Do) * Ho * Wo;
  const int64_t work = static_cast<int64_t>(Cout) * out_spatial * Cin * kd * kh * kw;

  // Per output element, contributions accumulate in (ci, kz, ky, kx) order
  // regardless of the loop nest below, so results are independent of the
  // thread count. The stride-1 path streams rows for vectorization.
  if (sd == 1 && sh == 1 && sw == 1) {
#pragma omp parallel for schedule(static) if (work > kOmpThreshold)
    for (int co = 0; co < Cout; ++co) {
      double* out_c = out.data() + static_cast<int64_t>(co) * Do * Ho * Wo;
      for (int64_t i = 0; i < static_cast<int64_t>(Do) * Ho * Wo; ++i) out_c[i] = b[co];
      for (int ci = 0; ci < Cin; ++ci) {
        const double* in_c = in.data() + static_cast<int64_t>(ci) * D * H * W;
        const double* w_c = w.data() + ((static_cast<int64_t>(co) * Cin + ci) * kd) * kh * kw;
        for (int kz = 0; kz < kd; ++kz) {
          const int zs = kz * dd - pd;  // z = zo + zs
          const int zo_lo = std::max(0, -zs);
          const int zo_hi = std::min(Do - 1, D - 1 - zs);
          for (int ky = 0; ky < kh; ++ky) {
            const int ys = ky * dh - ph;
            const int yo_lo = std::max(0, -ys);
            const int yo_hi = std::min(Ho - 1, H - 1 - ys);
            const double* w_row = w_c + (static_cast<int64_t>(kz) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const double wv = w_row[kx];
              const int xs = kx * dw - pw;
              const int xo_lo = std::max(0, -xs);
              const int xo_hi = std::min(Wo - 1, W - 1 - xs);
              for (int zo = zo_lo; zo <= zo_hi; ++zo) {
                for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                  const double* in_row = in_c + (static_cast<int64_t>(zo + zs) * H + (yo + ys)) * W + xs;
                  double* out_row = out_c + (static_cast<int64_t>(zo) * Ho + yo) * Wo;
                  for (int xo = xo_lo; xo <= xo_hi; ++xo) out_row[xo] += wv * in_row[xo];
                }
              }
            }
          }
        }
      }
    }
  } else {
#pragma omp parallel for collapse(2) schedule(static) if (work > kOmpThreshold)
    for (int co = 0; co < Cout; ++co) {
      for (int zo = 0; zo < Do; ++zo) {
        for (int yo = 0; yo < Ho; ++yo) {
          for (int xo = 0; xo < Wo; ++xo) {
            double acc = b[co];
            for (int ci = 0; ci < Cin; ++ci) {
              const double* in_c = in.data() + static_cast<int64_t>(ci) * D * H * W;
              const double* w_c = w.data() + ((static_cast<int64_t>(co) * Cin + ci) * kd) * kh * kw;
              for (int kz = 0; kz < kd; ++kz) {
                int z = zo * sd - pd + kz * dd;
                if (z < 0 || z >= D) continue;
                for (int ky = 0; ky < kh; ++ky) {
                  int y = yo * sh - ph + ky * dh;
                  if (y < 0 || y >= H) continue;
                  const double* in_row = in_c + (static_cast<int64_t>(z) * H + y) * W;
                  const double* w_row = w_c + (static_cast<int64_t>(kz) * kh + ky) * kw;
                  for (int kx = 0; kx < kw; ++kx) {
                    int x = xo * sw - pw + kx * dw;
                    if (x < 0 || x >= W) continue;
                    acc += w_row[kx] * in_row[x];
                  }
                }
              }
            }
            out[idx4(co, zo, yo, xo, Do, Ho, Wo)] = acc;
          }
        }
      }
    }
  }

  auto in_node = input.node();
  auto w_node = weights.node();
  auto b_node = bias.node();
  ConvParams p = params;
  Shape in_shape = is;
  Shape w_shape = ws;
  auto bw = [in_node, w_node, b_node, p, in_shape, w_shape, Do, Ho, Wo](Node& self) {
    const auto& g = self.grad;
    const int Cin = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
    const int Cout = w_shape[0];
    const int kd = p.kernel[0], kh = p.kernel[1], kw = p.kernel[2];
    const int dd = p.dilation[0], dh = p.dilation[1], dw = p.dilation[2];
    const int pd = p.padding[0], ph = p.padding[1], pw = p.padding[2];
    const int sd = p.stride[0], sh = p.stride[1], sw = p.stride[2];
    const auto& in = in_node->values;
    const auto& w = w_node->values;

    const bool unit_stride = sd == 1 && sh == 1 && sw == 1;

    if (in_node->requires_grad) {
      std::vector<double> gi(in.size(), 0.0);
      const int64_t work = static_cast<int64_t>(Cin) * D * H * W * Cout * kd * kh * kw;
      if (unit_stride) {
        // Row-streamed transposed convolution; each input channel plane is
        // owned by one thread, additions per element stay in a fixed order.
#pragma omp parallel for schedule(static) if (work > kOmpThreshold)
        for (int ci = 0; ci < Cin; ++ci) {
          double* gi_c = gi.data() + static_cast<int64_t>(ci) * D * H * W;
          for (int co = 0; co < Cout; ++co) {
            const double* g_c = g.data() + static_cast<int64_t>(co) * Do * Ho * Wo;
            const double* w_c = w.data() + ((static_cast<int64_t>(co) * Cin + ci) * kd) * kh * kw;
            for (int kz = 0; kz < kd; ++kz) {
              const int zs = pd - kz * dd;  // zo = z + zs
              const int z_lo = std::max(0, -zs);
              const int z_hi = std::min(D - 1, Do - 1 - zs);
              for (int ky = 0; ky < kh; ++ky) {
                const int ys = ph - ky * dh;
                const int y_lo = std::max(0, -ys);
                const int y_hi = std::min(H - 1, Ho - 1 - ys);
                const double* w_row = w_c + (static_cast<int64_t>(kz) * kh + ky) * kw;
                for (int kx = 0; kx < kw; ++kx) {
                  const double wv = w_row[kx];
                  const int xs = pw - kx * dw;
                  const int x_lo = std::max(0, -xs);
                  const int x_hi = std::min(W - 1, Wo - 1 - xs);
                  for (int z = z_lo; z <= z_hi; ++z) {
                    for (int y = y_lo; y <= y_hi; ++y) {
                      const double* g_row = g_c + (static_cast<int64_t>(z + zs) * Ho + (y + ys)) * Wo + xs;
                      double* gi_row = gi_c + (static_cast<int64_t>(z) * H + y) * W;
                      for (int x = x_lo; x <= x_hi; ++x) gi_row[x] += wv * g_row[x];
                    }
                  }
                }
              }
            }
          }
        }
      } else {
#pragma omp parallel for collapse(2) schedule(static) if (work > kOmpThreshold)
        for (int ci = 0; ci < Cin; ++ci) {
          for (int z = 0; z < D; ++z) {
            for (int y = 0; y < H; ++y) {
              for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int co = 0; co < Cout; ++co) {
                  const double* g_c = g.data() + static_cast<int64_t>(co) * Do * Ho * Wo;
                  const double* w_c = w.data() + ((static_cast<int64_t>(co) * Cin + ci) * kd) * kh * kw;
                  for (int kz = 0; kz < kd; ++kz) {
                    int zn = z + pd - kz * dd;
                    if (zn < 0 || zn % sd) continue;
                    int zo = zn / sd;
                    if (zo >= Do) continue;
                    for (int ky = 0; ky < kh; ++ky) {
                      int yn = y + ph - ky * dh;
                      if (yn < 0 || yn % sh) continue;
                      int yo = yn / sh;
                      if (yo >= Ho) continue;
                      for (int kx = 0; kx < kw; ++kx) {
                        int xn = x + pw - kx * dw;
                        if (xn < 0 || xn % sw) continue;
                        int xo = xn / sw;
                        if (xo >= Wo) continue;
                        acc += w_c[(static_cast<int64_t>(kz) * kh + ky) * kw + kx] *
                               g_c[(static_cast<int64_t>(zo) * Ho + yo) * Wo + xo];
                      }
                    }
                  }
                }
                gi[idx4(ci, z, y, x, D, H, W)] = acc;
              }
            }
          }
        }
      }
      in_node->accumulate(gi);
    }

    if (w_node->requires_grad) {
      std::vector<double> gw(w.size(), 0.0);
      const int64_t work = static_cast<int64_t>(Cout) * Cin * kd * kh * kw * Do * Ho * Wo;
#pragma omp parallel for collapse(2) schedule(static) if (work > kOmpThreshold)
      for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
          const double* g_c = g.data() + static_cast<int64_t>(co) * Do * Ho * Wo;
          const double* in_c = in.data() + static_cast<int64_t>(ci) * D * H * W;
          for (int kz = 0; kz < kd; ++kz) {
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                double acc = 0.0;
                if (unit_stride) {
                  const int zs = kz * dd - pd;
                  const int ys = ky * dh - ph;
                  const int xs = kx * dw - pw;
                  const int zo_lo = std::max(0, -zs), zo_hi = std::min(Do - 1, D - 1 - zs);
                  const int yo_lo = std::max(0, -ys), yo_hi = std::min(Ho - 1, H - 1 - ys);
                  const int xo_lo = std::max(0, -xs), xo_hi = std::min(Wo - 1, W - 1 - xs);
                  for (int zo = zo_lo; zo <= zo_hi; ++zo) {
                    for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                      const double* g_row = g_c + (static_cast<int64_t>(zo) * Ho + yo) * Wo;
                      const double* in_row = in_c + (static_cast<int64_t>(zo + zs) * H + (yo + ys)) * W + xs;
                      for (int xo = xo_lo; xo <= xo_hi; ++xo) acc += g_row[xo] * in_row[xo];
                    }
                  }
                } else {
                  for (int zo = 0; zo < Do; ++zo) {
                    int z = zo * sd - pd + kz * dd;
                    if (z < 0 || z >= D) continue;
                    for (int yo = 0; yo < Ho; ++yo) {
                      int y = yo * sh - ph + ky * dh;
                      if (y < 0 || y >= H) continue;
                      for (int xo = 0; xo < Wo; ++xo) {
                        int x = xo * sw - pw + kx * dw;
                        if (x < 0 || x >= W) continue;
                        acc += g_c[(static_cast<int64_t>(zo) * Ho + yo) * Wo + xo] *
                               in_c[(static_cast<int64_t>(z) * H + y) * W + x];
                      }
                    }
                  }
                }
                gw[(((static_cast<int64_t>(co) * Cin + ci) * kd + kz) * kh + ky) * kw + kx] = acc;
              }
            }
          }
        }
      }
      w_node->accumulate(gw);
    }

    if (b_node->requires_grad) {
      std::vector<double> gb(static_cast<size_t>(Cout), 0.0);
      for (int co = 0; co < Cout; ++co) {
        const double* g_c = g.data() + static_cast<int64_t>(co) * Do * Ho * Wo;
        double acc = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(Do) * Ho * Wo; ++i) acc += g_c[i];
        gb[co] = acc;
      }
      b_node->accumulate(gb);
    }
  };

  return make_op_result({Cout, Do, Ho, Wo}, std::move(out), {input, weights, bias}, std::move(bw));
}

// ---------------------------------------------------------------------------
// pooling

Tensor pool3d(const Tensor& input, PoolKind kind, std::array<int, 3> window,
              std::array<int, 3> stride) {
  require_rank4(input, "pool3d input");
  const Shape& is = input.shape();
  const int C = is[0], D = is[1], H = is[2], W = is[3];
  const std::array<int, 3> in_ext{D, H, W};
  std::array<int, 3> out_ext{};
  for (int a = 0; a < 3; ++a) {
    if (window[a] <= 0 || stride[a] <= 0)
      fail(ErrorKind::kInvalidArgument, "pool3d window/stride must be positive");
    if (window[a] > in_ext[a])
      fail(ErrorKind::kShapeMismatch, "pool3d window " + std::to_string(window[a]) +
                                          " exceeds extent " + std::to_string(in_ext[a]) +
                                          " on axis " + std::to_string(a + 1));
    out_ext[a] = (in_ext[a] - window[a]) / stride[a] + 1;
  }
  const int Do = out_ext[0], Ho = out_ext[1], Wo = out_ext[2];
  const auto& in = input.values();
  std::vector<double> out(static_cast<size_t>(C) * Do * Ho * Wo);
  std::vector<int64_t> argmax;
  if (kind == PoolKind::kMax) argmax.resize(out.size());

  for (int c = 0; c < C; ++c) {
    for (int zo = 0; zo < Do; ++zo) {
      for (int yo = 0; yo < Ho; ++yo) {
        for (int xo = 0; xo < Wo; ++xo) {
          int64_t oi = idx4(c, zo, yo, xo, Do, Ho, Wo);
          if (kind == PoolKind::kMax) {
            int64_t best_i = idx4(c, zo * stride[0], yo * stride[1], xo * stride[2], D, H, W);
            double best = in[best_i];
            for (int kz = 0; kz < window[0]; ++kz)
              for (int ky = 0; ky < window[1]; ++ky)
                for (int kx = 0; kx < window[2]; ++kx) {
                  int64_t ii = idx4(c, zo * stride[0] + kz, yo * stride[1] + ky,
                                    xo * stride[2] + kx, D, H, W);
                  if (in[ii] > best) {  // strict: first maximum in scan order wins
                    best = in[ii];
                    best_i = ii;
                  }
                }
            out[oi] = best;
            argmax[oi] = best_i;
          } else {
            double acc = 0.0;
            for (int kz = 0; kz < window[0]; ++kz)
              for (int ky = 0; ky < window[1]; ++ky)
                for (int kx = 0; kx < window[2]; ++kx)
                  acc += in[idx4(c, zo * stride[0] + kz, yo * stride[1] + ky,
                                 xo * stride[2] + kx, D, H, W)];
            out[oi] = acc / (static_cast<double>(window[0]) * window[1] * window[2]);
          }
        }
      }
    }
  }

  auto in_node = input.node();
  Shape in_shape = is;
  auto bw = [in_node, in_shape, kind, window, stride, argmax, Do, Ho, Wo](Node& self) {
    if (!in_node->requires_grad) return;
    const int C = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
    std::vector<double> gi(in_node->values.size(), 0.0);
    const auto& g = self.grad;
    if (kind == PoolKind::kMax) {
      for (size_t oi = 0; oi < g.size(); ++oi) gi[argmax[oi]] += g[oi];
    } else {
      double inv = 1.0 / (static_cast<double>(window[0]) * window[1] * window[2]);
      for (int c = 0; c < C; ++c)
        for (int zo = 0; zo < Do; ++zo)
          for (int yo = 0; yo < Ho; ++yo)
            for (int xo = 0; xo < Wo; ++xo) {
              double gv = g[idx4(c, zo, yo, xo, Do, Ho, Wo)] * inv;
              for (int kz = 0; kz < window[0]; ++kz)
                for (int ky = 0; ky < window[1]; ++ky)
                  for (int kx = 0; kx < window[2]; ++kx)
                    gi[idx4(c, zo * stride[0] + kz, yo * stride[1] + ky, xo * stride[2] + kx,
                            D, H, W)] += gv;
            }
    }
    in_node->accumulate(gi);
  };

  return make_op_result({C, Do, Ho, Wo}, std::move(out), {input}, std::move(bw));
}

Tensor global_pool_channelwise(const Tensor& input, PoolKind kind) {
  require_rank4(input, "global_pool_channelwise input");
  const Shape& is = input.shape();
  const int C = is[0];
  const int64_t spatial = static_cast<int64_t>(is[1]) * is[2] * is[3];
  const auto& in = input.values();
  std::vector<double> out(C);
  std::vector<int64_t> argmax(kind == PoolKind::kMax ? C : 0);
  for (int c = 0; c < C; ++c) {
    const double* p = in.data() + c * spatial;
    if (kind == PoolKind::kMax) {
      double best = p[0];
      int64_t bi = 0;
      for (int64_t i = 1; i < spatial; ++i)
        if (p[i] > best) {
          best = p[i];
          bi = i;
        }
      out[c] = best;
      argmax[c] = c * spatial + bi;
    } else {
      double acc = 0.0;
      for (int64_t i = 0; i < spatial; ++i) acc += p[i];
      out[c] = acc / static_cast<double>(spatial);
    }
  }

  auto in_node = input.node();
  auto bw = [in_node, C, spatial, kind, argmax](Node& self) {
    if (!in_node->requires_grad) return;
    std::vector<double> gi(in_node->values.size(), 0.0);
    if (kind == PoolKind::kMax) {
      for (int c = 0; c < C; ++c) gi[argmax[c]] += self.grad[c];
    } else {
      double inv = 1.0 / static_cast<double>(spatial);
      for (int c = 0; c < C; ++c) {
        double gv = self.grad[c] * inv;
        for (int64_t i = 0; i < spatial; ++i) gi[c * spatial + i] += gv;
      }
    }
    in_node->accumulate(gi);
  };
  return make_op_result({C}, std::move(out), {input}, std::move(bw));
}

Tensor spatial_pool_across_channels(const Tensor& input, PoolKind kind) {
  require_rank4(input, "spatial_pool_across_channels input");
  const Shape& is = input.shape();
  const int C = is[0];
  const int64_t spatial = static_cast<int64_t>(is[1]) * is[2] * is[3];
  const auto& in = input.values();
  std::vector<double> out(spatial);
  std::vector<int64_t> argmax(kind == PoolKind::kMax ? spatial : 0);
  for (int64_t i = 0; i < spatial; ++i) {
    if (kind == PoolKind::kMax) {
      double best = in[i];
      int64_t bc = 0;
      for (int c = 1; c < C; ++c)
        if (in[c * spatial + i] > best) {
          best = in[c * spatial + i];
          bc = c;
        }
      out[i] = best;
      argmax[i] = bc * spatial + i;
    } else {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) acc += in[c * spatial + i];
      out[i] = acc / static_cast<double>(C);
    }
  }

  auto in_node = input.node();
  auto bw = [in_node, C, spatial, kind, argmax](Node& self) {
    if (!in_node->requires_grad) return;
    std::vector<double> gi(in_node->values.size(), 0.0);
    if (kind == PoolKind::kMax) {
      for (int64_t i = 0; i < spatial; ++i) gi[argmax[i]] += self.grad[i];
    } else {
      double inv = 1.0 / static_cast<double>(C);
      for (int64_t i = 0; i < spatial; ++i) {
        double gv = self.grad[i] * inv;
        for (int c = 0; c < C; ++c) gi[c * spatial + i] += gv;
      }
    }
    in_node->accumulate(gi);
  };
  return make_op_result({1, is[1], is[2], is[3]}, std::move(out), {input}, std::move(bw));
}

// ---------------------------------------------------------------------------
// activations / softmax

namespace {

// Numerically stable sigmoid, clamped into the open interval (0,1) at the
// last representable doubles so downstream gates never saturate exactly.
inline double sigmoid_value(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    double e = std::exp(x);
    s = e / (1.0 + e);
  }
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;  // nextafter(1,0)
  if (s < lo) s = lo;
  if (s > hi) s = hi;
  return s;
}

}  // namespace

Tensor activation(const Tensor& input, ActKind kind) {
  const auto& in = input.values();
  std::vector<double> out(in.size());
  if (kind == ActKind::kSigmoid) {
    for (size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_value(in[i]);
  } else {
    for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  }

  auto in_node = input.node();
  if (kind == ActKind::kSigmoid) {
    std::vector<double> saved = out;
    auto bw = [in_node, saved](Node& self) {
      if (!in_node->requires_grad) return;
      std::vector<double> gi(saved.size());
      for (size_t i = 0; i < saved.size(); ++i) gi[i] = self.grad[i] * saved[i] * (1.0 - saved[i]);
      in_node->accumulate(gi);
    };
    return make_op_result(input.shape(), std::move(out), {input}, std::move(bw));
  }
  auto bw = [in_node](Node& self) {
    if (!in_node->requires_grad) return;
    const auto& x = in_node->values;
    std::vector<double> gi(x.size());
    // relu'(0) = 0 by convention
    for (size_t i = 0; i < x.size(); ++i) gi[i] = x[i] > 0.0 ? self.grad[i] : 0.0;
    in_node->accumulate(gi);
  };
  return make_op_result(input.shape(), std::move(out), {input}, std::move(bw));
}

Tensor sigmoid(const Tensor& input) { return activation(input, ActKind::kSigmoid); }
Tensor relu(const Tensor& input) { return activation(input, ActKind::kRelu); }

Tensor softmax(const Tensor& input, int axis) {
  const Shape& s = input.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    fail(ErrorKind::kInvalidArgument, "softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[a];
  for (int a = axis + 1; a < static_cast<int>(s.size()); ++a) inner *= s[a];
  const int64_t n = s[axis];
  const auto& in = input.values();
  std::vector<double> out(in.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
      double denom = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        denom += e;
      }
      for (int64_t k = 0; k < n; ++k) out[base + k * inner] /= denom;
    }
  }

  auto in_node = input.node();
  std::vector<double> saved = out;
  auto bw = [in_node, saved, outer, inner, n](Node& self) {
    if (!in_node->requires_grad) return;
    std::vector<double> gi(saved.size());
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * n * inner + i;
        double dot = 0.0;
        for (int64_t k = 0; k < n; ++k) dot += self.grad[base + k * inner] * saved[base + k * inner];
        for (int64_t k = 0; k < n; ++k) {
          int64_t ii = base + k * inner;
          gi[ii] = saved[ii] * (self.grad[ii] - dot);
        }
      }
    }
    in_node->accumulate(gi);
  };
  return make_op_result(s, std::move(out), {input}, std::move(bw));
}

// ---------------------------------------------------------------------------
// matmul / transpose / reshape

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail(ErrorKind::kShapeMismatch, "matmul needs rank-2 operands, got " + shape_str(a.shape()) +
                                        " and " + shape_str(b.shape()));
  const int M = a.shape()[0], K = a.shape()[1];
  const int Kb = b.shape()[0], N = b.shape()[1];
  if (K != Kb)
    fail(ErrorKind::kShapeMismatch, "matmul inner extents differ: " + std::to_string(K) + " vs " +
                                        std::to_string(Kb));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<size_t>(M) * N, 0.0);
  const int64_t work = static_cast<int64_t>(M) * N * K;
#pragma omp parallel for schedule(static) if (work > kOmpThreshold)
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      double amk = av[static_cast<int64_t>(m) * K + k];
      const double* brow = bv.data() + static_cast<int64_t>(k) * N;
      double* orow = out.data() + static_cast<int64_t>(m) * N;
      for (int n = 0; n < N; ++n) orow[n] += amk * brow[n];
    }
  }

  auto a_node = a.node();
  auto b_node = b.node();
  auto bw = [a_node, b_node, M, K, N](Node& self) {
    const auto& g = self.grad;
    if (a_node->requires_grad) {
      // dA = G * B^T
      std::vector<double> ga(static_cast<size_t>(M) * K, 0.0);
      const auto& bv = b_node->values;
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
          double gmn = g[static_cast<int64_t>(m) * N + n];
          for (int k = 0; k < K; ++k) ga[static_cast<int64_t>(m) * K + k] += gmn * bv[static_cast<int64_t>(k) * N + n];
        }
      a_node->accumulate(ga);
    }
    if (b_node->requires_grad) {
      // dB = A^T * G
      std::vector<double> gb(static_cast<size_t>(K) * N, 0.0);
      const auto& av = a_node->values;
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          double amk = av[static_cast<int64_t>(m) * K + k];
          for (int n = 0; n < N; ++n) gb[static_cast<int64_t>(k) * N + n] += amk * g[static_cast<int64_t>(m) * N + n];
        }
      b_node->accumulate(gb);
    }
  };
  return make_op_result({M, N}, std::move(out), {a, b}, std::move(bw));
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorKind::kShapeMismatch, "transpose2d needs rank-2, got " + shape_str(a.shape()));
  const int M = a.shape()[0], N = a.shape()[1];
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) out[static_cast<int64_t>(n) * M + m] = av[static_cast<int64_t>(m) * N + n];
  auto a_node = a.node();
  auto bw = [a_node, M, N](Node& self) {
    if (!a_node->requires_grad) return;
    std::vector<double> ga(self.grad.size());
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < M; ++m) ga[static_cast<int64_t>(m) * N + n] = self.grad[static_cast<int64_t>(n) * M + m];
    a_node->accumulate(ga);
  };
  return make_op_result({N, M}, std::move(out), {a}, std::move(bw));
}

Tensor reshape(const Tensor& input, const Shape& shape) {
  check_shape(shape);
  if (shape_numel(shape) != input.size())
    fail(ErrorKind::kShapeMismatch, "reshape: element count changes from " + shape_str(input.shape()) +
                                        " to " + shape_str(shape));
  auto in_node = input.node();
  auto bw = [in_node](Node& self) {
    if (in_node->requires_grad) in_node->accumulate(self.grad);
  };
  return make_op_result(shape, input.values(), {input}, std::move(bw));
}

// ---------------------------------------------------------------------------
// batch norm

Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                  RunningStats& stats, BnMode mode) {
  if (input.rank() < 2) fail(ErrorKind::kShapeMismatch, "batch_norm input must have a channel axis plus data axes");
  const int C = input.shape()[0];
  if (scale.rank() != 1 || scale.shape()[0] != C || shift.rank() != 1 || shift.shape()[0] != C)
    fail(ErrorKind::kShapeMismatch, "batch_norm: scale/shift must be [C] with C = " + std::to_string(C));
  const int64_t spatial = input.size() / C;
  const auto& in = input.values();
  const auto& gamma = scale.values();
  const auto& beta = shift.values();
  const double eps = stats.eps;

  std::vector<double> mean(C), var(C), inv_std(C);
  if (mode == BnMode::kTrain) {
    for (int c = 0; c < C; ++c) {
      const double* p = in.data() + c * spatial;
      double m = 0.0;
      for (int64_t i = 0; i < spatial; ++i) m += p[i];
      m /= static_cast<double>(spatial);
      double v = 0.0;
      for (int64_t i = 0; i < spatial; ++i) {
        double d = p[i] - m;
        v += d * d;
      }
      v /= static_cast<double>(spatial);
      mean[c] = m;
      var[c] = v;
    }
    if (stats.mean.size() != static_cast<size_t>(C)) {
      stats.mean.assign(C, 0.0);
      stats.var.assign(C, 1.0);
    }
    for (int c = 0; c < C; ++c) {
      stats.mean[c] = (1.0 - stats.momentum) * stats.mean[c] + stats.momentum * mean[c];
      stats.var[c] = (1.0 - stats.momentum) * stats.var[c] + stats.momentum * var[c];
    }
    stats.initialized = true;
  } else {
    if (!stats.initialized)
      fail(ErrorKind::kState, "batch_norm: eval mode before any train step and no initialized running stats");
    if (stats.mean.size() != static_cast<size_t>(C))
      fail(ErrorKind::kShapeMismatch, "batch_norm: running stats channel count mismatch");
    mean = stats.mean;
    var = stats.var;
  }
  for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  std::vector<double> xhat(in.size());
  std::vector<double> out(in.size());
  for (int c = 0; c < C; ++c) {
    const double* p = in.data() + c * spatial;
    double* xh = xhat.data() + c * spatial;
    double* o = out.data() + c * spatial;
    for (int64_t i = 0; i < spatial; ++i) {
      xh[i] = (p[i] - mean[c]) * inv_std[c];
      o[i] = gamma[c] * xh[i] + beta[c];
    }
  }

  auto in_node = input.node();
  auto s_node = scale.node();
  auto b_node = shift.node();
  auto bw = [in_node, s_node, b_node, xhat, inv_std, C, spatial, mode](Node& self) {
    const auto& g = self.grad;
    const auto& gamma = s_node->values;
    if (s_node->requires_grad) {
      std::vector<double> gs(C, 0.0);
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t i = 0; i < spatial; ++i) acc += g[c * spatial + i] * xhat[c * spatial + i];
        gs[c] = acc;
      }
      s_node->accumulate(gs);
    }
    if (b_node->requires_grad) {
      std::vector<double> gb(C, 0.0);
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t i = 0; i < spatial; ++i) acc += g[c * spatial + i];
        gb[c] = acc;
      }
      b_node->accumulate(gb);
    }
    if (in_node->requires_grad) {
      std::vector<double> gi(in_node->values.size());
      if (mode == BnMode::kTrain) {
        for (int c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int64_t i = 0; i < spatial; ++i) {
            sum_g += g[c * spatial + i];
            sum_gx += g[c * spatial + i] * xhat[c * spatial + i];
          }
          const double mg = sum_g / static_cast<double>(spatial);
          const double mgx = sum_gx / static_cast<double>(spatial);
          const double k = gamma[c] * inv_std[c];
          for (int64_t i = 0; i < spatial; ++i) {
            int64_t ii = c * spatial + i;
            gi[ii] = k * (g[ii] - mg - xhat[ii] * mgx);
          }
        }
      } else {
        for (int c = 0; c < C; ++c) {
          const double k = gamma[c] * inv_std[c];
          for (int64_t i = 0; i < spatial; ++i) gi[c * spatial + i] = k * g[c * spatial + i];
        }
      }
      in_node->accumulate(gi);
    }
  };
  return make_op_result(input.shape(), std::move(out), {input, scale, shift}, std::move(bw));
}

// ---------------------------------------------------------------------------
// upsample

Tensor upsample_trilinear2x(const Tensor& input) {
  require_rank4(input, "upsample input");
  const Shape& is = input.shape();
  const int C = is[0], D = is[1], H = is[2], W = is[3];
  const int Do = 2 * D, Ho = 2 * H, Wo = 2 * W;
  const auto& in = input.values();
  std::vector<double> out(static_cast<size_t>(C) * Do * Ho * Wo);

  // align-corners-false: output index i samples input coordinate
  // (i + 0.5)/2 - 0.5, clamped to the valid range.
  auto coords = [](int n_out, int n_in, std::vector<int>& i0, std::vector<int>& i1,
                   std::vector<double>& w1) {
    i0.resize(n_out);
    i1.resize(n_out);
    w1.resize(n_out);
    for (int i = 0; i < n_out; ++i) {
      double src = (i + 0.5) / 2.0 - 0.5;
      if (src < 0.0) src = 0.0;
      if (src > n_in - 1) src = n_in - 1;
      int lo = static_cast<int>(std::floor(src));
      if (lo > n_in - 2) lo = n_in - 2;
      if (lo < 0) lo = 0;
      i0[i] = lo;
      i1[i] = n_in > 1 ? lo + 1 : 0;
      w1[i] = n_in > 1 ? src - lo : 0.0;
    }
  };
  std::vector<int> z0, z1, y0, y1, x0, x1;
  std::vector<double> wz, wy, wx;
  coords(Do, D, z0, z1, wz);
  coords(Ho, H, y0, y1, wy);
  coords(Wo, W, x0, x1, wx);

  for (int c = 0; c < C; ++c) {
    const double* p = in.data() + static_cast<int64_t>(c) * D * H * W;
    double* o = out.data() + static_cast<int64_t>(c) * Do * Ho * Wo;
    for (int z = 0; z < Do; ++z)
      for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
          double c00 = p[(static_cast<int64_t>(z0[z]) * H + y0[y]) * W + x0[x]] * (1 - wx[x]) +
                       p[(static_cast<int64_t>(z0[z]) * H + y0[y]) * W + x1[x]] * wx[x];
          double c01 = p[(static_cast<int64_t>(z0[z]) * H + y1[y]) * W + x0[x]] * (1 - wx[x]) +
                       p[(static_cast<int64_t>(z0[z]) * H + y1[y]) * W + x1[x]] * wx[x];
          double c10 = p[(static_cast<int64_t>(z1[z]) * H + y0[y]) * W + x0[x]] * (1 - wx[x]) +
                       p[(static_cast<int64_t>(z1[z]) * H + y0[y]) * W + x1[x]] * wx[x];
          double c11 = p[(static_cast<int64_t>(z1[z]) * H + y1[y]) * W + x0[x]] * (1 - wx[x]) +
                       p[(static_cast<int64_t>(z1[z]) * H + y1[y]) * W + x1[x]] * wx[x];
          double c0 = c00 * (1 - wy[y]) + c01 * wy[y];
          double c1 = c10 * (1 - wy[y]) + c11 * wy[y];
          o[(static_cast<int64_t>(z) * Ho + y) * Wo + x] = c0 * (1 - wz[z]) + c1 * wz[z];
        }
  }

  auto in_node = input.node();
  auto bw = [in_node, C, D, H, W, Do, Ho, Wo, z0, z1, y0, y1, x0, x1, wz, wy, wx](Node& self) {
    if (!in_node->requires_grad) return;
    std::vector<double> gi(in_node->values.size(), 0.0);
    const auto& g = self.grad;
    for (int c = 0; c < C; ++c) {
      double* gp = gi.data() + static_cast<int64_t>(c) * D * H * W;
      const double* go = g.data() + static_cast<int64_t>(c) * Do * Ho * Wo;
      for (int z = 0; z < Do; ++z)
        for (int y = 0; y < Ho; ++y)
          for (int x = 0; x < Wo; ++x) {
            double gv = go[(static_cast<int64_t>(z) * Ho + y) * Wo + x];
            double wz1 = wz[z], wy1 = wy[y], wx1 = wx[x];
            gp[(static_cast<int64_t>(z0[z]) * H + y0[y]) * W + x0[x]] += gv * (1 - wz1) * (1 - wy1) * (1 - wx1);
            gp[(static_cast<int64_t>(z0[z]) * H + y0[y]) * W + x1[x]] += gv * (1 - wz1) * (1 - wy1) * wx1;
            gp[(static_cast<int64_t>(z0[z]) * H + y1[y]) * W + x0[x]] += gv * (1 - wz1) * wy1 * (1 - wx1);
            gp[(static_cast<int64_t>(z0[z]) * H + y1[y]) * W + x1[x]] += gv * (1 - wz1) * wy1 * wx1;
            gp[(static_cast<int64_t>(z1[z]) * H + y0[y]) * W + x0[x]] += gv * wz1 * (1 - wy1) * (1 - wx1);
            gp[(static_cast<int64_t>(z1[z]) * H + y0[y]) * W + x1[x]] += gv * wz1 * (1 - wy1) * wx1;
            gp[(static_cast<int64_t>(z1[z]) * H + y1[y]) * W + x0[x]] += gv * wz1 * wy1 * (1 - wx1);
            gp[(static_cast<int64_t>(z1[z]) * H + y1[y]) * W + x1[x]] += gv * wz1 * wy1 * wx1;
          }
    }
    in_node->accumulate(gi);
  };
  return make_op_result({C, Do, Ho, Wo}, std::move(out), {input}, std::move(bw));
}

// ---------------------------------------------------------------------------
// concat / slice / split

Tensor concat(const std::vector<Tensor>& inputs, int axis) {
  if (inputs.empty()) fail(ErrorKind::kInvalidArgument, "concat: no inputs");
  const Shape& s0 = inputs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    fail(ErrorKind::kInvalidArgument, "concat: axis out of range");
  Shape out_shape = s0;
  int total = s0[axis];
  for (size_t i = 1; i < inputs.size(); ++i) {
    const Shape& si = inputs[i].shape();
    if (si.size() != s0.size())
      fail(ErrorKind::kShapeMismatch, "concat: input " + std::to_string(i) + " rank differs");
    for (int a = 0; a < static_cast<int>(s0.size()); ++a) {
      if (a == axis) continue;
      if (si[a] != s0[a])
        fail(ErrorKind::kShapeMismatch, "concat: input " + std::to_string(i) +
                                            " extent mismatch on axis " + std::to_string(a) +
                                            " (" + std::to_string(si[a]) + " vs " + std::to_string(s0[a]) + ")");
    }
    total += si[axis];
  }
  out_shape[axis] = total;

  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s0[a];
  for (int a = axis + 1; a < static_cast<int>(s0.size()); ++a) inner *= s0[a];

  std::vector<double> out(shape_numel(out_shape));
  std::vector<int> extents;
  for (const auto& t : inputs) extents.push_back(t.shape()[axis]);
  int64_t offset = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto& v = inputs[i].values();
    const int64_t block = extents[i] * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy(v.begin() + o * block, v.begin() + (o + 1) * block,
                out.begin() + o * total * inner + offset);
    offset += block;
  }

  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& t : inputs) nodes.push_back(t.node());
  auto bw = [nodes, extents, outer, inner, total](Node& self) {
    int64_t offset = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
      const int64_t block = extents[i] * inner;
      if (nodes[i]->requires_grad) {
        std::vector<double> gi(static_cast<size_t>(outer) * block);
        for (int64_t o = 0; o < outer; ++o)
          std::copy(self.grad.begin() + o * total * inner + offset,
                    self.grad.begin() + o * total * inner + offset + block, gi.begin() + o * block);
        nodes[i]->accumulate(gi);
      }
      offset += block;
    }
  };
  return make_op_result(out_shape, std::move(out), inputs, std::move(bw));
}

Tensor slice(const Tensor& input, int axis, int start, int extent) {
  const Shape& s = input.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    fail(ErrorKind::kInvalidArgument, "slice: axis out of range");
  if (start < 0 || extent <= 0 || start + extent > s[axis])
    fail(ErrorKind::kInvalidArgument, "slice: window [" + std::to_string(start) + "," +
                                          std::to_string(start + extent) + ") outside extent " +
                                          std::to_string(s[axis]));
  Shape out_shape = s;
  out_shape[axis] = extent;
  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[a];
  for (int a = axis + 1; a < static_cast<int>(s.size()); ++a) inner *= s[a];
  const int64_t n = s[axis];

  const auto& v = input.values();
  std::vector<double> out(shape_numel(out_shape));
  for (int64_t o = 0; o < outer; ++o)
    std::copy(v.begin() + (o * n + start) * inner, v.begin() + (o * n + start + extent) * inner,
              out.begin() + o * extent * inner);

  auto in_node = input.node();
  auto bw = [in_node, outer, inner, n, start, extent](Node& self) {
    if (!in_node->requires_grad) return;
    std::vector<double> gi(in_node->values.size(), 0.0);
    for (int64_t o = 0; o < outer; ++o)
      std::copy(self.grad.begin() + o * extent * inner, self.grad.begin() + (o + 1) * extent * inner,
                gi.begin() + (o * n + start) * inner);
    in_node->accumulate(gi);
  };
  return make_op_result(out_shape, std::move(out), {input}, std::move(bw));
}

std::vector<Tensor> split(const Tensor& input, int axis, int parts) {
  const Shape& s = input.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    fail(ErrorKind::kInvalidArgument, "split: axis out of range");
  if (parts <= 0 || s[axis] % parts != 0)
    fail(ErrorKind::kShapeMismatch, "split: extent " + std::to_string(s[axis]) +
                                        " not divisible into " + std::to_string(parts) + " parts");
  const int step = s[axis] / parts;
  std::vector<Tensor> out;
  for (int i = 0; i < parts; ++i) out.push_back(slice(input, axis, i * step, step));
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

enum class Broadcast { kNone, kChannel, kSpatial, kScalar };

Broadcast detect_broadcast(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kNone;
  if (b.size() == 1 && b[0] == 1) return Broadcast::kScalar;
  if (a.size() == 4 && b.size() == 1 && b[0] == a[0]) return Broadcast::kChannel;
  if (a.size() == 4 && b.size() == 4 && b[0] == 1 && b[1] == a[1] && b[2] == a[2] && b[3] == a[3])
    return Broadcast::kSpatial;
  fail(ErrorKind::kShapeMismatch,
       "elementwise: shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
}

inline double ew_apply(EwKind k, double x, double y) {
  switch (k) {
    case EwKind::kAdd: return x + y;
    case EwKind::kSub: return x - y;
    case EwKind::kMul: return x * y;
    case EwKind::kDiv: return x / y;
  }
  return 0.0;
}

}  // namespace

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  Broadcast bc = detect_broadcast(as, bs);
  const auto& av = a.values();
  const auto& bv = b.values();
  const int64_t n = a.size();
  int64_t spatial = 1;
  if (bc == Broadcast::kChannel) spatial = n / as[0];
  std::vector<double> out(n);

  auto b_index = [&](int64_t i) -> int64_t {
    switch (bc) {
      case Broadcast::kNone: return i;
      case Broadcast::kScalar: return 0;
      case Broadcast::kChannel: return i / spatial;
      case Broadcast::kSpatial: return i % (n / as[0]);
    }
    return 0;
  };

  for (int64_t i = 0; i < n; ++i) out[i] = ew_apply(kind, av[i], bv[b_index(i)]);

  auto a_node = a.node();
  auto b_node = b.node();
  auto bw = [a_node, b_node, kind, bc, n, spatial, as](Node& self) {
    const auto& g = self.grad;
    const auto& av = a_node->values;
    const auto& bv = b_node->values;
    const int64_t sp_block = as.size() == 4 ? n / as[0] : n;
    auto b_index = [&](int64_t i) -> int64_t {
      switch (bc) {
        case Broadcast::kNone: return i;
        case Broadcast::kScalar: return 0;
        case Broadcast::kChannel: return i / spatial;
        case Broadcast::kSpatial: return i % sp_block;
      }
      return 0;
    };
    if (a_node->requires_grad) {
      std::vector<double> ga(n);
      for (int64_t i = 0; i < n; ++i) {
        double bvv = bv[b_index(i)];
        switch (kind) {
          case EwKind::kAdd: ga[i] = g[i]; break;
          case EwKind::kSub: ga[i] = g[i]; break;
          case EwKind::kMul: ga[i] = g[i] * bvv; break;
          case EwKind::kDiv: ga[i] = g[i] / bvv; break;
        }
      }
      a_node->accumulate(ga);
    }
    if (b_node->requires_grad) {
      std::vector<double> gb(b_node->values.size(), 0.0);
      for (int64_t i = 0; i < n; ++i) {
        int64_t bi = b_index(i);
        double bvv = bv[bi];
        double contrib = 0.0;
        switch (kind) {
          case EwKind::kAdd: contrib = g[i]; break;
          case EwKind::kSub: contrib = -g[i]; break;
          case EwKind::kMul: contrib = g[i] * av[i]; break;
          case EwKind::kDiv: contrib = -g[i] * av[i] / (bvv * bvv); break;
        }
        gb[bi] += contrib;
      }
      b_node->accumulate(gb);
    }
  };
  return make_op_result(as, std::move(out), {a, b}, std::move(bw));
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::kMul); }
Tensor divide(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::kDiv); }

Tensor add_scalar(const Tensor& a, double s) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
  auto a_node = a.node();
  auto bw = [a_node](Node& self) {
    if (a_node->requires_grad) a_node->accumulate(self.grad);
  };
  return make_op_result(a.shape(), std::move(out), {a}, std::move(bw));
}

Tensor mul_scalar(const Tensor& a, double s) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  auto a_node = a.node();
  auto bw = [a_node, s](Node& self) {
    if (!a_node->requires_grad) return;
    std::vector<double> ga(self.grad.size());
    for (size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * s;
    a_node->accumulate(ga);
  };
  return make_op_result(a.shape(), std::move(out), {a}, std::move(bw));
}

Tensor sum(const Tensor& input) {
  const auto& v = input.values();
  double acc = 0.0;
  for (double x : v) acc += x;
  auto in_node = input.node();
  auto bw = [in_node](Node& self) {
    if (!in_node->requires_grad) return;
    std::vector<double> gi(in_node->values.size(), self.grad[0]);
    in_node->accumulate(gi);
  };
  return make_op_result({1}, {acc}, {input}, std::move(bw));
}

Tensor log(const Tensor& input) {
  const auto& v = input.values();
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = std::log(v[i]);
  auto in_node = input.node();
  auto bw = [in_node](Node& self) {
    if (!in_node->requires_grad) return;
    const auto& x = in_node->values;
    std::vector<double> gi(x.size());
    for (size_t i = 0; i < x.size(); ++i) gi[i] = self.grad[i] / x[i];
    in_node->accumulate(gi);
  };
  return make_op_result(input.shape(), std::move(out), {input}, std::move(bw));
}

Tensor clamp(const Tensor& input, double lo, double hi) {
  if (lo > hi) fail(ErrorKind::kInvalidArgument, "clamp: lo > hi");
  const auto& v = input.values();
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = std::min(std::max(v[i], lo), hi);
  auto in_node = input.node();
  auto bw = [in_node, lo, hi](Node& self) {
    if (!in_node->requires_grad) return;
    const auto& x = in_node->values;
    std::vector<double> gi(x.size());
    for (size_t i = 0; i < x.size(); ++i) gi[i] = (x[i] >= lo && x[i] <= hi) ? self.grad[i] : 0.0;
    in_node->accumulate(gi);
  };
  return make_op_result(input.shape(), std::move(out), {input}, std::move(bw));
}

}  // namespace agfa
