#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace agfa {

// Dense N-d tensor of 64-bit reals with reverse-mode automatic
// differentiation.
//
// Conventions, fixed across the project:
//   * layout is row-major, channels-first; feature maps are [C,D,H,W]
//     (an optional leading batch axis is expressed by the caller as
//     independent per-sample tensors)
//   * convolution is cross-correlation (no kernel flip)
//   * "same" padding for an odd kernel of extent k and dilation d is
//     pad = d*(k-1)/2 per axis
//   * everything is double precision; desk-scale sizes make precision
//     cheaper than speed and the finite-difference checks require it
//
// A Tensor is a shared handle to a graph node. Operations record enough
// context to run one backward traversal; backward(loss) propagates
// gradients to every requires_grad tensor reachable from the loss.
//
// A tensor and its graph belong to one execution context during
// forward/backward; there is no internal locking. Independent replicas or
// pipeline workers run in their own contexts with no shared mutable state.
// The OpenMP loops inside the heavy kernels assign each output element to
// exactly one thread, so numeric results do not depend on the thread count.

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class PoolKind { kMax, kAvg };
enum class ActKind { kSigmoid, kRelu };
enum class EwKind { kAdd, kSub, kMul, kDiv };
enum class BnMode { kTrain, kEval };

// Convolution geometry. kernel extents must be odd and positive.
struct ConvParams {
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> dilation{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};
  std::array<int, 3> stride{1, 1, 1};
  int in_channels = 0;
  int out_channels = 0;

  // Shape-preserving configuration at stride 1: pad = dilation*(k-1)/2.
  static ConvParams same(int in_channels, int out_channels, std::array<int, 3> kernel,
                         std::array<int, 3> dilation = {1, 1, 1});
};

// Per-channel running statistics owned by a batch-norm layer. Variance is
// stored biased, matching the statistic used for normalization.
struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool initialized = false;
  double momentum = 0.1;
  double eps = 1e-5;

  static RunningStats identity(int channels);  // mean 0, var 1, initialized
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int64_t size() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  double value() const;  // scalar tensors only
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool requires_grad);  // leaf tensors only
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Value copy detached from any graph.
  Tensor detached() const;

  bool is_leaf() const;
  // Number of times this node's backward rule has run (test instrumentation).
  int backward_runs() const;

  struct Node;
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_op_result(const Shape&, std::vector<double>, std::vector<Tensor>,
                               std::function<void(Node&)>);
};

// ---------------------------------------------------------------------------
// Primitives. All differentiable unless noted.

// Cross-correlation of input [C_in,D,H,W] with weights
// [C_out,C_in,kd,kh,kw] and bias [C_out]. Output extent per axis is
// floor((in + 2*pad - dilation*(k-1) - 1)/stride) + 1.
Tensor conv3d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvParams& params);

// Windowed max/avg pooling over the spatial axes of [C,D,H,W]. Max-pool
// backward routes the gradient to the first maximal element in scan order.
Tensor pool3d(const Tensor& input, PoolKind kind, std::array<int, 3> window,
              std::array<int, 3> stride);

// One scalar per channel: reduction over all D*H*W positions.
Tensor global_pool_channelwise(const Tensor& input, PoolKind kind);

// Per-voxel reduction across the channel axis: [C,D,H,W] -> [1,D,H,W].
Tensor spatial_pool_across_channels(const Tensor& input, PoolKind kind);

// Elementwise sigmoid / relu. Sigmoid output is clamped to the open
// interval (0,1) at the representable boundary, so gates are strictly
// inside (0,1) for every finite input.
Tensor activation(const Tensor& input, ActKind kind);
Tensor sigmoid(const Tensor& input);
Tensor relu(const Tensor& input);

// Exp-normalization along `axis` with max subtraction for stability.
Tensor softmax(const Tensor& input, int axis);

// 2-d matrix product [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// Batch normalization over all non-channel axes of a channels-first
// tensor. Train mode normalizes by the input's own statistics and updates
// `stats`; eval mode uses `stats` and requires them to be initialized.
Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                  RunningStats& stats, BnMode mode);

// Trilinear upsampling by a fixed factor of 2, align-corners-false
// (sample centers sit at cell midpoints; borders clamp).
Tensor upsample_trilinear2x(const Tensor& input);

Tensor concat(const std::vector<Tensor>& inputs, int axis);
Tensor slice(const Tensor& input, int axis, int start, int extent);
std::vector<Tensor> split(const Tensor& input, int axis, int parts);
Tensor reshape(const Tensor& input, const Shape& shape);

// Elementwise arithmetic. `b` may broadcast over `a` in exactly three
// documented forms: a size-C vector over [C,D,H,W] (channel broadcast), a
// [1,D,H,W] map over channels (spatial broadcast), or a scalar. Backward
// sums the gradient over broadcast axes.
Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor sum(const Tensor& input);  // -> scalar
Tensor log(const Tensor& input);
Tensor clamp(const Tensor& input, double lo, double hi);  // gradient 0 outside [lo,hi]

// Runs one reverse traversal from a scalar loss, accumulating gradients
// into every reachable requires_grad tensor. Each op node runs exactly
// once; a second backward through the same graph is an error unless
// retain_graph was set on the first call. Gradients accumulate across
// calls until zero_grad().
void backward(const Tensor& loss, bool retain_graph = false);

}  // namespace agfa
