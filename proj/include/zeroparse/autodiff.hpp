#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "zeroparse/rng.hpp"

namespace zeroparse::ad {

// Row-major so flattened views match the on-disk layout used by checkpoints.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

// A value plus optional tape bookkeeping. Tensors produced while a tape is
// recording carry (tape, node); their matrix lives inside the tape, so
// copying the tensor is cheap. Tensors made with constant() own their value
// and never track gradients.
struct Tensor {
  Tape* tape = nullptr;
  int node = -1;
  Matrix owned;  // only used when tape == nullptr

  const Matrix& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  bool recorded() const { return tape != nullptr; }
  // Scalar convenience accessor; requires a 1x1 tensor.
  double item() const;
};

Tensor constant(Matrix m);

enum class Op {
  kLeaf,
  kMatmul,
  kTranspose,
  kAdd,
  kMul,
  kScale,
  kConcat,
  kSlice,
  kEmbeddingGather,
  kSoftmaxRows,
  kLogSoftmaxRows,
  kLayerNorm,
  kGelu,
  kMeanAxis,
  kDropout,
  kMaskedCrossEntropy,
  kGradReverse,
};

const char* op_name(Op op);

// Attribute bag for forward_op. Each op reads only the fields it needs.
struct OpAttrs {
  int axis = 0;                 // concat, slice, mean_axis
  Eigen::Index start = 0;       // slice
  Eigen::Index len = 0;         // slice
  double value = 0.0;           // scale factor / grad_reverse lambda / dropout rate
  bool train = false;           // dropout
  bool mean_reduce = true;      // masked_cross_entropy
  std::vector<int> ids;         // embedding_gather rows / cross-entropy targets
  std::vector<double> mask;     // cross-entropy per-row weights
  Rng* rng = nullptr;           // dropout
};

class Gradients;

// Reverse-mode tape. Record ops by calling the free functions below with at
// least one tensor obtained from leaf(); call backward() on a scalar result.
// Tapes are single-use: re-record per training step, backward once.
class Tape {
 public:
  Tensor leaf(Matrix m);

  const Matrix& value(int node) const { return nodes_[static_cast<std::size_t>(node)].value; }
  Op op(int node) const { return nodes_[static_cast<std::size_t>(node)].op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  // Accumulates this node's contribution to its inputs' gradients.
  // grad(i) fetches (allocating on first use) the buffer for node i.
  using PullFn = std::function<void(const Matrix& gout, Gradients& grads)>;

  struct Node {
    Op op;
    std::vector<int> inputs;
    Matrix value;
    PullFn pull;
  };

  int push(Op op, std::vector<int> inputs, Matrix value, PullFn pull);

  std::deque<Node> nodes_;  // deque: value references stay valid as it grows
  bool consumed_ = false;

  friend Gradients backward(const Tensor& loss);
  friend Tensor forward_op(Op op, const std::vector<Tensor>& inputs, const OpAttrs& attrs);
};

// Gradient buffers keyed by node id. After backward() only leaf gradients
// are retained; intermediate buffers are released as soon as they have been
// propagated.
class Gradients {
 public:
  // Gradient of the loss w.r.t. the given tensor. Zero matrix if the tensor
  // does not influence the loss.
  Matrix at(const Tensor& t) const;
  bool nonzero(const Tensor& t) const;

  Matrix& buffer(int node, Eigen::Index rows, Eigen::Index cols);

 private:
  explicit Gradients(std::size_t n) : store_(n) {}
  std::vector<Matrix> store_;  // empty matrix == not yet touched

  friend Gradients backward(const Tensor& loss);
};

// Runs reverse accumulation from a 1x1 loss tensor. Each tape supports one
// backward pass; a second call throws.
Gradients backward(const Tensor& loss);

// ---- ops --------------------------------------------------------------
// All ops accept any mix of recorded and constant tensors; constants are
// interned as leaves when the result must be recorded. Every op validates
// shapes and checks the result for NaN/Inf, throwing std::runtime_error on
// non-finite output.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Elementwise; also accepts a 1xC right operand as a row-broadcast bias.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len);
// Rows of `table` selected by id; repeated ids accumulate gradient.
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
inline constexpr double kLayerNormEps = 1e-5;
// Per-row normalization; gain and bias are 1xC.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// Exact erf-based GELU.
Tensor gelu(const Tensor& a);
Tensor mean_axis(const Tensor& a, int axis);
// Inverted dropout: kept entries are scaled by 1/(1-rate). Identity when
// train is false or rate is zero. The mask is drawn from `rng`.
Tensor dropout(const Tensor& a, double rate, bool train, Rng& rng);
// Mean (or sum) of -log softmax(logits)[row, target[row]] over rows with
// mask weight > 0. Rows with mask 0 contribute nothing, including to the
// mean denominator. Returns 1x1.
Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<double>& mask, bool mean_reduce = true);
// Identity forward; backward multiplies the upstream gradient by -lambda.
Tensor grad_reverse(const Tensor& a, double lambda);

// Uniform entry point driving the same code paths as the named functions.
// Lets tests enumerate ops generically.
Tensor forward_op(Op op, const std::vector<Tensor>& inputs, const OpAttrs& attrs);

// ---- finite-difference checking ----------------------------------------

struct GradCheckReport {
  bool ok = false;
  double max_rel_err = 0.0;
  std::string worst;  // "input 2, element (3,1)" for the worst mismatch
  long n_checked = 0;
};

// Builds the loss twice per perturbed element (central differences) and
// compares with one analytic backward pass. `build` must be deterministic:
// same inputs, same scalar out. Relative error uses a small denominator
// floor so finite-difference noise on near-zero gradients does not register
// as failure while real mismatches on small gradients still do.
using LossBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
GradCheckReport check_gradients(const LossBuilder& build, const std::vector<Matrix>& inputs,
                                double step = 1e-5, double tol = 1e-4);

}  // namespace zeroparse::ad
