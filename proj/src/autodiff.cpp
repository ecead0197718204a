#include "zeroparse/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace zeroparse::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void bad_shapes(const char* op, const std::vector<Tensor>& inputs,
                             const char* detail) {
  std::ostringstream os;
  os << op << ": " << detail << " (got";
  for (const auto& t : inputs) os << " " << shape_str(t.val());
  os << ")";
  throw std::invalid_argument(os.str());
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
}

double gelu_grad_scalar(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * 0.7071067811865476)) +
         x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - mx).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kEmbeddingGather: return "embedding_gather";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLogSoftmaxRows: return "log_softmax_rows";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kGelu: return "gelu";
    case Op::kMeanAxis: return "mean_axis";
    case Op::kDropout: return "dropout";
    case Op::kMaskedCrossEntropy: return "masked_cross_entropy";
    case Op::kGradReverse: return "grad_reverse";
  }
  return "?";
}

const Matrix& Tensor::val() const {
  if (tape != nullptr) return tape->value(node);
  return owned;
}

double Tensor::item() const {
  const Matrix& m = val();
  if (m.rows() != 1 || m.cols() != 1)
    throw std::invalid_argument("Tensor::item: tensor is " + shape_str(m) + ", not 1x1");
  return m(0, 0);
}

Tensor constant(Matrix m) {
  Tensor t;
  t.owned = std::move(m);
  return t;
}

Tensor Tape::leaf(Matrix m) {
  const int id = push(Op::kLeaf, {}, std::move(m), nullptr);
  return Tensor{this, id, {}};
}

int Tape::push(Op op, std::vector<int> inputs, Matrix value, PullFn pull) {
  if (consumed_)
    throw std::runtime_error("Tape: recording after backward; tapes are single-use");
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), std::move(pull)});
  return static_cast<int>(nodes_.size()) - 1;
}

Matrix Gradients::at(const Tensor& t) const {
  if (!t.recorded())
    throw std::invalid_argument("Gradients::at: tensor was not recorded on a tape");
  const Matrix& g = store_[static_cast<std::size_t>(t.node)];
  if (g.size() == 0) return Matrix::Zero(t.rows(), t.cols());
  return g;
}

bool Gradients::nonzero(const Tensor& t) const {
  return t.recorded() && store_[static_cast<std::size_t>(t.node)].size() != 0;
}

Matrix& Gradients::buffer(int node, Eigen::Index rows, Eigen::Index cols) {
  Matrix& g = store_[static_cast<std::size_t>(node)];
  if (g.size() == 0) g = Matrix::Zero(rows, cols);
  return g;
}

Gradients backward(const Tensor& loss) {
  if (!loss.recorded())
    throw std::invalid_argument("backward: loss tensor is not on a tape");
  Tape& tape = *loss.tape;
  if (tape.consumed_)
    throw std::runtime_error("backward: tape already consumed; re-record the graph");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1, is " + shape_str(loss.val()));
  tape.consumed_ = true;

  Gradients grads(tape.size());
  grads.buffer(loss.node, 1, 1)(0, 0) = 1.0;
  for (int i = loss.node; i >= 0; --i) {
    auto& node = tape.nodes_[static_cast<std::size_t>(i)];
    Matrix& gi = grads.store_[static_cast<std::size_t>(i)];
    if (gi.size() == 0) continue;  // node does not influence the loss
    if (node.pull) node.pull(gi, grads);
    // Leaf gradients are the result; everything else can go immediately.
    if (node.op != Op::kLeaf) gi.resize(0, 0);
  }
  return grads;
}

namespace {

// Resolves the tape shared by the recorded inputs (null if all constants)
// and interns constants as leaves so pull closures can address every input
// by node id.
Tape* unify_tape(const char* op, std::vector<Tensor>& inputs) {
  Tape* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.recorded()) continue;
    if (tape != nullptr && tape != t.tape)
      throw std::invalid_argument(std::string(op) + ": inputs recorded on different tapes");
    tape = t.tape;
  }
  if (tape != nullptr) {
    for (auto& t : inputs) {
      if (!t.recorded()) t = tape->leaf(std::move(t.owned));
    }
  }
  return tape;
}

void check_finite(const char* op, const Matrix& out) {
  if (!out.allFinite())
    throw std::runtime_error(std::string(op) + ": produced non-finite values");
}

std::vector<int> node_ids(const std::vector<Tensor>& inputs) {
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(t.node);
  return ids;
}

}  // namespace

Tensor forward_op(Op op, const std::vector<Tensor>& in, const OpAttrs& attrs) {
  const char* name = op_name(op);
  std::vector<Tensor> inputs = in;

  // dropout in eval mode is a pass-through and records nothing.
  if (op == Op::kDropout && (!attrs.train || attrs.value <= 0.0)) {
    if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
    if (attrs.value < 0.0 || attrs.value >= 1.0)
      throw std::invalid_argument("dropout: rate must be in [0, 1)");
    return inputs[0];
  }

  Tape* tape = unify_tape(name, inputs);
  Matrix out;
  Tape::PullFn pull;

  switch (op) {
    case Op::kLeaf:
      throw std::invalid_argument("forward_op: leaf is not an op; use Tape::leaf");

    case Op::kMatmul: {
      if (inputs.size() != 2) bad_shapes(name, inputs, "expects two inputs");
      const Matrix& a = inputs[0].val();
      const Matrix& b = inputs[1].val();
      if (a.cols() != b.rows()) bad_shapes(name, inputs, "inner dimensions differ");
      out = a * b;
      if (tape) {
        const int ia = inputs[0].node, ib = inputs[1].node;
        pull = [tape, ia, ib](const Matrix& g, Gradients& grads) {
          const Matrix& a = tape->value(ia);
          const Matrix& b = tape->value(ib);
          grads.buffer(ia, a.rows(), a.cols()).noalias() += g * b.transpose();
          grads.buffer(ib, b.rows(), b.cols()).noalias() += a.transpose() * g;
        };
      }
      break;
    }

    case Op::kTranspose: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const Matrix& a = inputs[0].val();
      out = a.transpose();
      if (tape) {
        const int ia = inputs[0].node;
        const Eigen::Index r = a.rows(), c = a.cols();
        pull = [ia, r, c](const Matrix& g, Gradients& grads) {
          grads.buffer(ia, r, c) += g.transpose();
        };
      }
      break;
    }

    case Op::kAdd: {
      if (inputs.size() != 2) bad_shapes(name, inputs, "expects two inputs");
      const Matrix& a = inputs[0].val();
      const Matrix& b = inputs[1].val();
      const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
      if (!broadcast && (a.rows() != b.rows() || a.cols() != b.cols()))
        bad_shapes(name, inputs, "shapes must match (or rhs 1xC row bias)");
      if (broadcast) {
        out = a;
        out.rowwise() += b.row(0);
      } else {
        out = a + b;
      }
      if (tape) {
        const int ia = inputs[0].node, ib = inputs[1].node;
        const Eigen::Index ar = a.rows(), ac = a.cols();
        const Eigen::Index br = b.rows(), bc = b.cols();
        pull = [ia, ib, ar, ac, br, bc, broadcast](const Matrix& g, Gradients& grads) {
          grads.buffer(ia, ar, ac) += g;
          if (broadcast)
            grads.buffer(ib, br, bc) += g.colwise().sum();
          else
            grads.buffer(ib, br, bc) += g;
        };
      }
      break;
    }

    case Op::kMul: {
      if (inputs.size() != 2) bad_shapes(name, inputs, "expects two inputs");
      const Matrix& a = inputs[0].val();
      const Matrix& b = inputs[1].val();
      if (a.rows() != b.rows() || a.cols() != b.cols())
        bad_shapes(name, inputs, "shapes must match");
      out = a.cwiseProduct(b);
      if (tape) {
        const int ia = inputs[0].node, ib = inputs[1].node;
        pull = [tape, ia, ib](const Matrix& g, Gradients& grads) {
          const Matrix& a = tape->value(ia);
          const Matrix& b = tape->value(ib);
          grads.buffer(ia, a.rows(), a.cols()) += g.cwiseProduct(b);
          grads.buffer(ib, b.rows(), b.cols()) += g.cwiseProduct(a);
        };
      }
      break;
    }

    case Op::kScale: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const double s = attrs.value;
      out = s * inputs[0].val();
      if (tape) {
        const int ia = inputs[0].node;
        const Eigen::Index r = out.rows(), c = out.cols();
        pull = [ia, s, r, c](const Matrix& g, Gradients& grads) {
          grads.buffer(ia, r, c) += s * g;
        };
      }
      break;
    }

    case Op::kConcat: {
      if (inputs.empty()) bad_shapes(name, inputs, "expects at least one input");
      const int axis = attrs.axis;
      if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
      Eigen::Index total = 0;
      const Matrix& first = inputs[0].val();
      for (const auto& t : inputs) {
        const Matrix& m = t.val();
        if (axis == 0 && m.cols() != first.cols())
          bad_shapes(name, inputs, "column counts differ for axis-0 concat");
        if (axis == 1 && m.rows() != first.rows())
          bad_shapes(name, inputs, "row counts differ for axis-1 concat");
        total += (axis == 0) ? m.rows() : m.cols();
      }
      if (axis == 0) {
        out.resize(total, first.cols());
        Eigen::Index at = 0;
        for (const auto& t : inputs) {
          out.middleRows(at, t.rows()) = t.val();
          at += t.rows();
        }
      } else {
        out.resize(first.rows(), total);
        Eigen::Index at = 0;
        for (const auto& t : inputs) {
          out.middleCols(at, t.cols()) = t.val();
          at += t.cols();
        }
      }
      if (tape) {
        struct Piece { int id; Eigen::Index offset, rows, cols; };
        std::vector<Piece> pieces;
        Eigen::Index at = 0;
        for (const auto& t : inputs) {
          pieces.push_back({t.node, at, t.rows(), t.cols()});
          at += (axis == 0) ? t.rows() : t.cols();
        }
        pull = [pieces, axis](const Matrix& g, Gradients& grads) {
          for (const auto& p : pieces) {
            Matrix& gb = grads.buffer(p.id, p.rows, p.cols);
            if (axis == 0)
              gb += g.middleRows(p.offset, p.rows);
            else
              gb += g.middleCols(p.offset, p.cols);
          }
        };
      }
      break;
    }

    case Op::kSlice: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const Matrix& a = inputs[0].val();
      const int axis = attrs.axis;
      const Eigen::Index start = attrs.start, len = attrs.len;
      if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
      const Eigen::Index extent = (axis == 0) ? a.rows() : a.cols();
      if (start < 0 || len <= 0 || start + len > extent)
        throw std::invalid_argument("slice: range out of bounds");
      out = (axis == 0) ? Matrix(a.middleRows(start, len)) : Matrix(a.middleCols(start, len));
      if (tape) {
        const int ia = inputs[0].node;
        const Eigen::Index r = a.rows(), c = a.cols();
        pull = [ia, axis, start, len, r, c](const Matrix& g, Gradients& grads) {
          Matrix& gb = grads.buffer(ia, r, c);
          if (axis == 0)
            gb.middleRows(start, len) += g;
          else
            gb.middleCols(start, len) += g;
        };
      }
      break;
    }

    case Op::kEmbeddingGather: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input (the table)");
      const Matrix& table = inputs[0].val();
      const std::vector<int>& ids = attrs.ids;
      if (ids.empty()) throw std::invalid_argument("embedding_gather: empty id list");
      out.resize(static_cast<Eigen::Index>(ids.size()), table.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
          throw std::invalid_argument("embedding_gather: id out of range");
        out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
      }
      if (tape) {
        const int it = inputs[0].node;
        const Eigen::Index r = table.rows(), c = table.cols();
        pull = [it, ids, r, c](const Matrix& g, Gradients& grads) {
          Matrix& gb = grads.buffer(it, r, c);
          for (std::size_t i = 0; i < ids.size(); ++i)
            gb.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
        };
      }
      break;
    }

    case Op::kSoftmaxRows: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      out = softmax_rows_value(inputs[0].val());
      if (tape) {
        const int ia = inputs[0].node;
        const int self = static_cast<int>(tape->size());  // id this node will get
        pull = [tape, ia, self](const Matrix& g, Gradients& grads) {
          const Matrix& y = tape->value(self);
          Matrix& gb = grads.buffer(ia, y.rows(), y.cols());
          for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const double dot = g.row(i).dot(y.row(i));
            gb.row(i) += (y.row(i).array() * (g.row(i).array() - dot)).matrix();
          }
        };
      }
      break;
    }

    case Op::kLogSoftmaxRows: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const Matrix& a = inputs[0].val();
      out.resize(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double mx = a.row(i).maxCoeff();
        const double lse = mx + std::log((a.row(i).array() - mx).exp().sum());
        out.row(i) = a.row(i).array() - lse;
      }
      if (tape) {
        const int ia = inputs[0].node;
        const int self = static_cast<int>(tape->size());
        pull = [tape, ia, self](const Matrix& g, Gradients& grads) {
          const Matrix& y = tape->value(self);
          Matrix& gb = grads.buffer(ia, y.rows(), y.cols());
          for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const double gsum = g.row(i).sum();
            gb.row(i) += g.row(i) - gsum * y.row(i).array().exp().matrix();
          }
        };
      }
      break;
    }

    case Op::kLayerNorm: {
      if (inputs.size() != 3) bad_shapes(name, inputs, "expects (x, gain, bias)");
      const Matrix& x = inputs[0].val();
      const Matrix& gain = inputs[1].val();
      const Matrix& bias = inputs[2].val();
      if (gain.rows() != 1 || bias.rows() != 1 || gain.cols() != x.cols() ||
          bias.cols() != x.cols())
        bad_shapes(name, inputs, "gain and bias must be 1 x cols(x)");
      Matrix xhat(x.rows(), x.cols());
      Eigen::VectorXd inv_std(x.rows());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std(i) = inv;
        xhat.row(i) = (x.row(i).array() - mu) * inv;
      }
      out = xhat.array().rowwise() * gain.row(0).array();
      out.rowwise() += bias.row(0);
      if (tape) {
        const int ix = inputs[0].node, ig = inputs[1].node, ib = inputs[2].node;
        const Eigen::Index r = x.rows(), c = x.cols();
        pull = [tape, ix, ig, ib, r, c, xhat = std::move(xhat),
                inv_std = std::move(inv_std)](const Matrix& g, Gradients& grads) {
          const Matrix& gain = tape->value(ig);
          grads.buffer(ib, 1, c) += g.colwise().sum();
          grads.buffer(ig, 1, c) += g.cwiseProduct(xhat).colwise().sum();
          Matrix& gx = grads.buffer(ix, r, c);
          for (Eigen::Index i = 0; i < r; ++i) {
            const auto ghat = g.row(i).cwiseProduct(gain.row(0));
            const double m1 = ghat.mean();
            const double m2 = ghat.cwiseProduct(xhat.row(i)).mean();
            gx.row(i) +=
                inv_std(i) * (ghat.array() - m1 - xhat.row(i).array() * m2).matrix();
          }
        };
      }
      break;
    }

    case Op::kGelu: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const Matrix& a = inputs[0].val();
      out = a.unaryExpr([](double v) { return gelu_scalar(v); });
      if (tape) {
        const int ia = inputs[0].node;
        pull = [tape, ia](const Matrix& g, Gradients& grads) {
          const Matrix& a = tape->value(ia);
          grads.buffer(ia, a.rows(), a.cols()) +=
              g.cwiseProduct(a.unaryExpr([](double v) { return gelu_grad_scalar(v); }));
        };
      }
      break;
    }

    case Op::kMeanAxis: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const Matrix& a = inputs[0].val();
      const int axis = attrs.axis;
      if (axis != 0 && axis != 1)
        throw std::invalid_argument("mean_axis: axis must be 0 or 1");
      if (axis == 0)
        out = a.colwise().mean();
      else
        out = a.rowwise().mean();
      if (tape) {
        const int ia = inputs[0].node;
        const Eigen::Index r = a.rows(), c = a.cols();
        pull = [ia, axis, r, c](const Matrix& g, Gradients& grads) {
          Matrix& gb = grads.buffer(ia, r, c);
          if (axis == 0)
            gb += g.replicate(r, 1) / static_cast<double>(r);
          else
            gb += g.replicate(1, c) / static_cast<double>(c);
        };
      }
      break;
    }

    case Op::kDropout: {
      // eval mode handled above; here train == true and rate > 0
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const double rate = attrs.value;
      if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
      if (attrs.rng == nullptr) throw std::invalid_argument("dropout: rng required in train mode");
      const Matrix& a = inputs[0].val();
      Matrix keep(a.rows(), a.cols());
      const double inv_keep = 1.0 / (1.0 - rate);
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
          keep(i, j) = attrs.rng->bernoulli(rate) ? 0.0 : inv_keep;
      out = a.cwiseProduct(keep);
      if (tape) {
        const int ia = inputs[0].node;
        pull = [ia, keep = std::move(keep)](const Matrix& g, Gradients& grads) {
          grads.buffer(ia, keep.rows(), keep.cols()) += g.cwiseProduct(keep);
        };
      }
      break;
    }

    case Op::kMaskedCrossEntropy: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input (logits)");
      const Matrix& logits = inputs[0].val();
      const std::vector<int>& targets = attrs.ids;
      const std::vector<double>& mask = attrs.mask;
      const auto n = static_cast<std::size_t>(logits.rows());
      if (targets.size() != n || mask.size() != n)
        throw std::invalid_argument(
            "masked_cross_entropy: targets and mask must have one entry per logits row");
      double weight_sum = 0.0;
      for (double w : mask) {
        if (w < 0.0) throw std::invalid_argument("masked_cross_entropy: negative mask weight");
        weight_sum += w;
      }
      Matrix probs = softmax_rows_value(logits);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] == 0.0) continue;
        const auto r = static_cast<Eigen::Index>(i);
        if (targets[i] < 0 || targets[i] >= logits.cols())
          throw std::invalid_argument("masked_cross_entropy: target out of range");
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        total += mask[i] * (lse - logits(r, targets[i]));
      }
      const double denom = attrs.mean_reduce ? (weight_sum > 0.0 ? weight_sum : 1.0) : 1.0;
      out.resize(1, 1);
      out(0, 0) = total / denom;
      if (tape) {
        const int il = inputs[0].node;
        pull = [il, targets, mask, denom,
                probs = std::move(probs)](const Matrix& g, Gradients& grads) {
          const double gs = g(0, 0);
          Matrix& gb = grads.buffer(il, probs.rows(), probs.cols());
          for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] == 0.0) continue;
            const auto r = static_cast<Eigen::Index>(i);
            const double w = gs * mask[i] / denom;
            gb.row(r) += w * probs.row(r);
            gb(r, targets[i]) -= w;
          }
        };
      }
      break;
    }

    case Op::kGradReverse: {
      if (inputs.size() != 1) bad_shapes(name, inputs, "expects one input");
      const double lambda = attrs.value;
      out = inputs[0].val();
      if (tape) {
        const int ia = inputs[0].node;
        const Eigen::Index r = out.rows(), c = out.cols();
        pull = [ia, lambda, r, c](const Matrix& g, Gradients& grads) {
          grads.buffer(ia, r, c) += (-lambda) * g;
        };
      }
      break;
    }
  }

  check_finite(name, out);
  if (tape == nullptr) return constant(std::move(out));
  const int id = tape->push(op, node_ids(inputs), std::move(out), std::move(pull));
  return Tensor{tape, id, {}};
}

Tensor matmul(const Tensor& a, const Tensor& b) { return forward_op(Op::kMatmul, {a, b}, {}); }
Tensor transpose(const Tensor& a) { return forward_op(Op::kTranspose, {a}, {}); }
Tensor add(const Tensor& a, const Tensor& b) { return forward_op(Op::kAdd, {a, b}, {}); }
Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }
Tensor mul(const Tensor& a, const Tensor& b) { return forward_op(Op::kMul, {a, b}, {}); }

Tensor scale(const Tensor& a, double s) {
  OpAttrs attrs;
  attrs.value = s;
  return forward_op(Op::kScale, {a}, attrs);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return forward_op(Op::kConcat, parts, attrs);
}

Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.start = start;
  attrs.len = len;
  return forward_op(Op::kSlice, {a}, attrs);
}

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
  OpAttrs attrs;
  attrs.ids = ids;
  return forward_op(Op::kEmbeddingGather, {table}, attrs);
}

Tensor softmax_rows(const Tensor& a) { return forward_op(Op::kSoftmaxRows, {a}, {}); }
Tensor log_softmax_rows(const Tensor& a) { return forward_op(Op::kLogSoftmaxRows, {a}, {}); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return forward_op(Op::kLayerNorm, {x, gain, bias}, {});
}

Tensor gelu(const Tensor& a) { return forward_op(Op::kGelu, {a}, {}); }

Tensor mean_axis(const Tensor& a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return forward_op(Op::kMeanAxis, {a}, attrs);
}

Tensor dropout(const Tensor& a, double rate, bool train, Rng& rng) {
  OpAttrs attrs;
  attrs.value = rate;
  attrs.train = train;
  attrs.rng = &rng;
  return forward_op(Op::kDropout, {a}, attrs);
}

Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<double>& mask, bool mean_reduce) {
  OpAttrs attrs;
  attrs.ids = targets;
  attrs.mask = mask;
  attrs.mean_reduce = mean_reduce;
  return forward_op(Op::kMaskedCrossEntropy, {logits}, attrs);
}

Tensor grad_reverse(const Tensor& a, double lambda) {
  OpAttrs attrs;
  attrs.value = lambda;
  return forward_op(Op::kGradReverse, {a}, attrs);
}

GradCheckReport check_gradients(const LossBuilder& build, const std::vector<Matrix>& inputs,
                                double step, double tol) {
  auto eval = [&build](const std::vector<Matrix>& ms) {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(ms.size());
    for (const auto& m : ms) leaves.push_back(tape.leaf(m));
    Tensor loss = build(tape, leaves);
    return loss.item();
  };

  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  Tensor loss = build(tape, leaves);
  const double base = loss.item();
  if (eval(inputs) != base)
    throw std::runtime_error("check_gradients: loss builder is not deterministic");
  Gradients grads = backward(loss);

  GradCheckReport report;
  report.ok = true;
  std::vector<Matrix> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = grads.at(leaves[k]);
    for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
        const double saved = work[k](i, j);
        work[k](i, j) = saved + step;
        const double fp = eval(work);
        work[k](i, j) = saved - step;
        const double fm = eval(work);
        work[k](i, j) = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic(i, j);
        const double mag = std::max(std::abs(a), std::abs(numeric));
        double rel = 0.0;
        // Floor of 1e-4 on the denominator: below that the central
        // difference is dominated by cancellation noise (~1e-10 absolute),
        // which would otherwise read as a spurious relative error.
        if (mag >= 1e-8) rel = std::abs(a - numeric) / std::max(mag, 1e-4);
        ++report.n_checked;
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          std::ostringstream os;
          os << "input " << k << ", element (" << i << "," << j << "): analytic " << a
             << " vs numeric " << numeric;
          report.worst = os.str();
        }
      }
    }
  }
  report.ok = report.max_rel_err <= tol;
  return report;
}

}  // namespace zeroparse::ad
