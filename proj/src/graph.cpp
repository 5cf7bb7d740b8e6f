#include "mutatt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mutatt/error.hpp"
#include "mutatt/kernels.hpp"

namespace mutatt {

const Tensor& Var::value() const { return graph_->value(id_); }

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(const Tensor& value, Tensor* grad_sink) {
  if (grad_sink != nullptr && grad_sink->shape() != value.shape()) {
    throw ShapeError("gradient sink " + shape_string(grad_sink->shape()) +
                     " does not match parameter " + shape_string(value.shape()));
  }
  Node node;
  node.borrowed = &value;
  node.sink = grad_sink;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& node = nodes_[id];
  return node.borrowed != nullptr ? *node.borrowed : node.owned;
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs,
                  BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (backpropagated_) {
    throw GraphStateError("cannot record operations after backward");
  }
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.graph_ != this) {
      throw GraphStateError("operand belongs to a different graph");
    }
    needs = needs || nodes_[in.id_].requires_grad;
  }
  Node node;
  node.owned = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor* Graph::grad_target(Var v) {
  Node& node = nodes_[v.id_];
  return node.requires_grad ? &node.grad : nullptr;
}

void Graph::backward(Var loss) {
  if (backpropagated_) {
    throw GraphStateError("backward already ran on this graph");
  }
  if (loss.graph_ != this) {
    throw GraphStateError("loss belongs to a different graph");
  }
  if (!value(loss.id_).is_scalar()) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     shape_string(value(loss.id_).shape()));
  }
  backpropagated_ = true;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    nodes_[i].grad = Tensor(value(i).shape(), 0.0);
  }
  nodes_[loss.id_].grad[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward) continue;
    node.backward(*this, node.grad);
  }
  for (Node& node : nodes_) {
    if (node.sink == nullptr) continue;
    auto dst = node.sink->data();
    auto src = node.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

const Tensor& Graph::grad(Var v) const {
  static const Tensor kEmpty;
  const Node& node = nodes_[v.id_];
  if (!backpropagated_) {
    throw GraphStateError("gradient requested before backward");
  }
  return node.grad.numel() == value(v.id_).numel() ? node.grad : kEmpty;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a,
                                 const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

void add_into(Tensor* dst, std::span<const double> src, double factor = 1.0) {
  if (dst == nullptr) return;
  auto d = dst->data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || (av.rank() != 1 && av.rank() != 2)) {
    shape_mismatch("matmul", av, bv);
  }
  const std::size_t p = av.rank() == 2 ? av.shape()[0] : 1;
  const std::size_t q = av.rank() == 2 ? av.shape()[1] : av.shape()[0];
  const std::size_t r = bv.shape()[1];
  if (bv.shape()[0] != q) shape_mismatch("matmul", av, bv);

  Tensor out(av.rank() == 2 ? Shape{p, r} : Shape{r}, 0.0);
  kernels::gemm_nn(av.data(), bv.data(), out.data(), p, q, r);
  return a.graph().record(
      std::move(out), {a, b}, [a, b, p, q, r](Graph& g, const Tensor& go) {
        if (Tensor* ga = g.grad_target(a)) {
          kernels::gemm_nt(go.data(), b.value().data(), ga->data(), p, q, r);
        }
        if (Tensor* gb = g.grad_target(b)) {
          kernels::gemm_tn(a.value().data(), go.data(), gb->data(), p, q, r);
        }
      });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch("add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    add_into(g.grad_target(a), go.data());
    add_into(g.grad_target(b), go.data());
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch("sub", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    add_into(g.grad_target(a), go.data());
    add_into(g.grad_target(b), go.data(), -1.0);
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_target(a)) {
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * bv[i];
    }
    if (Tensor* gb = g.grad_target(b)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < go.numel(); ++i) (*gb)[i] += go[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& x : out.storage()) x *= factor;
  return a.graph().record(std::move(out), {a}, [a, factor](Graph& g, const Tensor& go) {
    add_into(g.grad_target(a), go.data(), factor);
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  for (double& x : out.storage()) x += offset;
  return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    add_into(g.grad_target(a), go.data());
  });
}

Var add_row(Var m, Var v) {
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || mv.shape()[1] != vv.shape()[0]) {
    shape_mismatch("add_row", mv, vv);
  }
  const std::size_t n = mv.shape()[0];
  const std::size_t h = mv.shape()[1];
  Tensor out = mv;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < h; ++j) out[i * h + j] += vv[j];
  }
  return m.graph().record(std::move(out), {m, v}, [m, v, n, h](Graph& g, const Tensor& go) {
    add_into(g.grad_target(m), go.data());
    if (Tensor* gv = g.grad_target(v)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < h; ++j) (*gv)[j] += go[i * h + j];
      }
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& x : out.storage()) x = std::tanh(x);
  Tensor y = out;
  return a.graph().record(std::move(out), {a}, [a, y = std::move(y)](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_target(a);
    if (ga == nullptr) return;
    for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& x : out.storage()) x = x < 0.0 ? 0.0 : x;  // NaN passes through
  return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_target(a)) {
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < go.numel(); ++i) {
        if (x[i] > 0.0) (*ga)[i] += go[i];
      }
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  return a.graph().record(Tensor::scalar(total), {a}, [a](Graph& g, const Tensor& go) {
    if (Tensor* ga = g.grad_target(a)) {
      for (double& x : ga->storage()) x += go[0];
    }
  });
}

Var dot(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch("dot", av, bv);
  double total = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) total += av[i] * bv[i];
  return a.graph().record(Tensor::scalar(total), {a, b}, [a, b](Graph& g, const Tensor& go) {
    add_into(g.grad_target(a), b.value().data(), go[0]);
    add_into(g.grad_target(b), a.value().data(), go[0]);
  });
}

Var softmax(Var x) {
  return softmax(x, Mask(x.value().numel(), 1));
}

Var softmax(Var x, const Mask& mask) {
  const Tensor& xv = x.value();
  require_rank("softmax", xv, 1);
  const std::size_t n = xv.numel();
  if (n == 0) throw ShapeError("softmax: empty input");
  if (mask.size() != n) {
    throw ShapeError("softmax: mask length " + std::to_string(mask.size()) +
                     " does not match input " + shape_string(xv.shape()));
  }
  double peak = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    any = true;
    peak = std::max(peak, xv[i]);
  }
  if (!any) throw InvalidMaskError("softmax: every position is masked");

  Tensor out(xv.shape(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    out[i] = std::exp(xv[i] - peak);
    total += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= total;

  Tensor probs = out;
  return x.graph().record(
      std::move(out), {x}, [x, probs = std::move(probs)](Graph& g, const Tensor& go) {
        Tensor* gx = g.grad_target(x);
        if (gx == nullptr) return;
        double inner = 0.0;
        for (std::size_t i = 0; i < probs.numel(); ++i) inner += probs[i] * go[i];
        for (std::size_t i = 0; i < probs.numel(); ++i) {
          (*gx)[i] += probs[i] * (go[i] - inner);
        }
      });
}

namespace {

struct CosineParts {
  double value = 0.0;
  double norm_a = 0.0;
  double norm_b = 0.0;
  bool degenerate = true;
};

CosineParts cosine_parts(const double* a, const double* b, std::size_t d) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  CosineParts parts;
  parts.norm_a = std::sqrt(aa);
  parts.norm_b = std::sqrt(bb);
  if (parts.norm_a < kCosineEpsilon || parts.norm_b < kCosineEpsilon) return parts;
  parts.degenerate = false;
  parts.value = std::clamp(ab / (parts.norm_a * parts.norm_b), -1.0, 1.0);
  return parts;
}

// d cos / d a = b / (|a||b|) - cos * a / |a|^2, scaled by upstream.
void cosine_backward(const double* a, const double* b, const CosineParts& parts,
                     double upstream, double* grad_a, double* grad_b,
                     std::size_t d) {
  if (parts.degenerate || upstream == 0.0) return;
  const double inv_ab = 1.0 / (parts.norm_a * parts.norm_b);
  const double inv_aa = 1.0 / (parts.norm_a * parts.norm_a);
  const double inv_bb = 1.0 / (parts.norm_b * parts.norm_b);
  for (std::size_t i = 0; i < d; ++i) {
    if (grad_a != nullptr) {
      grad_a[i] += upstream * (b[i] * inv_ab - parts.value * a[i] * inv_aa);
    }
    if (grad_b != nullptr) {
      grad_b[i] += upstream * (a[i] * inv_ab - parts.value * b[i] * inv_bb);
    }
  }
}

}  // namespace

Var cosine_similarity(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 1 || av.shape() != bv.shape() || av.numel() == 0) {
    shape_mismatch("cosine_similarity", av, bv);
  }
  const std::size_t d = av.numel();
  const CosineParts parts = cosine_parts(av.data().data(), bv.data().data(), d);
  return a.graph().record(
      Tensor::scalar(parts.value), {a, b}, [a, b, parts, d](Graph& g, const Tensor& go) {
        Tensor* ga = g.grad_target(a);
        Tensor* gb = g.grad_target(b);
        cosine_backward(a.value().data().data(), b.value().data().data(), parts,
                        go[0], ga ? ga->data().data() : nullptr,
                        gb ? gb->data().data() : nullptr, d);
      });
}

Var cosine_rows(Var m, Var v) {
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || mv.shape()[1] != vv.shape()[0] ||
      vv.numel() == 0) {
    shape_mismatch("cosine_rows", mv, vv);
  }
  const std::size_t t = mv.shape()[0];
  const std::size_t d = mv.shape()[1];
  std::vector<CosineParts> parts(t);
  Tensor out(Shape{t}, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    parts[i] = cosine_parts(mv.data().data() + i * d, vv.data().data(), d);
    out[i] = parts[i].value;
  }
  return m.graph().record(
      std::move(out), {m, v},
      [m, v, parts = std::move(parts), t, d](Graph& g, const Tensor& go) {
        Tensor* gm = g.grad_target(m);
        Tensor* gv = g.grad_target(v);
        const double* mp = m.value().data().data();
        const double* vp = v.value().data().data();
        for (std::size_t i = 0; i < t; ++i) {
          cosine_backward(mp + i * d, vp, parts[i], go[i],
                          gm ? gm->data().data() + i * d : nullptr,
                          gv ? gv->data().data() : nullptr, d);
        }
      });
}

Var gather_rows(Var table, std::span<const std::int64_t> ids,
                std::int64_t padding_id) {
  const Tensor& tv = table.value();
  require_rank("gather_rows", tv, 2);
  const std::size_t vocab = tv.shape()[0];
  const std::size_t d = tv.shape()[1];
  std::vector<std::int64_t> rows(ids.begin(), ids.end());
  Tensor out(Shape{rows.size(), d}, 0.0);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] < 0 || static_cast<std::size_t>(rows[t]) >= vocab) {
      throw IndexError("gather_rows: id " + std::to_string(rows[t]) +
                       " outside table of " + std::to_string(vocab) + " rows");
    }
    if (rows[t] == padding_id) continue;
    std::copy_n(tv.data().begin() + rows[t] * d, d, out.data().begin() + t * d);
  }
  return table.graph().record(
      std::move(out), {table},
      [table, rows = std::move(rows), padding_id, d](Graph& g, const Tensor& go) {
        Tensor* gt = g.grad_target(table);
        if (gt == nullptr) return;
        for (std::size_t t = 0; t < rows.size(); ++t) {
          if (rows[t] == padding_id) continue;
          double* dst = gt->data().data() + rows[t] * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += go[t * d + j];
        }
      });
}

Var masked_mean_rows(Var m, const Mask& mask) {
  const Tensor& mv = m.value();
  require_rank("masked_mean_rows", mv, 2);
  const std::size_t n = mv.shape()[0];
  const std::size_t d = mv.shape()[1];
  if (mask.size() != n) {
    throw ShapeError("masked_mean_rows: mask length " + std::to_string(mask.size()) +
                     " does not match " + shape_string(mv.shape()));
  }
  std::size_t count = 0;
  for (auto keep : mask) count += keep ? 1 : 0;
  if (count == 0) throw InvalidMaskError("masked_mean_rows: every row is masked");
  Tensor out(Shape{d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < d; ++j) out[j] += mv[i * d + j];
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& x : out.storage()) x *= inv;
  return m.graph().record(std::move(out), {m}, [m, mask, inv, n, d](Graph& g, const Tensor& go) {
    Tensor* gm = g.grad_target(m);
    if (gm == nullptr) return;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      for (std::size_t j = 0; j < d; ++j) (*gm)[i * d + j] += go[j] * inv;
    }
  });
}

Var weighted_sum_rows(Var w, Var m) {
  const Tensor& wv = w.value();
  const Tensor& mv = m.value();
  if (wv.rank() != 1 || mv.rank() != 2 || wv.numel() != mv.shape()[0]) {
    shape_mismatch("weighted_sum_rows", wv, mv);
  }
  const std::size_t n = mv.shape()[0];
  const std::size_t d = mv.shape()[1];
  Tensor out(Shape{d}, 0.0);
  kernels::gemm_nn(wv.data(), mv.data(), out.data(), 1, n, d);
  return w.graph().record(std::move(out), {w, m}, [w, m, n, d](Graph& g, const Tensor& go) {
    if (Tensor* gw = g.grad_target(w)) {
      kernels::gemm_nt(go.data(), m.value().data(), gw->data(), 1, n, d);
    }
    if (Tensor* gm = g.grad_target(m)) {
      kernels::gemm_tn(w.value().data(), go.data(), gm->data(), 1, n, d);
    }
  });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  std::vector<double> values;
  std::vector<Var> inputs(parts.begin(), parts.end());
  for (const Var& p : inputs) {
    require_rank("concat", p.value(), 1);
    auto data = p.value().data();
    values.insert(values.end(), data.begin(), data.end());
  }
  return inputs.front().graph().record(
      Tensor::vector(std::move(values)), std::span<const Var>(inputs),
      [inputs](Graph& g, const Tensor& go) {
        std::size_t offset = 0;
        for (const Var& p : inputs) {
          const std::size_t n = p.value().numel();
          add_into(g.grad_target(p), go.data().subspan(offset, n));
          offset += n;
        }
      });
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[0] != bv.shape()[0]) {
    shape_mismatch("concat_cols", av, bv);
  }
  const std::size_t n = av.shape()[0];
  const std::size_t ca = av.shape()[1];
  const std::size_t cb = bv.shape()[1];
  Tensor out(Shape{n, ca + cb}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data().begin() + i * ca, ca, out.data().begin() + i * (ca + cb));
    std::copy_n(bv.data().begin() + i * cb, cb,
                out.data().begin() + i * (ca + cb) + ca);
  }
  return a.graph().record(std::move(out), {a, b}, [a, b, n, ca, cb](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_target(a);
    Tensor* gb = g.grad_target(b);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = go.data().data() + i * (ca + cb);
      if (ga) {
        for (std::size_t j = 0; j < ca; ++j) (*ga)[i * ca + j] += row[j];
      }
      if (gb) {
        for (std::size_t j = 0; j < cb; ++j) (*gb)[i * cb + j] += row[ca + j];
      }
    }
  });
}

Var slice(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (av.rank() != 1 && av.rank() != 2) {
    throw ShapeError("slice: unsupported shape " + shape_string(av.shape()));
  }
  const std::size_t rows = av.shape()[0];
  if (begin + count > rows) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " +
                     shape_string(av.shape()));
  }
  const std::size_t width = av.rank() == 2 ? av.shape()[1] : 1;
  Shape shape = av.shape();
  shape[0] = count;
  Tensor out(shape, std::vector<double>(av.data().begin() + begin * width,
                                        av.data().begin() + (begin + count) * width));
  return a.graph().record(std::move(out), {a}, [a, begin, width](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_target(a);
    if (ga == nullptr) return;
    double* dst = ga->data().data() + begin * width;
    for (std::size_t i = 0; i < go.numel(); ++i) dst[i] += go[i];
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape_numel(shape) != av.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(av.shape()) + " as " +
                     shape_string(shape));
  }
  return a.graph().record(av.reshaped(std::move(shape)), {a},
                          [a](Graph& g, const Tensor& go) {
                            add_into(g.grad_target(a), go.data());
                          });
}

Var repeat_rows(Var v, std::size_t n) {
  const Tensor& vv = v.value();
  require_rank("repeat_rows", vv, 1);
  const std::size_t d = vv.numel();
  Tensor out(Shape{n, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(vv.data().begin(), vv.data().end(), out.data().begin() + i * d);
  }
  return v.graph().record(std::move(out), {v}, [v, n, d](Graph& g, const Tensor& go) {
    Tensor* gv = g.grad_target(v);
    if (gv == nullptr) return;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) (*gv)[j] += go[i * d + j];
    }
  });
}

}  // namespace mutatt
