#include "che/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace che {

namespace {

thread_local bool g_grad_enabled = true;

void check_same_shape(Op op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

void check_finite(Op op, const Tensor& t) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op_name(op)) + ": non-finite value in output of shape " +
                       t.shape_string());
  }
}

NodePtr make_node(Op op, std::vector<NodePtr> inputs, Tensor value,
                  std::function<void(Node&)> rule) {
  check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->op = op;
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in->requires_grad) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      node->inputs = std::move(inputs);
      node->backward_rule = std::move(rule);
    }
  }
  return node;
}

void accumulate(const NodePtr& input, const Tensor& contribution) {
  if (!input->requires_grad) return;
  Tensor& g = input->ensure_grad();
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += contribution[i];
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "{";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "}";
}

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::scale: return "scale";
    case Op::scalar_mul: return "scalar_mul";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::clamp: return "clamp";
    case Op::softmax_last: return "softmax_last";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::trace: return "trace";
    case Op::pairwise_sqdist: return "pairwise_sqdist";
    case Op::gather_rows_mean: return "gather_rows_mean";
  }
  return "unknown";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

NodePtr make_leaf(Tensor value, bool requires_grad) {
  check_finite(Op::leaf, value);
  auto node = std::make_shared<Node>();
  node->op = Op::leaf;
  node->value = std::move(value);
  node->requires_grad = requires_grad && g_grad_enabled;
  return node;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  check_same_shape(Op::add, a->value, b->value);
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_node(Op::add, {a, b}, std::move(out), [](Node& n) {
    accumulate(n.inputs[0], n.grad);
    accumulate(n.inputs[1], n.grad);
  });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  check_same_shape(Op::sub, a->value, b->value);
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_node(Op::sub, {a, b}, std::move(out), [](Node& n) {
    accumulate(n.inputs[0], n.grad);
    if (n.inputs[1]->requires_grad) {
      Tensor neg = n.grad;
      for (auto& v : neg.data()) v = -v;
      accumulate(n.inputs[1], neg);
    }
  });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  check_same_shape(Op::mul, a->value, b->value);
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node(Op::mul, {a, b}, std::move(out), [](Node& n) {
    if (n.inputs[0]->requires_grad) {
      Tensor ga = n.grad;
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= n.inputs[1]->value[i];
      accumulate(n.inputs[0], ga);
    }
    if (n.inputs[1]->requires_grad) {
      Tensor gb = n.grad;
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] *= n.inputs[0]->value[i];
      accumulate(n.inputs[1], gb);
    }
  });
}

NodePtr divide(const NodePtr& a, const NodePtr& b) {
  check_same_shape(Op::div, a->value, b->value);
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
  return make_node(Op::div, {a, b}, std::move(out), [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      Tensor ga = n.grad;
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] /= bv[i];
      accumulate(n.inputs[0], ga);
    }
    if (n.inputs[1]->requires_grad) {
      Tensor gb = n.grad;
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] *= -av[i] / (bv[i] * bv[i]);
      accumulate(n.inputs[1], gb);
    }
  });
}

NodePtr scale(const NodePtr& a, double s) {
  if (!std::isfinite(s)) throw NumericError("scale: non-finite factor");
  Tensor out = a->value;
  for (auto& v : out.data()) v *= s;
  return make_node(Op::scale, {a}, std::move(out), [s](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor ga = n.grad;
    for (auto& v : ga.data()) v *= s;
    accumulate(n.inputs[0], ga);
  });
}

NodePtr scalar_mul(const NodePtr& s, const NodePtr& a) {
  if (s->value.numel() != 1) {
    throw ShapeError("scalar_mul: first argument must be scalar, got " + s->value.shape_string());
  }
  const double sv = s->value[0];
  Tensor out = a->value;
  for (auto& v : out.data()) v *= sv;
  return make_node(Op::scalar_mul, {s, a}, std::move(out), [](Node& n) {
    const double sv = n.inputs[0]->value[0];
    const Tensor& av = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.numel(); ++i) acc += n.grad[i] * av[i];
      accumulate(n.inputs[0], Tensor::scalar(acc));
    }
    if (n.inputs[1]->requires_grad) {
      Tensor ga = n.grad;
      for (auto& v : ga.data()) v *= sv;
      accumulate(n.inputs[1], ga);
    }
  });
}

NodePtr exp(const NodePtr& a) {
  Tensor out = a->value;
  for (auto& v : out.data()) v = std::exp(v);
  return make_node(Op::exp, {a}, std::move(out), [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor ga = n.grad;
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= n.value[i];
    accumulate(n.inputs[0], ga);
  });
}

NodePtr log(const NodePtr& a) {
  Tensor out = a->value;
  for (auto& v : out.data()) v = std::log(v);
  return make_node(Op::log, {a}, std::move(out), [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor ga = n.grad;
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] /= n.inputs[0]->value[i];
    accumulate(n.inputs[0], ga);
  });
}

NodePtr tanh(const NodePtr& a) {
  Tensor out = a->value;
  for (auto& v : out.data()) v = std::tanh(v);
  return make_node(Op::tanh, {a}, std::move(out), [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor ga = n.grad;
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= 1.0 - n.value[i] * n.value[i];
    accumulate(n.inputs[0], ga);
  });
}

NodePtr sigmoid(const NodePtr& a) {
  Tensor out = a->value;
  for (auto& v : out.data()) v = stable_sigmoid(v);
  return make_node(Op::sigmoid, {a}, std::move(out), [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor ga = n.grad;
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= n.value[i] * (1.0 - n.value[i]);
    accumulate(n.inputs[0], ga);
  });
}

NodePtr clamp(const NodePtr& a, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("clamp: lo must be < hi");
  Tensor out = a->value;
  for (auto& v : out.data()) v = std::min(std::max(v, lo), hi);
  return make_node(Op::clamp, {a}, std::move(out), [lo, hi](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor ga = n.grad;
    const Tensor& av = n.inputs[0]->value;
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      if (!(av[i] > lo && av[i] < hi)) ga[i] = 0.0;
    }
    accumulate(n.inputs[0], ga);
  });
}

NodePtr softmax_last(const NodePtr& a) {
  const Tensor& x = a->value;
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError("softmax_last: expected rank 1 or 2, got " + x.shape_string());
  }
  const std::size_t rows = x.rank() == 2 ? x.rows() : 1;
  const std::size_t cols = x.rank() == 2 ? x.cols() : x.numel();
  Tensor out = x;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = out[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, out[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double e = std::exp(out[r * cols + c] - mx);
      out[r * cols + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return make_node(Op::softmax_last, {a}, std::move(out), [rows, cols](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor ga = Tensor::zeros(n.value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        dot += n.grad[r * cols + c] * n.value[r * cols + c];
      }
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        ga[i] = n.value[i] * (n.grad[i] - dot);
      }
    }
    accumulate(n.inputs[0], ga);
  });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || (bv.rank() != 2 && bv.rank() != 1) || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + av.shape_string() + " x " +
                     bv.shape_string());
  }
  const std::size_t m = av.rows();
  const std::size_t k = av.cols();
  const std::size_t n = bv.rank() == 2 ? bv.cols() : 1;
  const bool vec = bv.rank() == 1;

  Tensor out = vec ? Tensor({m}) : Tensor({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] += aik * bv[kk * n + j];
      }
    }
  }
  return make_node(Op::matmul, {a, b}, std::move(out), [m, k, n](Node& nd) {
    const Tensor& av2 = nd.inputs[0]->value;
    const Tensor& bv2 = nd.inputs[1]->value;
    if (nd.inputs[0]->requires_grad) {
      Tensor ga = Tensor::zeros(av2.shape());
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = nd.grad[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t kk = 0; kk < k; ++kk) {
            ga[i * k + kk] += g * bv2[kk * n + j];
          }
        }
      }
      accumulate(nd.inputs[0], ga);
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor gb = Tensor::zeros(bv2.shape());
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double aik = av2[i * k + kk];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) {
            gb[kk * n + j] += aik * nd.grad[i * n + j];
          }
        }
      }
      accumulate(nd.inputs[1], gb);
    }
  });
}

NodePtr transpose(const NodePtr& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw ShapeError("transpose: expected matrix, got " + av.shape_string());
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  return make_node(Op::transpose, {a}, std::move(out), [m, n](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor ga({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = nd.grad[j * m + i];
    }
    accumulate(nd.inputs[0], ga);
  });
}

NodePtr concat(const NodePtr& a, const NodePtr& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 1 || bv.rank() != 1) {
    throw ShapeError("concat: expected vectors, got " + av.shape_string() + " and " +
                     bv.shape_string());
  }
  const std::size_t na = av.numel();
  const std::size_t nb = bv.numel();
  Tensor out({na + nb});
  for (std::size_t i = 0; i < na; ++i) out[i] = av[i];
  for (std::size_t i = 0; i < nb; ++i) out[na + i] = bv[i];
  return make_node(Op::concat, {a, b}, std::move(out), [na, nb](Node& nd) {
    if (nd.inputs[0]->requires_grad) {
      Tensor ga({na});
      for (std::size_t i = 0; i < na; ++i) ga[i] = nd.grad[i];
      accumulate(nd.inputs[0], ga);
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor gb({nb});
      for (std::size_t i = 0; i < nb; ++i) gb[i] = nd.grad[na + i];
      accumulate(nd.inputs[1], gb);
    }
  });
}

NodePtr slice(const NodePtr& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a->value;
  if (av.rank() < 1 || av.rank() > 2 || begin >= end || end > av.rows()) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") for shape " + av.shape_string());
  }
  const std::size_t width = av.rank() == 2 ? av.cols() : 1;
  const std::size_t count = end - begin;
  Tensor out = av.rank() == 2 ? Tensor({count, width}) : Tensor({count});
  for (std::size_t i = 0; i < count * width; ++i) out[i] = av[begin * width + i];
  return make_node(Op::slice, {a}, std::move(out), [begin, width](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor ga = Tensor::zeros(nd.inputs[0]->value.shape());
    for (std::size_t i = 0; i < nd.grad.numel(); ++i) ga[begin * width + i] = nd.grad[i];
    accumulate(nd.inputs[0], ga);
  });
}

NodePtr sum(const NodePtr& a) {
  double acc = 0.0;
  for (double v : a->value.data()) acc += v;
  return make_node(Op::sum, {a}, Tensor::scalar(acc), [](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    accumulate(nd.inputs[0], Tensor::full(nd.inputs[0]->value.shape(), nd.grad[0]));
  });
}

NodePtr mean(const NodePtr& a) {
  const std::size_t n = a->value.numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (double v : a->value.data()) acc += v;
  return make_node(Op::mean, {a}, Tensor::scalar(acc / static_cast<double>(n)), [n](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    accumulate(nd.inputs[0],
               Tensor::full(nd.inputs[0]->value.shape(), nd.grad[0] / static_cast<double>(n)));
  });
}

NodePtr trace(const NodePtr& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2 || av.rows() != av.cols()) {
    throw ShapeError("trace: expected square matrix, got " + av.shape_string());
  }
  const std::size_t n = av.rows();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += av[i * n + i];
  return make_node(Op::trace, {a}, Tensor::scalar(acc), [n](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor ga = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) ga[i * n + i] = nd.grad[0];
    accumulate(nd.inputs[0], ga);
  });
}

NodePtr pairwise_sqdist(const NodePtr& a) {
  const Tensor& av = a->value;
  if (av.rank() < 1 || av.rank() > 2) {
    throw ShapeError("pairwise_sqdist: expected rank 1 or 2, got " + av.shape_string());
  }
  const std::size_t n = av.rows();
  const std::size_t d = av.rank() == 2 ? av.cols() : 1;
  Tensor out({n, n});
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = av[p * d + k] - av[q * d + k];
        dist += diff * diff;
      }
      out[p * n + q] = dist;
      out[q * n + p] = dist;
    }
  }
  return make_node(Op::pairwise_sqdist, {a}, std::move(out), [n, d](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    const Tensor& av2 = nd.inputs[0]->value;
    Tensor ga = Tensor::zeros(av2.shape());
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = 0; q < n; ++q) {
        const double g = nd.grad[p * n + q];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = av2[p * d + k] - av2[q * d + k];
          ga[p * d + k] += 2.0 * g * diff;
          ga[q * d + k] -= 2.0 * g * diff;
        }
      }
    }
    accumulate(nd.inputs[0], ga);
  });
}

NodePtr gather_rows_mean(const NodePtr& matrix, const std::vector<std::size_t>& row_indices) {
  const Tensor& mv = matrix->value;
  if (mv.rank() != 2) {
    throw ShapeError("gather_rows_mean: expected matrix, got " + mv.shape_string());
  }
  if (row_indices.empty()) throw ShapeError("gather_rows_mean: empty index set");
  const std::size_t r = mv.cols();
  for (std::size_t idx : row_indices) {
    if (idx >= mv.rows()) {
      throw ShapeError("gather_rows_mean: row " + std::to_string(idx) + " out of range for " +
                       mv.shape_string());
    }
  }
  Tensor out({r});
  for (std::size_t idx : row_indices) {
    for (std::size_t c = 0; c < r; ++c) out[c] += mv[idx * r + c];
  }
  const double inv = 1.0 / static_cast<double>(row_indices.size());
  for (auto& v : out.data()) v *= inv;
  return make_node(Op::gather_rows_mean, {matrix}, std::move(out),
                   [row_indices, r, inv](Node& nd) {
                     if (!nd.inputs[0]->requires_grad) return;
                     Tensor& ga = nd.inputs[0]->ensure_grad();
                     for (std::size_t idx : row_indices) {
                       for (std::size_t c = 0; c < r; ++c) {
                         ga[idx * r + c] += nd.grad[c] * inv;
                       }
                     }
                   });
}

void backward(const NodePtr& root) {
  if (root->value.numel() != 1) {
    throw ShapeError("backward: root must be scalar, got " + root->value.shape_string());
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->inputs.size()) {
      Node* child = node->inputs[next_child].get();
      ++next_child;
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->grad.empty() || !node->backward_rule) continue;
    node->backward_rule(*node);
  }
}

void clear_grad(const NodePtr& node) { node->grad = Tensor(); }

void clear_graph_grads(const NodePtr& root) {
  std::vector<Node*> stack{root.get()};
  std::unordered_set<Node*> visited{root.get()};
  while (!stack.empty()) {
    Node* node = stack.back();
    stack.pop_back();
    node->grad = Tensor();
    for (const auto& in : node->inputs) {
      if (visited.insert(in.get()).second) stack.push_back(in.get());
    }
  }
}

double grad_check(const std::function<NodePtr(const NodePtr&)>& f, const Tensor& x, double h) {
  if (h <= 0.0) throw ConfigError("grad_check: step must be positive");

  auto leaf = make_leaf(x, true);
  auto root = f(leaf);
  if (root->value.numel() != 1) {
    throw ShapeError("grad_check: f must return a scalar, got " + root->value.shape_string());
  }
  backward(root);
  Tensor analytic =
      leaf->grad.empty() ? Tensor::zeros(x.shape()) : leaf->grad;

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor hi = x;
    Tensor lo = x;
    hi[i] += h;
    lo[i] -= h;
    double plus, minus;
    {
      NoGradGuard guard;
      plus = f(make_leaf(hi, false))->value.item();
      minus = f(make_leaf(lo, false))->value.item();
    }
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("grad_check: f non-finite at probed point");
    }
    const double numeric = (plus - minus) / (2.0 * h);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace che
