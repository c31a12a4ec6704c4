#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pamt {

// Reverse-mode tape over Eigen matrices. A graph is built per forward pass;
// backward() walks the tape in reverse creation order. Gradients are only
// computed along paths that reach a leaf created with needs_grad = true.
template <typename S>
class Graph {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Graph&)> backward;
  };

  int leaf(Mat v, bool needs_grad = false) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  const Mat& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Mat& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  // ---- ops ----

  int matmul(int a, int b, bool ta = false, bool tb = false) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    Node n;
    n.value = (ta ? A.transpose() : A) * (tb ? B.transpose() : B);
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad) {
      nodes_[id].backward = [a, b, ta, tb, id](Graph& g) {
        const Mat& dY = g.grad_ref(id);
        const Mat& A = g.value(a);
        const Mat& B = g.value(b);
        if (g.needs_grad(a)) {
          if (!ta && !tb) g.grad_ref(a) += dY * B.transpose();
          else if (!ta && tb) g.grad_ref(a) += dY * B;
          else if (ta && !tb) g.grad_ref(a) += B * dY.transpose();
          else g.grad_ref(a) += B.transpose() * dY.transpose();
        }
        if (g.needs_grad(b)) {
          if (!ta && !tb) g.grad_ref(b) += A.transpose() * dY;
          else if (!ta && tb) g.grad_ref(b) += dY.transpose() * A;
          else if (ta && !tb) g.grad_ref(b) += A * dY;
          else g.grad_ref(b) += dY.transpose() * A.transpose();
        }
      };
    }
    return id;
  }

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    return binary_elemwise(a, b, value(a) + value(b),
                           [](Graph& g, int a, int b, const Mat& dY) {
                             if (g.needs_grad(a)) g.grad_ref(a) += dY;
                             if (g.needs_grad(b)) g.grad_ref(b) += dY;
                           });
  }

  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    return binary_elemwise(a, b, value(a) - value(b),
                           [](Graph& g, int a, int b, const Mat& dY) {
                             if (g.needs_grad(a)) g.grad_ref(a) += dY;
                             if (g.needs_grad(b)) g.grad_ref(b) -= dY;
                           });
  }

  int cmul(int a, int b) {
    check_same_shape(a, b, "cmul");
    return binary_elemwise(
        a, b, value(a).cwiseProduct(value(b)),
        [](Graph& g, int a, int b, const Mat& dY) {
          if (g.needs_grad(a)) g.grad_ref(a) += dY.cwiseProduct(g.value(b));
          if (g.needs_grad(b)) g.grad_ref(b) += dY.cwiseProduct(g.value(a));
        });
  }

  // a: R x C, v: 1 x C broadcast over rows.
  int add_rowvec(int a, int v) {
    Node n;
    n.value = value(a).rowwise() + value(v).row(0);
    n.needs_grad = needs_grad(a) || needs_grad(v);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, v, id](Graph& g) {
        const Mat& dY = g.grad_ref(id);
        if (g.needs_grad(a)) g.grad_ref(a) += dY;
        if (g.needs_grad(v)) g.grad_ref(v) += dY.colwise().sum();
      };
    return id;
  }

  int mul_rowvec(int a, int v) {
    Node n;
    n.value = value(a).array().rowwise() * value(v).row(0).array();
    n.needs_grad = needs_grad(a) || needs_grad(v);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, v, id](Graph& g) {
        const Mat& dY = g.grad_ref(id);
        if (g.needs_grad(a))
          g.grad_ref(a) +=
              (dY.array().rowwise() * g.value(v).row(0).array()).matrix();
        if (g.needs_grad(v))
          g.grad_ref(v) += dY.cwiseProduct(g.value(a)).colwise().sum();
      };
    return id;
  }

  int scale(int a, S c) {
    return unary(a, value(a) * c, [c](Graph& g, int a, const Mat& dY) {
      g.grad_ref(a) += dY * c;
    });
  }

  int add_const(int a, S c) {
    return unary(a, (value(a).array() + c).matrix(),
                 [](Graph& g, int a, const Mat& dY) { g.grad_ref(a) += dY; });
  }

  int square(int a) {
    return unary(a, value(a).cwiseProduct(value(a)),
                 [](Graph& g, int a, const Mat& dY) {
                   g.grad_ref(a) += S(2) * dY.cwiseProduct(g.value(a));
                 });
  }

  int log(int a) {
    return unary(a, value(a).array().log().matrix(),
                 [](Graph& g, int a, const Mat& dY) {
                   g.grad_ref(a) += dY.cwiseQuotient(g.value(a));
                 });
  }

  int sqrt_op(int a) {
    Node n;
    n.value = value(a).array().sqrt().matrix();
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id](Graph& g) {
        const Mat& y = g.value(id);
        g.grad_ref(a) += g.grad_ref(id).cwiseQuotient(
            (S(2) * y.array() + S(1e-30)).matrix());
      };
    return id;
  }

  int sum(int a) {
    Node n;
    n.value = Mat::Constant(1, 1, value(a).sum());
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id](Graph& g) {
        g.grad_ref(a).array() += g.grad_ref(id)(0, 0);
      };
    return id;
  }

  int mean_rows(int a) {
    const S inv = S(1) / static_cast<S>(value(a).rows());
    Node n;
    n.value = value(a).colwise().mean();
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id, inv](Graph& g) {
        g.grad_ref(a).rowwise() += (g.grad_ref(id).row(0) * inv).eval();
      };
    return id;
  }

  int relu(int a) {
    return unary(a, value(a).cwiseMax(S(0)),
                 [](Graph& g, int a, const Mat& dY) {
                   g.grad_ref(a) +=
                       (g.value(a).array() > S(0)).template cast<S>().matrix()
                           .cwiseProduct(dY);
                 });
  }

  // Exact (erf-based) GELU.
  int gelu(int a) {
    const Mat& x = value(a);
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      S v = x(i);
      y(i) = S(0.5) * v * (S(1) + std::erf(v / S(std::sqrt(2.0))));
    }
    return unary(a, std::move(y), [](Graph& g, int a, const Mat& dY) {
      const Mat& x = g.value(a);
      Mat& dx = g.grad_ref(a);
      const S inv_sqrt2 = S(1) / S(std::sqrt(2.0));
      const S inv_sqrt2pi = S(1) / S(std::sqrt(2.0 * 3.141592653589793));
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        S v = x(i);
        S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
        S pdf = std::exp(S(-0.5) * v * v) * inv_sqrt2pi;
        dx(i) += dY(i) * (cdf + v * pdf);
      }
    });
  }

  int softmax_rows(int a) {
    const Mat& x = value(a);
    Mat y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      S m = x.row(r).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(r).array() - m).exp();
      y.row(r) = (e / e.sum()).matrix();
    }
    Node n;
    n.value = std::move(y);
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id](Graph& g) {
        const Mat& y = g.value(id);
        const Mat& dY = g.grad_ref(id);
        Mat& dx = g.grad_ref(a);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          S dot = dY.row(r).cwiseProduct(y.row(r)).sum();
          dx.row(r) +=
              y.row(r).cwiseProduct(dY.row(r).array().matrix()) - dot * y.row(r);
        }
      };
    return id;
  }

  int logsumexp_rows(int a) {
    const Mat& x = value(a);
    Mat y(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      S m = x.row(r).maxCoeff();
      y(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
    }
    Node n;
    n.value = std::move(y);
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id](Graph& g) {
        const Mat& x = g.value(a);
        const Mat& y = g.value(id);
        const Mat& dY = g.grad_ref(id);
        Mat& dx = g.grad_ref(a);
        for (Eigen::Index r = 0; r < x.rows(); ++r)
          dx.row(r) += dY(r, 0) * (x.row(r).array() - y(r, 0)).exp().matrix();
      };
    return id;
  }

  int diag(int a) {
    const Mat& x = value(a);
    if (x.rows() != x.cols()) throw std::invalid_argument("diag: square input required");
    Node n;
    n.value = x.diagonal();
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id](Graph& g) {
        g.grad_ref(a).diagonal() += g.grad_ref(id).col(0);
      };
    return id;
  }

  int transpose(int a) {
    Node n;
    n.value = value(a).transpose();
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id](Graph& g) {
        g.grad_ref(a) += g.grad_ref(id).transpose();
      };
    return id;
  }

  int slice_cols(int a, Eigen::Index start, Eigen::Index count) {
    Node n;
    n.value = value(a).middleCols(start, count);
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id, start, count](Graph& g) {
        g.grad_ref(a).middleCols(start, count) += g.grad_ref(id);
      };
    return id;
  }

  int concat_cols(const std::vector<int>& parts) {
    Eigen::Index rows = value(parts[0]).rows(), cols = 0;
    for (int p : parts) cols += value(p).cols();
    Node n;
    n.value.resize(rows, cols);
    Eigen::Index off = 0;
    bool ng = false;
    for (int p : parts) {
      n.value.middleCols(off, value(p).cols()) = value(p);
      off += value(p).cols();
      ng = ng || needs_grad(p);
    }
    n.needs_grad = ng;
    int id = push(std::move(n));
    if (ng)
      nodes_[id].backward = [parts, id](Graph& g) {
        Eigen::Index off = 0;
        for (int p : parts) {
          Eigen::Index c = g.value(p).cols();
          if (g.needs_grad(p)) g.grad_ref(p) += g.grad_ref(id).middleCols(off, c);
          off += c;
        }
      };
    return id;
  }

  int concat_rows(const std::vector<int>& parts) {
    Eigen::Index cols = value(parts[0]).cols(), rows = 0;
    for (int p : parts) rows += value(p).rows();
    Node n;
    n.value.resize(rows, cols);
    Eigen::Index off = 0;
    bool ng = false;
    for (int p : parts) {
      n.value.middleRows(off, value(p).rows()) = value(p);
      off += value(p).rows();
      ng = ng || needs_grad(p);
    }
    n.needs_grad = ng;
    int id = push(std::move(n));
    if (ng)
      nodes_[id].backward = [parts, id](Graph& g) {
        Eigen::Index off = 0;
        for (int p : parts) {
          Eigen::Index r = g.value(p).rows();
          if (g.needs_grad(p)) g.grad_ref(p) += g.grad_ref(id).middleRows(off, r);
          off += r;
        }
      };
    return id;
  }

  // Rowwise layer norm with affine gain/bias (1 x D each).
  int layer_norm(int x, int gain, int bias, S eps = S(1e-5)) {
    const Mat& X = value(x);
    const Eigen::Index D = X.cols();
    Mat xhat(X.rows(), D);
    Mat inv_sigma(X.rows(), 1);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      S mu = X.row(r).mean();
      S var = (X.row(r).array() - mu).square().mean();
      S is = S(1) / std::sqrt(var + eps);
      inv_sigma(r, 0) = is;
      xhat.row(r) = ((X.row(r).array() - mu) * is).matrix();
    }
    Node n;
    n.value = (xhat.array().rowwise() * value(gain).row(0).array()).matrix()
                  .rowwise() + value(bias).row(0);
    n.needs_grad = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad) {
      auto xhat_p = std::make_shared<Mat>(std::move(xhat));
      auto is_p = std::make_shared<Mat>(std::move(inv_sigma));
      nodes_[id].backward = [x, gain, bias, id, xhat_p, is_p](Graph& g) {
        const Mat& dY = g.grad_ref(id);
        const Eigen::Index D = dY.cols();
        if (g.needs_grad(bias)) g.grad_ref(bias) += dY.colwise().sum();
        if (g.needs_grad(gain))
          g.grad_ref(gain) += dY.cwiseProduct(*xhat_p).colwise().sum();
        if (g.needs_grad(x)) {
          Mat& dx = g.grad_ref(x);
          const auto gv = g.value(gain).row(0).array();
          for (Eigen::Index r = 0; r < dY.rows(); ++r) {
            Eigen::Array<S, 1, Eigen::Dynamic> dyg = dY.row(r).array() * gv;
            S m1 = dyg.mean();
            S m2 = (dyg * xhat_p->row(r).array()).mean();
            dx.row(r) += ((dyg - m1 - xhat_p->row(r).array() * m2) *
                          (*is_p)(r, 0)).matrix();
          }
        }
      };
    }
    return id;
  }

  // Rowwise L2 normalization: y_i = x_i / ||x_i||.
  int row_normalize(int a) {
    const Mat& X = value(a);
    Mat y(X.rows(), X.cols());
    Mat norms(X.rows(), 1);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      S nrm = X.row(r).norm();
      if (nrm < S(1e-30))
        throw std::domain_error("row_normalize: zero-norm row");
      norms(r, 0) = nrm;
      y.row(r) = X.row(r) / nrm;
    }
    Node n;
    n.value = std::move(y);
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad) {
      auto norms_p = std::make_shared<Mat>(std::move(norms));
      nodes_[id].backward = [a, id, norms_p](Graph& g) {
        const Mat& y = g.value(id);
        const Mat& dY = g.grad_ref(id);
        Mat& dx = g.grad_ref(a);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          S dot = dY.row(r).cwiseProduct(y.row(r)).sum();
          dx.row(r) += (dY.row(r) - dot * y.row(r)) / (*norms_p)(r, 0);
        }
      };
    }
    return id;
  }

  // 1 x L row vector reshaped into (L / frame_len) x frame_len frames.
  int frames(int a, Eigen::Index frame_len) {
    const Mat& x = value(a);
    const Eigen::Index t = x.cols() / frame_len;
    Node n;
    n.value.resize(t, frame_len);
    for (Eigen::Index f = 0; f < t; ++f)
      for (Eigen::Index i = 0; i < frame_len; ++i)
        n.value(f, i) = x(0, f * frame_len + i);
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id, frame_len, t](Graph& g) {
        const Mat& dY = g.grad_ref(id);
        Mat& dx = g.grad_ref(a);
        for (Eigen::Index f = 0; f < t; ++f)
          for (Eigen::Index i = 0; i < frame_len; ++i)
            dx(0, f * frame_len + i) += dY(f, i);
      };
    return id;
  }

  // FiLM: out[t,i] = gamma[i] * h[t,i] + beta[i].
  int film(int h, int gamma, int beta) {
    return add_rowvec(mul_rowvec(h, gamma), beta);
  }

  void backward(int root) {
    if (value(root).size() != 1)
      throw std::invalid_argument("backward: root must be scalar");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[static_cast<size_t>(root)].grad(0, 0) = S(1);
    for (std::ptrdiff_t i = root; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.backward) n.backward(*this);
    }
  }

  Mat& grad_ref(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  int push(Node n) {
    if (!n.value.allFinite())
      throw std::domain_error("non-finite values in graph node " +
                              std::to_string(nodes_.size()));
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  template <typename F>
  int unary(int a, Mat value, F df) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad(a);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, id, df](Graph& g) { df(g, a, g.grad_ref(id)); };
    return id;
  }

  template <typename F>
  int binary_elemwise(int a, int b, Mat value, F df) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad(a) || needs_grad(b);
    int id = push(std::move(n));
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [a, b, id, df](Graph& g) {
        df(g, a, b, g.grad_ref(id));
      };
    return id;
  }

  void check_same_shape(int a, int b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
};

using GraphD = Graph<double>;
using GraphF = Graph<float>;

}  // namespace pamt
