#include "regionedit/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace regionedit::nn {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

template <class F, class DF>
Var unary(const Var& x, F f, DF df) {
  Mat y = x.value().unaryExpr(f);
  return make_result(std::move(y), {x}, [df](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d(in.value.rows(), in.value.cols());
    const Eigen::Index size = d.size();
    const double* xv = in.value.data();
    const double* yv = n.value.data();
    const double* g = n.grad.data();
    double* out = d.data();
    for (Eigen::Index i = 0; i < size; ++i) out[i] = g[i] * df(xv[i], yv[i]);
    in.accumulate(d);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Mat y = a.value() * b.value();
  return make_result(std::move(y), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
  });
}

Var transpose(const Var& x) {
  Mat y = x.value().transpose();
  return make_result(std::move(y), {x}, [](Node& n) {
    Node& in = parent(n, 0);
    if (in.requires_grad) in.accumulate(n.grad.transpose());
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  if (x.cols() != w.rows() || bias.rows() != 1 || bias.cols() != w.cols()) {
    throw std::invalid_argument("linear: incompatible shapes");
  }
  Mat y = x.value() * w.value();
  y.rowwise() += bias.value().row(0);
  return make_result(std::move(y), {x, w, bias}, [](Node& n) {
    Node& px = parent(n, 0);
    Node& pw = parent(n, 1);
    Node& pb = parent(n, 2);
    if (px.requires_grad) px.accumulate(n.grad * pw.value.transpose());
    if (pw.requires_grad) pw.accumulate(px.value.transpose() * n.grad);
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& n) {
    for (int i = 0; i < 2; ++i) {
      if (parent(n, i).requires_grad) parent(n, i).accumulate(n.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& n) {
    if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad);
    if (parent(n, 1).requires_grad) parent(n, 1).accumulate(-n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double factor) {
  return make_result(a.value() * factor, {a}, [factor](Node& n) {
    if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad * factor);
  });
}

Var add_scalar(const Var& a, double value) {
  return make_result(a.value().array() + value, {a}, [](Node& n) {
    if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row");
  Mat y = a.value();
  y.rowwise() += row.value().row(0);
  return make_result(std::move(y), {a, row}, [](Node& n) {
    if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad);
    if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad.colwise().sum());
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("mul_scalar: not a scalar");
  return make_result(a.value() * s.item(), {a, s}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& ps = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad * ps.value(0, 0));
    if (ps.requires_grad) {
      Mat d(1, 1);
      d(0, 0) = n.grad.cwiseProduct(pa.value).sum();
      ps.accumulate(d);
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var gelu(const Var& x) {
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return sigmoid_scalar(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(const Var& x) {
  Mat y(1, 1);
  y(0, 0) = x.value().sum();
  return make_result(std::move(y), {x}, [](Node& n) {
    Node& in = parent(n, 0);
    if (in.requires_grad) in.accumulate(Mat::Constant(in.value.rows(), in.value.cols(), n.grad(0, 0)));
  });
}

Var mean(const Var& x) {
  const double count = static_cast<double>(x.value().size());
  Mat y(1, 1);
  y(0, 0) = x.value().sum() / count;
  return make_result(std::move(y), {x}, [count](Node& n) {
    Node& in = parent(n, 0);
    if (in.requires_grad) {
      in.accumulate(Mat::Constant(in.value.rows(), in.value.cols(), n.grad(0, 0) / count));
    }
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const double count = static_cast<double>(a.value().size());
  Mat y(1, 1);
  y(0, 0) = (a.value() - b.value()).squaredNorm() / count;
  return make_result(std::move(y), {a, b}, [count](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    const double g = n.grad(0, 0) * 2.0 / count;
    if (pa.requires_grad) pa.accumulate((pa.value - pb.value) * g);
    if (pb.requires_grad) pb.accumulate((pb.value - pa.value) * g);
  });
}

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Mat y = Eigen::Map<const Mat>(x.value().data(), rows, cols);
  return make_result(std::move(y), {x}, [](Node& n) {
    Node& in = parent(n, 0);
    if (in.requires_grad) {
      in.accumulate(Eigen::Map<const Mat>(n.grad.data(), in.value.rows(), in.value.cols()));
    }
  });
}

Var gather(const Var& x, const IndexMap& map, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(map->size()) != rows * cols) {
    throw std::invalid_argument("gather: index map size mismatch");
  }
  Mat y(rows, cols);
  const double* src = x.value().data();
  double* dst = y.data();
  const std::int32_t* idx = map->data();
  const Eigen::Index total = rows * cols;
  for (Eigen::Index k = 0; k < total; ++k) dst[k] = idx[k] >= 0 ? src[idx[k]] : 0.0;
  return make_result(std::move(y), {x}, [map](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d = Mat::Zero(in.value.rows(), in.value.cols());
    double* out = d.data();
    const double* g = n.grad.data();
    const std::int32_t* ix = map->data();
    const std::size_t count = map->size();
    for (std::size_t k = 0; k < count; ++k) {
      if (ix[k] >= 0) out[ix[k]] += g[k];
    }
    in.accumulate(d);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  Mat y(a.rows(), a.cols() + b.cols());
  y << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return make_result(std::move(y), {a, b}, [ca, cb](Node& n) {
    if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad.leftCols(ca));
    if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad.rightCols(cb));
  });
}

Var concat_rows(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column mismatch");
  Mat y(a.rows() + b.rows(), a.cols());
  y << a.value(), b.value();
  const Eigen::Index ra = a.rows();
  const Eigen::Index rb = b.rows();
  return make_result(std::move(y), {a, b}, [ra, rb](Node& n) {
    if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad.topRows(ra));
    if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad.bottomRows(rb));
  });
}

Var slice_rows(const Var& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || begin + count > x.rows()) throw std::invalid_argument("slice_rows: range");
  Mat y = x.value().middleRows(begin, count);
  return make_result(std::move(y), {x}, [begin, count](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d = Mat::Zero(in.value.rows(), in.value.cols());
    d.middleRows(begin, count) = n.grad;
    in.accumulate(d);
  });
}

Var repeat_rows(const Var& x, Eigen::Index times) {
  Mat y(x.rows() * times, x.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) = x.value().row(r / times);
  return make_result(std::move(y), {x}, [times](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d = Mat::Zero(in.value.rows(), in.value.cols());
    for (Eigen::Index r = 0; r < n.grad.rows(); ++r) d.row(r / times) += n.grad.row(r);
    in.accumulate(d);
  });
}

Var group_mean_rows(const Var& x, Eigen::Index group) {
  if (group <= 0 || x.rows() % group != 0) throw std::invalid_argument("group_mean_rows: group");
  const Eigen::Index groups = x.rows() / group;
  Mat y(groups, x.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    y.row(g) = x.value().middleRows(g * group, group).colwise().sum() / static_cast<double>(group);
  }
  return make_result(std::move(y), {x}, [group](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d(in.value.rows(), in.value.cols());
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      d.row(r) = n.grad.row(r / group) / static_cast<double>(group);
    }
    in.accumulate(d);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  if (gamma.cols() != cols || beta.cols() != cols) throw std::invalid_argument("layer_norm");
  auto xhat = std::make_shared<Mat>(rows, cols);
  auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
  Mat y(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (row.array() - mu) * is;
    y.row(r) = xhat->row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return make_result(std::move(y), {x, gamma, beta}, [xhat, inv_std](Node& n) {
    Node& px = parent(n, 0);
    Node& pg = parent(n, 1);
    Node& pb = parent(n, 2);
    if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(*xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
    if (!px.requires_grad) return;
    const Eigen::Index cols_n = n.grad.cols();
    Mat d(n.grad.rows(), cols_n);
    for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
      const Eigen::RowVectorXd dxhat = n.grad.row(r).cwiseProduct(pg.value.row(0));
      const double s1 = dxhat.sum();
      const double s2 = dxhat.dot(xhat->row(r));
      d.row(r) = ((*inv_std)(r) / static_cast<double>(cols_n)) *
                 (static_cast<double>(cols_n) * dxhat.array() - s1 - xhat->row(r).array() * s2).matrix();
    }
    px.accumulate(d);
  });
}

Var normalize_rows(const Var& x, double eps) {
  auto norms = std::make_shared<Eigen::VectorXd>(x.rows());
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    (*norms)(r) = std::sqrt(x.value().row(r).squaredNorm() + eps);
    y.row(r) = x.value().row(r) / (*norms)(r);
  }
  return make_result(std::move(y), {x}, [norms](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d(in.value.rows(), in.value.cols());
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      const double nr = (*norms)(r);
      const double dot = in.value.row(r).dot(n.grad.row(r));
      d.row(r) = n.grad.row(r) / nr - in.value.row(r) * (dot / (nr * nr * nr));
    }
    in.accumulate(d);
  });
}

Var row_dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "row_dot");
  Mat y = a.value().cwiseProduct(b.value()).rowwise().sum();
  return make_result(std::move(y), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate((pb.value.array().colwise() * n.grad.col(0).array()).matrix());
    if (pb.requires_grad) pb.accumulate((pa.value.array().colwise() * n.grad.col(0).array()).matrix());
  });
}

Var attention(const Var& qkv, int batch, int tokens, int heads) {
  const Eigen::Index width = qkv.cols() / 3;
  if (qkv.cols() != 3 * width || width % heads != 0 || qkv.rows() != batch * tokens) {
    throw std::invalid_argument("attention: bad qkv shape");
  }
  const Eigen::Index dh = width / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(batch * heads));
  Mat y(qkv.rows(), width);
  const Mat& v = qkv.value();
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto q = v.block(b * tokens, h * dh, tokens, dh);
      const auto k = v.block(b * tokens, width + h * dh, tokens, dh);
      const auto val = v.block(b * tokens, 2 * width + h * dh, tokens, dh);
      Mat s = (q * k.transpose()) * scale_factor;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      y.block(b * tokens, h * dh, tokens, dh) = s * val;
      (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  }
  return make_result(std::move(y), {qkv}, [probs, batch, tokens, heads, width, dh,
                                           scale_factor](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d = Mat::Zero(in.value.rows(), in.value.cols());
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Mat& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
        const auto q = in.value.block(b * tokens, h * dh, tokens, dh);
        const auto k = in.value.block(b * tokens, width + h * dh, tokens, dh);
        const auto val = in.value.block(b * tokens, 2 * width + h * dh, tokens, dh);
        const auto go = n.grad.block(b * tokens, h * dh, tokens, dh);
        d.block(b * tokens, 2 * width + h * dh, tokens, dh) += p.transpose() * go;
        Mat dp = go * val.transpose();
        const Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
        Mat ds = p.cwiseProduct((dp.colwise() - rowdot));
        ds *= scale_factor;
        d.block(b * tokens, h * dh, tokens, dh) += ds * k;
        d.block(b * tokens, width + h * dh, tokens, dh) += ds.transpose() * q;
      }
    }
    in.accumulate(d);
  });
}

Var bce_with_logits(const Var& logits, const Mat& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw std::invalid_argument("bce_with_logits: target shape");
  }
  const double count = static_cast<double>(logits.value().size());
  double total = 0.0;
  const double* x = logits.value().data();
  const double* t = targets.data();
  for (Eigen::Index i = 0; i < logits.value().size(); ++i) {
    total += std::max(x[i], 0.0) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  Mat y(1, 1);
  y(0, 0) = total / count;
  auto tgt = std::make_shared<Mat>(targets);
  return make_result(std::move(y), {logits}, [tgt, count](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d = in.value.unaryExpr([](double v) { return sigmoid_scalar(v); }) - *tgt;
    in.accumulate(d * (n.grad(0, 0) / count));
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("cross_entropy: target count");
  }
  auto probs = std::make_shared<Mat>(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.value().row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.value().row(r).array() - m).exp();
    const double z = e.sum();
    probs->row(r) = e / z;
    total -= logits.value()(r, targets[static_cast<std::size_t>(r)]) - m - std::log(z);
  }
  const double count = static_cast<double>(logits.rows());
  Mat y(1, 1);
  y(0, 0) = total / count;
  return make_result(std::move(y), {logits}, [probs, targets, count](Node& n) {
    Node& in = parent(n, 0);
    if (!in.requires_grad) return;
    Mat d = *probs;
    for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
    in.accumulate(d * (n.grad(0, 0) / count));
  });
}

IndexMap im2col_map(int batch, int height, int width, int channels, int kernel, int stride,
                    int pad) {
  const int out_h = (height + 2 * pad - kernel) / stride + 1;
  const int out_w = (width + 2 * pad - kernel) / stride + 1;
  const int cols = kernel * kernel * channels;
  auto map = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(batch) * out_h * out_w * cols);
  std::size_t k = 0;
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            const int iy = oy * stride + ky - pad;
            const int ix = ox * stride + kx - pad;
            const bool inside = iy >= 0 && iy < height && ix >= 0 && ix < width;
            for (int c = 0; c < channels; ++c) {
              (*map)[k++] = inside ? ((b * height + iy) * width + ix) * channels + c : -1;
            }
          }
        }
      }
    }
  }
  return map;
}

IndexMap patchify_map(int batch, int height, int width, int channels, int patch) {
  if (height % patch != 0 || width % patch != 0) {
    throw std::invalid_argument("patchify: size not divisible by patch");
  }
  const int ph = height / patch;
  const int pw = width / patch;
  auto map = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(batch) * height * width * channels);
  std::size_t k = 0;
  for (int b = 0; b < batch; ++b) {
    for (int py = 0; py < ph; ++py) {
      for (int px = 0; px < pw; ++px) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) {
            for (int c = 0; c < channels; ++c) {
              (*map)[k++] =
                  ((b * height + py * patch + dy) * width + px * patch + dx) * channels + c;
            }
          }
        }
      }
    }
  }
  return map;
}

IndexMap unpatchify_map(int batch, int height, int width, int channels, int patch) {
  if (height % patch != 0 || width % patch != 0) {
    throw std::invalid_argument("unpatchify: size not divisible by patch");
  }
  const int pw = width / patch;
  const int row_width = patch * patch * channels;
  const int patches_per_image = (height / patch) * pw;
  auto map = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(batch) * height * width * channels);
  std::size_t k = 0;
  for (int b = 0; b < batch; ++b) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const int row = b * patches_per_image + (y / patch) * pw + x / patch;
        const int col = ((y % patch) * patch + x % patch) * channels;
        for (int c = 0; c < channels; ++c) (*map)[k++] = row * row_width + col + c;
      }
    }
  }
  return map;
}

}  // namespace regionedit::nn
