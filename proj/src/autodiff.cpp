#include "seizurecast/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "seizurecast/error.hpp"

namespace seizurecast::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, ho, wo;
  Conv2dOptions opt;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

// col[(c*kh + i)*kw + j, oy*wo + ox] = x[c, oy*sh - ph + i, ox*sw - pw + j]
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride_h + i) - static_cast<std::ptrdiff_t>(g.opt.pad_h);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.opt.stride_w + j) - static_cast<std::ptrdiff_t>(g.opt.pad_w);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* dxc = dx + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride_h + i) - static_cast<std::ptrdiff_t>(g.opt.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = dxc + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.opt.stride_w + j) - static_cast<std::ptrdiff_t>(g.opt.pad_w);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Stride-1 convolution as a correlation over zero-padded planes:
//   out[o, y, x] += sum_{c,i,j} w[o, c, i, j] * in[c, y + i, x + j]
// Eight output columns are accumulated in registers across the whole kernel,
// so each output row is loaded and stored once per filter.
constexpr std::size_t kLanes = 8;
using Lanes = double __attribute__((vector_size(kLanes * sizeof(double))));

inline Lanes load_lanes(const double* p) {
  Lanes v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

struct Plane {
  std::size_t channels, rows, cols;
};

// Computes filters [o0, o0 + F) for columns [x0, x0 + B * kLanes) of one
// output row; F * B independent accumulators hide the FMA latency.
template <std::size_t F, std::size_t B>
void correlate_tile(const double* in, const Plane& ip, const double* w, std::size_t o0, std::size_t kh, std::size_t kw,
                    std::size_t y, std::size_t x0, std::size_t ho, std::size_t wo, double* out) {
  Lanes acc[F][B] = {};
  const std::size_t wstride = ip.channels * kh * kw;
  for (std::size_t c = 0; c < ip.channels; ++c) {
    const double* wk = w + (o0 * ip.channels + c) * kh * kw;
    for (std::size_t i = 0; i < kh; ++i) {
      const double* irow = in + (c * ip.rows + y + i) * ip.cols + x0;
      for (std::size_t j = 0; j < kw; ++j) {
        Lanes xv[B];
        for (std::size_t b = 0; b < B; ++b) xv[b] = load_lanes(irow + j + b * kLanes);
        for (std::size_t f = 0; f < F; ++f) {
          const double wv = wk[f * wstride + i * kw + j];
          for (std::size_t b = 0; b < B; ++b) acc[f][b] += wv * xv[b];
        }
      }
    }
  }
  for (std::size_t f = 0; f < F; ++f) {
    double* orow = out + ((o0 + f) * ho + y) * wo;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t xb = x0 + b * kLanes;
      if (xb >= wo) break;
      const std::size_t n = std::min(kLanes, wo - xb);
      for (std::size_t l = 0; l < n; ++l) orow[xb + l] += acc[f][b][l];
    }
  }
}

constexpr std::size_t kTileCols = 2 * kLanes;

// ip.cols must be at least round_up(wo, kTileCols) + kw - 1.
void correlate(const double* in, const Plane& ip, const double* w, std::size_t cout, std::size_t kh, std::size_t kw,
               std::size_t ho, std::size_t wo, double* out) {
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t x0 = 0; x0 < wo; x0 += kTileCols) {
      std::size_t o = 0;
      for (; o + 4 <= cout; o += 4) correlate_tile<4, 2>(in, ip, w, o, kh, kw, y, x0, ho, wo, out);
      for (; o < cout; ++o) correlate_tile<1, 2>(in, ip, w, o, kh, kw, y, x0, ho, wo, out);
    }
  }
}

// Copies [channels x rows x cols] into a zeroed padded buffer at (top, left).
void pad_planes(const double* src, std::size_t channels, std::size_t rows, std::size_t cols, const Plane& dst_shape,
                std::size_t top, std::size_t left, std::vector<double>& dst) {
  dst.assign(dst_shape.channels * dst_shape.rows * dst_shape.cols, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = src + (c * rows + r) * cols;
      std::copy(s, s + cols, dst.data() + (c * dst_shape.rows + r + top) * dst_shape.cols + left);
    }
  }
}

void conv_direct_forward(const double* x, const double* w, const double* bias, const ConvGeometry& g, double* out) {
  thread_local std::vector<double> xpad;
  const Plane ip{g.cin, g.h + 2 * g.opt.pad_h, round_up(g.wo, kTileCols) + g.kw - 1};
  pad_planes(x, g.cin, g.h, g.w, ip, g.opt.pad_h, g.opt.pad_w, xpad);
  for (std::size_t o = 0; o < g.cout; ++o) std::fill(out + o * g.ho * g.wo, out + (o + 1) * g.ho * g.wo, bias[o]);
  correlate(xpad.data(), ip, w, g.cout, g.kh, g.kw, g.ho, g.wo, out);
}

// dw[o, c, i, j] += sum_{y,x} gpad[o, y, x] * xpad[c, y + i, x + j] for
// filters [o0, o0 + F) and taps [j0, j0 + J); gpad is zero beyond wo.
template <std::size_t F, std::size_t J>
void kernel_grad_tile(const double* gpad, const Plane& gp, const double* xpad, const Plane& ip, const ConvGeometry& g,
                      std::size_t o0, std::size_t c, std::size_t i, std::size_t j0, double* dw) {
  Lanes acc[F][J] = {};
  for (std::size_t y = 0; y < g.ho; ++y) {
    const double* xrow = xpad + (c * ip.rows + y + i) * ip.cols + j0;
    for (std::size_t x0 = 0; x0 < gp.cols; x0 += kLanes) {
      Lanes gv[F];
      for (std::size_t f = 0; f < F; ++f) gv[f] = load_lanes(gpad + ((o0 + f) * gp.rows + y) * gp.cols + x0);
      for (std::size_t jj = 0; jj < J; ++jj) {
        const Lanes xv = load_lanes(xrow + x0 + jj);
        for (std::size_t f = 0; f < F; ++f) acc[f][jj] += gv[f] * xv;
      }
    }
  }
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t jj = 0; jj < J; ++jj) {
      double s = 0.0;
      for (std::size_t l = 0; l < kLanes; ++l) s += acc[f][jj][l];
      dw[(((o0 + f) * g.cin + c) * g.kh + i) * g.kw + j0 + jj] += s;
    }
  }
}

template <std::size_t F>
void kernel_grad_row(const double* gpad, const Plane& gp, const double* xpad, const Plane& ip, const ConvGeometry& g,
                     std::size_t o0, std::size_t c, std::size_t i, double* dw) {
  std::size_t j = 0;
  for (; j + 4 <= g.kw; j += 4) kernel_grad_tile<F, 4>(gpad, gp, xpad, ip, g, o0, c, i, j, dw);
  for (; j < g.kw; ++j) kernel_grad_tile<F, 1>(gpad, gp, xpad, ip, g, o0, c, i, j, dw);
}

void conv_direct_backward(const double* x, const double* w, const double* gy, const ConvGeometry& g, double* dx,
                          double* dw) {
  if (dw) {
    thread_local std::vector<double> xpad, gpad;
    const Plane ip{g.cin, g.h + 2 * g.opt.pad_h, round_up(g.wo, kTileCols) + g.kw - 1};
    pad_planes(x, g.cin, g.h, g.w, ip, g.opt.pad_h, g.opt.pad_w, xpad);
    const Plane gp{g.cout, g.ho, round_up(g.wo, kLanes)};
    pad_planes(gy, g.cout, g.ho, g.wo, gp, 0, 0, gpad);
    for (std::size_t c = 0; c < g.cin; ++c) {
      for (std::size_t i = 0; i < g.kh; ++i) {
        std::size_t o = 0;
        for (; o + 2 <= g.cout; o += 2) kernel_grad_row<2>(gpad.data(), gp, xpad.data(), ip, g, o, c, i, dw);
        for (; o < g.cout; ++o) kernel_grad_row<1>(gpad.data(), gp, xpad.data(), ip, g, o, c, i, dw);
      }
    }
  }
  if (dx) {
    // dx[c, y, x] = sum_{o,i,j} w[o, c, kh-1-i, kw-1-j] * gpad[o, y + i, x + j]
    thread_local std::vector<double> gpad, wflip;
    const std::size_t top = g.kh - 1 - g.opt.pad_h, left = g.kw - 1 - g.opt.pad_w;
    const Plane gp{g.cout, g.h + g.kh - 1, round_up(g.w, kTileCols) + g.kw - 1};
    pad_planes(gy, g.cout, g.ho, g.wo, gp, top, left, gpad);
    wflip.resize(g.cin * g.cout * g.kh * g.kw);
    for (std::size_t o = 0; o < g.cout; ++o) {
      for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
          for (std::size_t j = 0; j < g.kw; ++j) {
            wflip[((c * g.cout + o) * g.kh + i) * g.kw + j] =
                w[((o * g.cin + c) * g.kh + (g.kh - 1 - i)) * g.kw + (g.kw - 1 - j)];
          }
        }
      }
    }
    correlate(gpad.data(), gp, wflip.data(), g.cin, g.kh, g.kw, g.h, g.w, dx);
  }
}

std::vector<double>& scratch(std::size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

std::vector<double>& scratch2(std::size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

}  // namespace

Parameter& ParameterStore::add(std::string name, Shape shape) {
  require(!contains(name), "duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = Tensor(shape);
  p->grad = Tensor(shape);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Parameter& ParameterStore::get(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::parameter(Parameter& p) {
  Var v = push(p.value, true);
  nodes_.back().param = &p;
  return v;
}

Var Tape::push(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, nullptr, requires_grad});
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty() && !n.value.empty()) n.grad = zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  require(value(loss).size() == 1, "backward needs a scalar loss");
  grad_buffer(loss).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this);
    if (n.param) {
      auto& dst = n.param->grad.storage();
      const auto& src = nodes_[i].grad.storage();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

Var conv2d(Tape& t, Var x, Var w, Var b, const Conv2dOptions& opt) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require(xv.rank() == 4, "conv2d input must be [B x C x H x W], got " + shape_string(xv.shape()));
  require(wv.rank() == 4, "conv2d kernel must be [Cout x Cin x kh x kw]");
  require(opt.stride_h > 0 && opt.stride_w > 0, "conv2d stride must be positive");
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), 0, 0, opt};
  require(wv.dim(1) == g.cin, "conv2d channel mismatch: input " + shape_string(xv.shape()) + ", kernel " +
                                  shape_string(wv.shape()));
  require(t.value(b).size() == g.cout, "conv2d bias size mismatch");
  require(g.kh <= g.h + 2 * opt.pad_h && g.kw <= g.w + 2 * opt.pad_w, "conv2d kernel larger than padded input");
  g.ho = (g.h + 2 * opt.pad_h - g.kh) / opt.stride_h + 1;
  g.wo = (g.w + 2 * opt.pad_w - g.kw) / opt.stride_w + 1;

  const std::size_t k = g.k(), p = g.p();
  Tensor out({g.batch, g.cout, g.ho, g.wo});
  const bool direct = opt.stride_h == 1 && opt.stride_w == 1 && opt.pad_h < g.kh && opt.pad_w < g.kw;
  auto& col = scratch(direct ? 0 : k * p);
  ConstMapMat wm(wv.data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(k));
  Eigen::Map<const Eigen::VectorXd> bias(t.value(b).data(), static_cast<Eigen::Index>(g.cout));
  for (std::size_t n = 0; n < g.batch; ++n) {
    if (direct) {
      conv_direct_forward(xv.data() + n * g.cin * g.h * g.w, wv.data(), t.value(b).data(), g,
                          out.data() + n * g.cout * p);
      continue;
    }
    im2col(xv.data() + n * g.cin * g.h * g.w, g, col.data());
    ConstMapMat cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    MapMat om(out.data() + n * g.cout * p, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(p));
    om.noalias() = wm * cm;
    om.colwise() += bias;
  }

  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, w, b, y, g](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      const Tensor& xv2 = tp.value(x);
      const std::size_t k2 = g.k(), p2 = g.p();
      const bool direct2 = g.opt.stride_h == 1 && g.opt.stride_w == 1 && g.opt.pad_h < g.kh && g.opt.pad_w < g.kw;
      auto& col2 = scratch(direct2 ? 0 : k2 * p2);
      auto& dcol = scratch2(direct2 ? 0 : k2 * p2);
      ConstMapMat wm2(tp.value(w).data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(k2));
      const bool need_x = tp.requires_grad(x);
      const bool need_w = tp.requires_grad(w);
      double* dx = need_x ? tp.grad_buffer(x).data() : nullptr;
      double* dw = need_w ? tp.grad_buffer(w).data() : nullptr;
      Tensor& db = tp.grad_buffer(b);
      for (std::size_t n = 0; n < g.batch; ++n) {
        ConstMapMat gm(gy.data() + n * g.cout * p2, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(p2));
        if (tp.requires_grad(b)) {
          for (std::size_t o = 0; o < g.cout; ++o) db[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
        }
        if (direct2) {
          conv_direct_backward(xv2.data() + n * g.cin * g.h * g.w, tp.value(w).data(), gm.data(), g,
                               need_x ? dx + n * g.cin * g.h * g.w : nullptr, dw);
          continue;
        }
        if (need_w) {
          im2col(xv2.data() + n * g.cin * g.h * g.w, g, col2.data());
          ConstMapMat cm(col2.data(), static_cast<Eigen::Index>(k2), static_cast<Eigen::Index>(p2));
          MapMat dwm(dw, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(k2));
          dwm.noalias() += gm * cm.transpose();
        }
        if (need_x) {
          MapMat dcm(dcol.data(), static_cast<Eigen::Index>(k2), static_cast<Eigen::Index>(p2));
          dcm.noalias() = wm2.transpose() * gm;
          col2im_add(dcol.data(), g, dx + n * g.cin * g.h * g.w);
        }
      }
    });
  }
  return y;
}

Var max_pool2d(Tape& t, Var x, std::size_t kh, std::size_t kw) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 4, "max_pool2d input must be [B x C x H x W]");
  require(kh > 0 && kw > 0, "max_pool2d kernel must be positive");
  const std::size_t nb = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t ho = h / kh, wo = w / kw;
  require(ho > 0 && wo > 0, "max_pool2d kernel larger than input " + shape_string(xv.shape()));
  Tensor out({nb, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < nb * c; ++plane) {
    const double* src = xv.data() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * kh) * w + ox * kw;
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t idx = (oy * kh + i) * w + ox * kw + j;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = plane * ho * wo + oy * wo + ox;
        out[o] = src[best];
        argmax[o] = plane * h * w + best;
      }
    }
  }
  const bool rg = t.requires_grad(x);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, y, argmax = std::move(argmax)](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += gy[o];
    });
  }
  return y;
}

Var dense(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require(xv.rank() == 2, "dense input must be [B x D], got " + shape_string(xv.shape()));
  require(wv.rank() == 2 && wv.dim(1) == xv.dim(1),
          "dense weight " + shape_string(wv.shape()) + " does not match input " + shape_string(xv.shape()));
  const auto nb = static_cast<Eigen::Index>(xv.dim(0));
  const auto in = static_cast<Eigen::Index>(xv.dim(1));
  const auto outn = static_cast<Eigen::Index>(wv.dim(0));
  require(t.value(b).size() == wv.dim(0), "dense bias size mismatch");
  Tensor out({xv.dim(0), wv.dim(0)});
  MapMat om(out.data(), nb, outn);
  om.noalias() = ConstMapMat(xv.data(), nb, in) * ConstMapMat(wv.data(), outn, in).transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(t.value(b).data(), outn);

  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, w, b, y, nb, in, outn](Tape& tp) {
      ConstMapMat gm(tp.grad(y).data(), nb, outn);
      if (tp.requires_grad(x)) {
        MapMat(tp.grad_buffer(x).data(), nb, in).noalias() += gm * ConstMapMat(tp.value(w).data(), outn, in);
      }
      if (tp.requires_grad(w)) {
        MapMat(tp.grad_buffer(w).data(), outn, in).noalias() += gm.transpose() * ConstMapMat(tp.value(x).data(), nb, in);
      }
      if (tp.requires_grad(b)) {
        Eigen::Map<Eigen::RowVectorXd>(tp.grad_buffer(b).data(), outn) += gm.colwise().sum();
      }
    });
  }
  return y;
}

Var relu(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const bool rg = t.requires_grad(x);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, y](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      const Tensor& xv = tp.value(x);
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += gy[i];
      }
    });
  }
  return y;
}

Var sigmoid(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.values()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  const bool rg = t.requires_grad(x);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, y](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      const Tensor& s = tp.value(y);
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * s[i] * (1.0 - s[i]);
    });
  }
  return y;
}

Var softmax(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "softmax expects [B x K]");
  const std::size_t nb = xv.dim(0), kk = xv.dim(1);
  Tensor out(xv.shape());
  for (std::size_t n = 0; n < nb; ++n) {
    const double* z = xv.data() + n * kk;
    double* q = out.data() + n * kk;
    const double m = *std::max_element(z, z + kk);
    double s = 0.0;
    for (std::size_t i = 0; i < kk; ++i) s += (q[i] = std::exp(z[i] - m));
    for (std::size_t i = 0; i < kk; ++i) q[i] /= s;
  }
  const bool rg = t.requires_grad(x);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, y, nb, kk](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      const Tensor& q = tp.value(y);
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t n = 0; n < nb; ++n) {
        double dot = 0.0;
        for (std::size_t i = 0; i < kk; ++i) dot += gy[n * kk + i] * q[n * kk + i];
        for (std::size_t i = 0; i < kk; ++i) gx[n * kk + i] += q[n * kk + i] * (gy[n * kk + i] - dot);
      }
    });
  }
  return y;
}

Var dropout(Tape& t, Var x, double p, Rng& rng, bool training) {
  require(p >= 0.0 && p < 1.0, "dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const Tensor& xv = t.value(x);
  std::vector<double> mask(xv.size());
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (double& m : mask) m = keep(rng) ? scale : 0.0;
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  const bool rg = t.requires_grad(x);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, y, mask = std::move(mask)](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
    });
  }
  return y;
}

Var flatten(Tape& t, Var x) {
  Tensor out = t.value(x);
  require(out.rank() >= 1, "flatten of a scalar");
  const std::size_t nb = out.dim(0);
  out.reshape({nb, nb ? out.size() / nb : 0});
  const bool rg = t.requires_grad(x);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [x, y](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

Var concat(Tape& t, std::span<const Var> xs) {
  require(!xs.empty(), "concat of nothing");
  const Tensor& first = t.value(xs[0]);
  require(first.rank() >= 2, "concat needs rank >= 2");
  const std::size_t nb = first.dim(0);
  std::size_t inner = 1;
  for (std::size_t a = 2; a < first.rank(); ++a) inner *= first.dim(a);
  std::size_t total_c = 0;
  bool rg = false;
  for (Var v : xs) {
    const Tensor& tv = t.value(v);
    require(tv.rank() == first.rank() && tv.dim(0) == nb, "concat batch/rank mismatch");
    for (std::size_t a = 2; a < first.rank(); ++a) require(tv.dim(a) == first.dim(a), "concat trailing shape mismatch");
    total_c += tv.dim(1);
    rg = rg || t.requires_grad(v);
  }
  Shape shape = first.shape();
  shape[1] = total_c;
  Tensor out(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var v : xs) {
    const Tensor& tv = t.value(v);
    offsets.push_back(off);
    const std::size_t block = tv.dim(1) * inner;
    for (std::size_t n = 0; n < nb; ++n) {
      std::copy(tv.data() + n * block, tv.data() + (n + 1) * block, out.data() + n * total_c * inner + off * inner);
    }
    off += tv.dim(1);
  }
  Var y = t.push(std::move(out), rg);
  if (rg) {
    std::vector<Var> inputs(xs.begin(), xs.end());
    t.set_backward(y, [inputs, offsets, y, nb, inner, total_c](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!tp.requires_grad(inputs[k])) continue;
        Tensor& gx = tp.grad_buffer(inputs[k]);
        const std::size_t block = gx.dim(1) * inner;
        for (std::size_t n = 0; n < nb; ++n) {
          const double* src = gy.data() + n * total_c * inner + offsets[k] * inner;
          double* dst = gx.data() + n * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

Var l2_distance(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rank() == 2 && av.shape() == bv.shape(), "l2_distance needs two equal [B x D] tensors");
  const std::size_t nb = av.dim(0), d = av.dim(1);
  Tensor out({nb});
  for (std::size_t n = 0; n < nb; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = av[n * d + i] - bv[n * d + i];
      s += diff * diff;
    }
    out[n] = std::sqrt(s);
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var y = t.push(std::move(out), rg);
  if (rg) {
    t.set_backward(y, [a, b, y, nb, d](Tape& tp) {
      const Tensor& gy = tp.grad(y);
      const Tensor& dist = tp.value(y);
      const Tensor& av2 = tp.value(a);
      const Tensor& bv2 = tp.value(b);
      Tensor* ga = tp.requires_grad(a) ? &tp.grad_buffer(a) : nullptr;
      Tensor* gb = tp.requires_grad(b) ? &tp.grad_buffer(b) : nullptr;
      for (std::size_t n = 0; n < nb; ++n) {
        if (dist[n] == 0.0) continue;
        const double s = gy[n] / dist[n];
        for (std::size_t i = 0; i < d; ++i) {
          const double g = s * (av2[n * d + i] - bv2[n * d + i]);
          if (ga) (*ga)[n * d + i] += g;
          if (gb) (*gb)[n * d + i] -= g;
        }
      }
    });
  }
  return y;
}

double bce(double p, double y) {
  const double pc = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

double cce(std::span<const double> q, std::size_t y) {
  if (y >= q.size()) throw std::out_of_range("class id " + std::to_string(y) + " outside [0," + std::to_string(q.size()) + ")");
  return -std::log(std::clamp(q[y], kProbabilityClamp, 1.0 - kProbabilityClamp));
}

double contrastive(double d, int same, double margin) {
  if (d < 0.0) throw std::invalid_argument("contrastive loss needs a non-negative distance");
  const double y = same ? 1.0 : 0.0;
  return y * d * d + (1.0 - y) * std::max(margin - d, 0.0);
}

Var bce_loss(Tape& t, Var p, std::span<const double> y) {
  const Tensor& pv = t.value(p);
  require(pv.size() == y.size() && !y.empty(), "bce_loss: prediction/label count mismatch");
  const auto nb = static_cast<double>(y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += bce(pv[i], y[i]);
  const bool rg = t.requires_grad(p);
  Var out = t.push(Tensor({1}, {s / nb}), rg);
  if (rg) {
    std::vector<double> labels(y.begin(), y.end());
    t.set_backward(out, [p, out, labels, nb](Tape& tp) {
      const double g = tp.grad(out)[0];
      const Tensor& pv2 = tp.value(p);
      Tensor& gp = tp.grad_buffer(p);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const double pc = std::clamp(pv2[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        gp[i] += g * (-labels[i] / pc + (1.0 - labels[i]) / (1.0 - pc)) / nb;
      }
    });
  }
  return out;
}

Var cce_loss(Tape& t, Var q, std::span<const int> y) {
  const Tensor& qv = t.value(q);
  require(qv.rank() == 2 && qv.dim(0) == y.size() && !y.empty(), "cce_loss: prediction/label count mismatch");
  const std::size_t kk = qv.dim(1);
  const auto nb = static_cast<double>(y.size());
  double s = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) {
    if (y[n] < 0 || static_cast<std::size_t>(y[n]) >= kk) {
      throw std::out_of_range("class id " + std::to_string(y[n]) + " outside [0," + std::to_string(kk) + ")");
    }
    s += cce(qv.slice(n), static_cast<std::size_t>(y[n]));
  }
  const bool rg = t.requires_grad(q);
  Var out = t.push(Tensor({1}, {s / nb}), rg);
  if (rg) {
    std::vector<int> labels(y.begin(), y.end());
    t.set_backward(out, [q, out, labels, nb, kk](Tape& tp) {
      const double g = tp.grad(out)[0];
      const Tensor& qv2 = tp.value(q);
      Tensor& gq = tp.grad_buffer(q);
      for (std::size_t n = 0; n < labels.size(); ++n) {
        const std::size_t idx = n * kk + static_cast<std::size_t>(labels[n]);
        const double qc = std::clamp(qv2[idx], kProbabilityClamp, 1.0 - kProbabilityClamp);
        gq[idx] += -g / (qc * nb);
      }
    });
  }
  return out;
}

Var contrastive_loss(Tape& t, Var d, std::span<const int> same, double margin) {
  const Tensor& dv = t.value(d);
  require(dv.size() == same.size() && !same.empty(), "contrastive_loss: distance/label count mismatch");
  const auto nb = static_cast<double>(same.size());
  double s = 0.0;
  for (std::size_t i = 0; i < same.size(); ++i) s += contrastive(dv[i], same[i], margin);
  const bool rg = t.requires_grad(d);
  Var out = t.push(Tensor({1}, {s / nb}), rg);
  if (rg) {
    std::vector<int> flags(same.begin(), same.end());
    t.set_backward(out, [d, out, flags, nb, margin](Tape& tp) {
      const double g = tp.grad(out)[0];
      const Tensor& dv2 = tp.value(d);
      Tensor& gd = tp.grad_buffer(d);
      for (std::size_t i = 0; i < flags.size(); ++i) {
        double dl = 0.0;
        if (flags[i]) {
          dl = 2.0 * dv2[i];
        } else if (dv2[i] < margin) {
          dl = -1.0;
        }
        gd[i] += g * dl / nb;
      }
    });
  }
  return out;
}

Var weighted_sum(Tape& t, std::span<const Var> xs, std::span<const double> weights) {
  require(xs.size() == weights.size() && !xs.empty(), "weighted_sum: term/weight count mismatch");
  double s = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(t.value(xs[i]).size() == 1, "weighted_sum terms must be scalars");
    s += weights[i] * t.value(xs[i])[0];
    rg = rg || t.requires_grad(xs[i]);
  }
  Var out = t.push(Tensor({1}, {s}), rg);
  if (rg) {
    std::vector<Var> terms(xs.begin(), xs.end());
    std::vector<double> w(weights.begin(), weights.end());
    t.set_backward(out, [terms, w, out](Tape& tp) {
      const double g = tp.grad(out)[0];
      for (std::size_t i = 0; i < terms.size(); ++i) {
        if (tp.requires_grad(terms[i])) tp.grad_buffer(terms[i])[0] += g * w[i];
      }
    });
  }
  return out;
}

}  // namespace seizurecast::nn
