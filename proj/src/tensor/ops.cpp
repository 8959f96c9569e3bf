#include "diffood/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace diffood::ops {

namespace {

template <typename T>
using NodeP = std::shared_ptr<detail::Node<T>>;
template <typename T>
using Node = detail::Node<T>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

bool is_suffix(const Shape& full, const Shape& suffix) {
    if (suffix.size() > full.size()) return false;
    return std::equal(suffix.begin(), suffix.end(), full.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

std::size_t product(const Shape& s, std::size_t from, std::size_t to) {
    std::size_t n = 1;
    for (std::size_t i = from; i < to; ++i) n *= s[i];
    return n;
}

void require(bool ok, const char* op, const Shape& a, const Shape& b, const std::string& detail) {
    if (!ok) throw ShapeError(op, a, b, detail);
}

enum class BinaryKind { Add, Sub, Mul };

template <typename T>
BasicTensor<T> binary(const char* op, BinaryKind kind, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require(is_suffix(a.shape(), b.shape()), op, a.shape(), b.shape(),
            "rhs must match lhs or be a trailing suffix of it");
    const std::size_t inner = b.numel();
    const std::size_t outer = a.numel() / inner;
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<T> out(a.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * inner;
        for (std::size_t i = 0; i < inner; ++i) {
            const T x = ad[base + i];
            const T y = bd[i];
            out[base + i] = kind == BinaryKind::Add ? x + y : kind == BinaryKind::Sub ? x - y : x * y;
        }
    }
    return detail::make_result<T>(op, a.shape(), std::move(out), {a.shared(), b.shared()},
                                  [kind, inner, outer](Node<T>& self) {
                                      auto& pa = *self.parents[0];
                                      auto& pb = *self.parents[1];
                                      auto* ga = detail::grad_of(pa);
                                      auto* gb = detail::grad_of(pb);
                                      const auto& g = self.grad;
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          const std::size_t base = o * inner;
                                          for (std::size_t i = 0; i < inner; ++i) {
                                              const T gi = g[base + i];
                                              switch (kind) {
                                                  case BinaryKind::Add:
                                                      if (ga) (*ga)[base + i] += gi;
                                                      if (gb) (*gb)[i] += gi;
                                                      break;
                                                  case BinaryKind::Sub:
                                                      if (ga) (*ga)[base + i] += gi;
                                                      if (gb) (*gb)[i] -= gi;
                                                      break;
                                                  case BinaryKind::Mul:
                                                      if (ga) (*ga)[base + i] += gi * pb.data[i];
                                                      if (gb) (*gb)[i] += gi * pa.data[base + i];
                                                      break;
                                              }
                                          }
                                      }
                                  });
}

// Maps each output element of a permutation to its source index.
std::vector<std::size_t> permutation_sources(const Shape& in, const std::vector<std::size_t>& perm, Shape& out) {
    const std::size_t rank = in.size();
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
    out.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) out[i] = in[perm[i]];
    const std::size_t n = shape_numel(in);
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t linear = 0; linear < n; ++linear) {
        std::size_t s = 0;
        for (std::size_t i = 0; i < rank; ++i) s += idx[i] * in_strides[perm[i]];
        src[linear] = s;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out[i]) break;
            idx[i] = 0;
        }
    }
    return src;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("add", BinaryKind::Add, a, b);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("sub", BinaryKind::Sub, a, b);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("mul", BinaryKind::Mul, a, b);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
    const T f = static_cast<T>(factor);
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= f;
    return detail::make_result<T>("scale", a.shape(), std::move(out), {a.shared()}, [f](Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += f * self.grad[i];
    });
}

template <typename T>
BasicTensor<T> scale_leading(const BasicTensor<T>& a, std::span<const double> factors) {
    require(a.rank() >= 1 && factors.size() == a.dim(0), "scale_leading", a.shape(), Shape{factors.size()},
            "one factor per leading slice required");
    const std::size_t inner = a.numel() / a.dim(0);
    std::vector<T> f(factors.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<T>(factors[i]);
    std::vector<T> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f[i / inner];
    return detail::make_result<T>("scale_leading", a.shape(), std::move(out), {a.shared()},
                                  [inner, f = std::move(f)](Node<T>& self) {
                                      auto& ga = self.parents[0]->grad;
                                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += f[i / inner] * self.grad[i];
                                  });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    require(as.size() >= 2 && bs.size() >= 2, "matmul", as, bs, "operands must have rank >= 2");
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as.back();
    require(bs[bs.size() - 2] == k, "matmul", as, bs, "inner extents differ");
    const std::size_t n = bs.back();

    if (bs.size() == 2) {
        // Shared right operand: one GEMM over all leading rows.
        const std::size_t rows = a.numel() / k;
        Shape out_shape = as;
        out_shape.back() = n;
        std::vector<T> out(rows * n);
        MMap<T>(out.data(), rows, n).noalias() = CMap<T>(a.data().data(), rows, k) * CMap<T>(b.data().data(), k, n);
        return detail::make_result<T>("matmul", std::move(out_shape), std::move(out), {a.shared(), b.shared()},
                                      [rows, k, n](Node<T>& self) {
                                          auto& pa = *self.parents[0];
                                          auto& pb = *self.parents[1];
                                          CMap<T> g(self.grad.data(), rows, n);
                                          if (pa.requires_grad) {
                                              MMap<T>(pa.grad.data(), rows, k).noalias() +=
                                                  g * CMap<T>(pb.data.data(), k, n).transpose();
                                          }
                                          if (pb.requires_grad) {
                                              MMap<T>(pb.grad.data(), k, n).noalias() +=
                                                  CMap<T>(pa.data.data(), rows, k).transpose() * g;
                                          }
                                      });
    }

    require(as.size() == bs.size() && std::equal(as.begin(), as.end() - 2, bs.begin()), "matmul", as, bs,
            "batched operands need identical leading extents");
    const std::size_t batch = product(as, 0, as.size() - 2);
    Shape out_shape = as;
    out_shape.back() = n;
    std::vector<T> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        MMap<T>(out.data() + i * m * n, m, n).noalias() =
            CMap<T>(a.data().data() + i * m * k, m, k) * CMap<T>(b.data().data() + i * k * n, k, n);
    }
    return detail::make_result<T>("matmul", std::move(out_shape), std::move(out), {a.shared(), b.shared()},
                                  [batch, m, k, n](Node<T>& self) {
                                      auto& pa = *self.parents[0];
                                      auto& pb = *self.parents[1];
                                      for (std::size_t i = 0; i < batch; ++i) {
                                          CMap<T> g(self.grad.data() + i * m * n, m, n);
                                          if (pa.requires_grad) {
                                              MMap<T>(pa.grad.data() + i * m * k, m, k).noalias() +=
                                                  g * CMap<T>(pb.data.data() + i * k * n, k, n).transpose();
                                          }
                                          if (pb.requires_grad) {
                                              MMap<T>(pb.grad.data() + i * k * n, k, n).noalias() +=
                                                  CMap<T>(pa.data.data() + i * m * k, m, k).transpose() * g;
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<std::size_t>& perm) {
    const Shape& in = a.shape();
    std::vector<std::size_t> check(perm);
    std::sort(check.begin(), check.end());
    std::vector<std::size_t> iota(in.size());
    std::iota(iota.begin(), iota.end(), 0);
    require(check == iota, "permute", in, Shape(perm.begin(), perm.end()), "not a permutation of the axes");
    Shape out_shape;
    auto src = permutation_sources(in, perm, out_shape);
    std::vector<T> out(src.size());
    const auto ad = a.data();
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = ad[src[i]];
    return detail::make_result<T>("permute", std::move(out_shape), std::move(out), {a.shared()},
                                  [src = std::move(src)](Node<T>& self) {
                                      auto& ga = self.parents[0]->grad;
                                      for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += self.grad[i];
                                  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a, std::size_t axis0, std::size_t axis1) {
    require(axis0 < a.rank() && axis1 < a.rank(), "transpose", a.shape(), Shape{axis0, axis1}, "axis out of range");
    std::vector<std::size_t> perm(a.rank());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[axis0], perm[axis1]);
    return permute(a, perm);
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    require(shape_numel(shape) == a.numel(), "reshape", a.shape(), shape, "element counts differ");
    std::vector<T> out(a.data().begin(), a.data().end());
    return detail::make_result<T>("reshape", std::move(shape), std::move(out), {a.shared()}, [](Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat", {}, {}, "no inputs");
    const Shape& first = parts.front().shape();
    require(axis < first.size(), "concat", first, Shape{axis}, "axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> chunk;  // contiguous block per outer index, per part
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
        require(ok, "concat", first, s, "extents differ off the concat axis");
        out_shape[axis] += s[axis];
        chunk.push_back(product(s, axis, s.size()));
    }
    const std::size_t outer = product(first, 0, axis);
    const std::size_t row = std::accumulate(chunk.begin(), chunk.end(), std::size_t{0});
    std::vector<T> out(outer * row);
    std::vector<NodeP<T>> parents;
    std::size_t offset = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
        const auto pd = parts[j].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pd.begin() + o * chunk[j], chunk[j], out.begin() + o * row + offset);
        }
        offset += chunk[j];
        parents.push_back(parts[j].shared());
    }
    return detail::make_result<T>("concat", std::move(out_shape), std::move(out), std::move(parents),
                                  [chunk, outer, row](Node<T>& self) {
                                      std::size_t off = 0;
                                      for (std::size_t j = 0; j < self.parents.size(); ++j) {
                                          auto* g = detail::grad_of(*self.parents[j]);
                                          if (g) {
                                              for (std::size_t o = 0; o < outer; ++o) {
                                                  for (std::size_t i = 0; i < chunk[j]; ++i) {
                                                      (*g)[o * chunk[j] + i] += self.grad[o * row + off + i];
                                                  }
                                              }
                                          }
                                          off += chunk[j];
                                      }
                                  });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a, std::size_t axis) {
    const Shape& s = a.shape();
    require(axis < s.size(), "softmax", s, Shape{axis}, "axis out of range");
    const std::size_t outer = product(s, 0, axis);
    const std::size_t len = s[axis];
    const std::size_t inner = product(s, axis + 1, s.size());
    const auto ad = a.data();
    std::vector<T> out(a.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = ad[base];
            for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, ad[base + i * inner]);
            double total = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const T e = std::exp(ad[base + i * inner] - mx);
                out[base + i * inner] = e;
                total += e;
            }
            const T inv = static_cast<T>(1.0 / total);
            for (std::size_t i = 0; i < len; ++i) out[base + i * inner] *= inv;
        }
    }
    return detail::make_result<T>("softmax", s, std::move(out), {a.shared()}, [outer, len, inner](Node<T>& self) {
        auto& ga = self.parents[0]->grad;
        const auto& y = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) dot += double(g[base + i * inner]) * y[base + i * inner];
                const T d = static_cast<T>(dot);
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t j = base + i * inner;
                    ga[j] += y[j] * (g[j] - d);
                }
            }
        }
    });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps) {
    const std::size_t d = x.shape().back();
    require(gamma.numel() == d && beta.numel() == d, "layer_norm", x.shape(), gamma.shape(),
            "gamma/beta must match the last axis");
    const std::size_t rows = x.numel() / d;
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    std::vector<T> out(x.numel());
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= double(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= double(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        rstd[r] = static_cast<T>(inv);
        for (std::size_t i = 0; i < d; ++i) {
            const T h = static_cast<T>((row[i] - mu) * inv);
            xhat[r * d + i] = h;
            out[r * d + i] = h * gd[i] + bd[i];
        }
    }
    return detail::make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x.shared(), gamma.shared(), beta.shared()},
        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto* gx = detail::grad_of(px);
            auto* gg = detail::grad_of(pg);
            auto* gb = detail::grad_of(*self.parents[2]);
            const auto& g = self.grad;
            std::vector<T> dxhat(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g.data() + r * d;
                const T* hr = xhat.data() + r * d;
                if (gg || gb) {
                    for (std::size_t i = 0; i < d; ++i) {
                        if (gg) (*gg)[i] += gr[i] * hr[i];
                        if (gb) (*gb)[i] += gr[i];
                    }
                }
                if (!gx) continue;
                double mean_d = 0.0;
                double mean_dh = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    dxhat[i] = gr[i] * pg.data[i];
                    mean_d += dxhat[i];
                    mean_dh += double(dxhat[i]) * hr[i];
                }
                mean_d /= double(d);
                mean_dh /= double(d);
                for (std::size_t i = 0; i < d; ++i) {
                    (*gx)[r * d + i] += static_cast<T>(rstd[r] * (dxhat[i] - mean_d - hr[i] * mean_dh));
                }
            }
        });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    std::vector<T> out(a.numel());
    const auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = ad[i];
        out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
    }
    return detail::make_result<T>("gelu", a.shape(), std::move(out), {a.shared()}, [](Node<T>& self) {
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        auto& pa = *self.parents[0];
        for (std::size_t i = 0; i < pa.grad.size(); ++i) {
            const double x = pa.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            pa.grad[i] += static_cast<T>(self.grad[i] * (cdf + x * pdf));
        }
    });
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
    require(table.rank() == 2, "embedding", table.shape(), Shape{ids.size()}, "table must be [V, d]");
    const std::size_t v = table.dim(0);
    const std::size_t d = table.dim(1);
    if (ids.empty()) throw ShapeError("embedding", table.shape(), Shape{0}, "no ids");
    std::vector<T> out(ids.size() * d);
    const auto td = table.data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v) {
            throw ShapeError("embedding", table.shape(), Shape{static_cast<std::size_t>(std::max(ids[r], 0))},
                             "token id " + std::to_string(ids[r]) + " out of range");
        }
        std::copy_n(td.begin() + ids[r] * d, d, out.begin() + r * d);
    }
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    return detail::make_result<T>("embedding", Shape{ids.size(), d}, std::move(out), {table.shared()},
                                  [d, idv = std::move(idv)](Node<T>& self) {
                                      auto& gt = self.parents[0]->grad;
                                      for (std::size_t r = 0; r < idv.size(); ++r) {
                                          T* dst = gt.data() + idv[r] * d;
                                          const T* src = self.grad.data() + r * d;
                                          for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
                                      }
                                  });
}

template <typename T>
BasicTensor<T> broadcast_rows(const BasicTensor<T>& v, std::size_t n) {
    require(v.rank() == 2 && n > 0, "broadcast_rows", v.shape(), Shape{n}, "expects [B, d] and n > 0");
    const std::size_t b = v.dim(0);
    const std::size_t d = v.dim(1);
    std::vector<T> out(b * n * d);
    const auto vd = v.data();
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < n; ++j) std::copy_n(vd.begin() + i * d, d, out.begin() + (i * n + j) * d);
    }
    return detail::make_result<T>("broadcast_rows", Shape{b, n, d}, std::move(out), {v.shared()},
                                  [b, n, d](Node<T>& self) {
                                      auto& gv = self.parents[0]->grad;
                                      for (std::size_t i = 0; i < b; ++i) {
                                          for (std::size_t j = 0; j < n; ++j) {
                                              for (std::size_t k = 0; k < d; ++k) {
                                                  gv[i * d + k] += self.grad[(i * n + j) * d + k];
                                              }
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> replace_rows(const BasicTensor<T>& x, std::span<const std::uint8_t> flags, const BasicTensor<T>& row) {
    require(x.rank() == 2 && flags.size() == x.dim(0) && row.numel() == x.dim(1), "replace_rows", x.shape(),
            row.shape(), "expects x [N, d], N flags and a [d] row");
    const std::size_t d = x.dim(1);
    std::vector<T> out(x.data().begin(), x.data().end());
    const auto rd = row.data();
    for (std::size_t r = 0; r < flags.size(); ++r) {
        if (flags[r]) std::copy_n(rd.begin(), d, out.begin() + r * d);
    }
    std::vector<std::uint8_t> fl(flags.begin(), flags.end());
    return detail::make_result<T>("replace_rows", x.shape(), std::move(out), {x.shared(), row.shared()},
                                  [d, fl = std::move(fl)](Node<T>& self) {
                                      auto* gx = detail::grad_of(*self.parents[0]);
                                      auto* gr = detail::grad_of(*self.parents[1]);
                                      for (std::size_t r = 0; r < fl.size(); ++r) {
                                          for (std::size_t i = 0; i < d; ++i) {
                                              const T g = self.grad[r * d + i];
                                              if (fl[r]) {
                                                  if (gr) (*gr)[i] += g;
                                              } else if (gx) {
                                                  (*gx)[r * d + i] += g;
                                              }
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> select_rows(const BasicTensor<T>& x, std::span<const std::size_t> indices) {
    require(x.rank() == 2 && !indices.empty(), "select_rows", x.shape(), Shape{indices.size()},
            "expects x [N, d] and at least one index");
    const std::size_t d = x.dim(1);
    std::vector<T> out(indices.size() * d);
    const auto xd = x.data();
    for (std::size_t j = 0; j < indices.size(); ++j) {
        require(indices[j] < x.dim(0), "select_rows", x.shape(), Shape{indices[j]}, "row index out of range");
        std::copy_n(xd.begin() + indices[j] * d, d, out.begin() + j * d);
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return detail::make_result<T>("select_rows", Shape{indices.size(), d}, std::move(out), {x.shared()},
                                  [d, idx = std::move(idx)](Node<T>& self) {
                                      auto& gx = self.parents[0]->grad;
                                      for (std::size_t j = 0; j < idx.size(); ++j) {
                                          for (std::size_t i = 0; i < d; ++i) {
                                              gx[idx[j] * d + i] += self.grad[j * d + i];
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> pool(const BasicTensor<T>& x, std::span<const double> weights) {
    require(x.rank() == 3 && weights.size() == x.dim(0) * x.dim(1), "pool", x.shape(), Shape{weights.size()},
            "expects x [B, n, d] and B*n weights");
    const std::size_t b = x.dim(0);
    const std::size_t n = x.dim(1);
    const std::size_t d = x.dim(2);
    const auto xd = x.data();
    std::vector<T> out(b * d);
    std::vector<double> acc(d);
    for (std::size_t i = 0; i < b; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double w = weights[i * n + j];
            if (w == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) acc[k] += w * xd[(i * n + j) * d + k];
        }
        for (std::size_t k = 0; k < d; ++k) out[i * d + k] = static_cast<T>(acc[k]);
    }
    std::vector<double> w(weights.begin(), weights.end());
    return detail::make_result<T>("pool", Shape{b, d}, std::move(out), {x.shared()},
                                  [b, n, d, w = std::move(w)](Node<T>& self) {
                                      auto& gx = self.parents[0]->grad;
                                      for (std::size_t i = 0; i < b; ++i) {
                                          for (std::size_t j = 0; j < n; ++j) {
                                              const T wj = static_cast<T>(w[i * n + j]);
                                              for (std::size_t k = 0; k < d; ++k) {
                                                  gx[(i * n + j) * d + k] += wj * self.grad[i * d + k];
                                              }
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& a, std::span<const double> weights) {
    require(weights.size() == a.numel(), "weighted_sum", a.shape(), Shape{weights.size()},
            "one weight per element required");
    double acc = 0.0;
    const auto ad = a.data();
    for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * ad[i];
    std::vector<double> w(weights.begin(), weights.end());
    return detail::make_result<T>("weighted_sum", Shape{1}, std::vector<T>{static_cast<T>(acc)}, {a.shared()},
                                  [w = std::move(w)](Node<T>& self) {
                                      auto& ga = self.parents[0]->grad;
                                      const double g = self.grad[0];
                                      for (std::size_t i = 0; i < w.size(); ++i) ga[i] += static_cast<T>(g * w[i]);
                                  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    double acc = 0.0;
    for (T v : a.data()) acc += v;
    return detail::make_result<T>("sum", Shape{1}, std::vector<T>{static_cast<T>(acc)}, {a.shared()},
                                  [](Node<T>& self) {
                                      auto& ga = self.parents[0]->grad;
                                      for (auto& g : ga) g += self.grad[0];
                                  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    double acc = 0.0;
    for (T v : a.data()) acc += v;
    const double inv = 1.0 / double(a.numel());
    return detail::make_result<T>("mean", Shape{1}, std::vector<T>{static_cast<T>(acc * inv)}, {a.shared()},
                                  [inv](Node<T>& self) {
                                      auto& ga = self.parents[0]->grad;
                                      const T g = static_cast<T>(self.grad[0] * inv);
                                      for (auto& v : ga) v += g;
                                  });
}

template <typename T>
BasicTensor<T> mse_rows(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    require(pred.shape() == target.shape(), "mse_rows", pred.shape(), target.shape(), "operands must match");
    const std::size_t d = pred.shape().back();
    const std::size_t rows = pred.numel() / d;
    const auto pd = pred.data();
    const auto td = target.data();
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double e = double(pd[r * d + i]) - td[r * d + i];
            acc += e * e;
        }
        out[r] = static_cast<T>(acc / double(d));
    }
    return detail::make_result<T>("mse_rows", Shape{rows}, std::move(out), {pred.shared(), target.shared()},
                                  [rows, d](Node<T>& self) {
                                      auto& pp = *self.parents[0];
                                      auto& pt = *self.parents[1];
                                      auto* gp = detail::grad_of(pp);
                                      auto* gt = detail::grad_of(pt);
                                      const T scale2 = T(2) / static_cast<T>(d);
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          const T g = self.grad[r] * scale2;
                                          for (std::size_t i = 0; i < d; ++i) {
                                              const std::size_t j = r * d + i;
                                              const T e = pp.data[j] - pt.data[j];
                                              if (gp) (*gp)[j] += g * e;
                                              if (gt) (*gt)[j] -= g * e;
                                          }
                                      }
                                  });
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    return mean(mse_rows(pred, target));
}

template <typename T>
BasicTensor<T> cross_entropy_rows(const BasicTensor<T>& logits, std::span<const std::int32_t> targets) {
    require(logits.rank() == 2 && targets.size() == logits.dim(0), "cross_entropy", logits.shape(),
            Shape{targets.size()}, "expects logits [N, V] and N targets");
    const std::size_t rows = logits.dim(0);
    const std::size_t v = logits.dim(1);
    const auto zd = logits.data();
    std::vector<T> out(rows);
    std::vector<T> probs(rows * v);
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
            throw ShapeError("cross_entropy", logits.shape(), Shape{static_cast<std::size_t>(std::max(targets[r], 0))},
                             "target out of range");
        }
        const T* z = zd.data() + r * v;
        const T mx = *std::max_element(z, z + v);
        double total = 0.0;
        for (std::size_t i = 0; i < v; ++i) {
            const double e = std::exp(double(z[i]) - mx);
            probs[r * v + i] = static_cast<T>(e);
            total += e;
        }
        for (std::size_t i = 0; i < v; ++i) probs[r * v + i] = static_cast<T>(probs[r * v + i] / total);
        out[r] = static_cast<T>(std::log(total) + mx - z[targets[r]]);
    }
    std::vector<std::int32_t> tg(targets.begin(), targets.end());
    return detail::make_result<T>("cross_entropy", Shape{rows}, std::move(out), {logits.shared()},
                                  [rows, v, probs = std::move(probs), tg = std::move(tg)](Node<T>& self) {
                                      auto& gz = self.parents[0]->grad;
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          const T g = self.grad[r];
                                          if (g == T(0)) continue;
                                          for (std::size_t i = 0; i < v; ++i) gz[r * v + i] += g * probs[r * v + i];
                                          gz[r * v + tg[r]] -= g;
                                      }
                                  });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets) {
    return mean(cross_entropy_rows(logits, targets));
}

#define DIFFOOD_INSTANTIATE(T)                                                                                   \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> scale(const BasicTensor<T>&, double);                                               \
    template BasicTensor<T> scale_leading(const BasicTensor<T>&, std::span<const double>);                      \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                               \
    template BasicTensor<T> transpose(const BasicTensor<T>&, std::size_t, std::size_t);                         \
    template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);                    \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                              \
    template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);                            \
    template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                        \
    template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,      \
                                       double);                                                                 \
    template BasicTensor<T> gelu(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const std::int32_t>);                    \
    template BasicTensor<T> broadcast_rows(const BasicTensor<T>&, std::size_t);                                 \
    template BasicTensor<T> replace_rows(const BasicTensor<T>&, std::span<const std::uint8_t>,                  \
                                         const BasicTensor<T>&);                                                \
    template BasicTensor<T> select_rows(const BasicTensor<T>&, std::span<const std::size_t>);                   \
    template BasicTensor<T> pool(const BasicTensor<T>&, std::span<const double>);                               \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> weighted_sum(const BasicTensor<T>&, std::span<const double>);                       \
    template BasicTensor<T> mse_rows(const BasicTensor<T>&, const BasicTensor<T>&);                             \
    template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);                             \
    template BasicTensor<T> cross_entropy_rows(const BasicTensor<T>&, std::span<const std::int32_t>);           \
    template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const std::int32_t>);

DIFFOOD_INSTANTIATE(float)
DIFFOOD_INSTANTIATE(double)

#undef DIFFOOD_INSTANTIATE

}  // namespace diffood::ops
