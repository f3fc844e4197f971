#include "iamnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace iamnn {

bool& ConvMacCounter::enabled() {
    thread_local bool on = false;
    return on;
}

uint64_t& ConvMacCounter::count() {
    thread_local uint64_t n = 0;
    return n;
}

namespace ops {

namespace {

template <typename T>
void maybe_record(const char* kind, std::initializer_list<Tensor<T>> inputs, Tensor<T>& out,
                  std::function<bool()> backward) {
    auto* g = Graph<T>::current();
    if (!g) return;
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return;
    out.set_requires_grad(true);
    std::vector<uint64_t> ids;
    ids.reserve(inputs.size());
    for (const auto& t : inputs) ids.push_back(t.node_id());
    g->record(kind, std::move(ids), out.node_id(), std::move(backward));
}

template <typename T>
void require_rank(const Tensor<T>& t, size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
    }
}

// Unpacks one sample's receptive fields into a (Cin*K*K) x (OH*OW) matrix.
template <typename T>
void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int k, int stride, int pad, int64_t oh,
            int64_t ow, T* cols) {
    const int64_t ohw = oh * ow;
    for (int64_t ci = 0; ci < cin; ++ci) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                T* dst = cols + ((ci * k + kh) * k + kw) * ohw;
                for (int64_t i = 0; i < oh; ++i) {
                    const int64_t ih = i * stride - pad + kh;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst + i * ow, dst + (i + 1) * ow, T(0));
                        continue;
                    }
                    const T* src = x + (ci * h + ih) * w;
                    for (int64_t j = 0; j < ow; ++j) {
                        const int64_t iw = j * stride - pad + kw;
                        dst[i * ow + j] = (iw >= 0 && iw < w) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accum(const T* cols, int64_t cin, int64_t h, int64_t w, int k, int stride, int pad,
                  int64_t oh, int64_t ow, T* gx) {
    const int64_t ohw = oh * ow;
    for (int64_t ci = 0; ci < cin; ++ci) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const T* src = cols + ((ci * k + kh) * k + kw) * ohw;
                for (int64_t i = 0; i < oh; ++i) {
                    const int64_t ih = i * stride - pad + kh;
                    if (ih < 0 || ih >= h) continue;
                    T* dst = gx + (ci * h + ih) * w;
                    for (int64_t j = 0; j < ow; ++j) {
                        const int64_t iw = j * stride - pad + kw;
                        if (iw >= 0 && iw < w) dst[iw] += src[i * ow + j];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tensor<T> input, Tensor<T> weight, int stride, int padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const int64_t b = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin || weight.dim(2) != weight.dim(3)) {
        throw ShapeError("conv2d: weight " + shape_str(weight.shape()) +
                         " does not match input " + shape_str(input.shape()));
    }
    if (stride < 1 || padding < 0 || k > h + 2 * padding || k > w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) +
                         " too large for input " + shape_str(input.shape()) + " with padding " +
                         std::to_string(padding));
    }
    const int64_t oh = (h + 2 * padding - k) / stride + 1;
    const int64_t ow = (w + 2 * padding - k) / stride + 1;
    const int64_t ohw = oh * ow;
    const int64_t rows = cin * k * k;

    Tensor<T> out = Tensor<T>::zeros({b, cout, oh, ow});
    std::vector<T> cols(static_cast<size_t>(rows * ohw));
    const T* xv = input.values().data();
    const T* wv = weight.values().data();
    T* yv = out.values().data();
    const bool counting = ConvMacCounter::enabled();
    uint64_t macs = 0;
    for (int64_t bi = 0; bi < b; ++bi) {
        im2col(xv + bi * cin * h * w, cin, h, w, static_cast<int>(k), stride, padding, oh, ow,
               cols.data());
        for (int64_t co = 0; co < cout; ++co) {
            T* dst = yv + (bi * cout + co) * ohw;
            for (int64_t r = 0; r < rows; ++r) {
                const T wk = wv[co * rows + r];
                const T* src = cols.data() + r * ohw;
                if (counting) {
                    for (int64_t o = 0; o < ohw; ++o) {
                        dst[o] += wk * src[o];
                        ++macs;
                    }
                } else {
                    for (int64_t o = 0; o < ohw; ++o) dst[o] += wk * src[o];
                }
            }
        }
    }
    if (counting) ConvMacCounter::count() += macs;

    maybe_record<T>(
        "conv2d", {input, weight}, out,
        [input, weight, out, stride, padding, b, cin, h, w, cout, k, oh, ow, ohw, rows]() mutable {
            if (!out.has_grad()) return false;
            const T* go = out.grad().data();
            const T* xv = input.values().data();
            const T* wv = weight.values().data();
            std::vector<T> cols(static_cast<size_t>(rows * ohw));
            std::vector<T> gcols;
            if (input.requires_grad()) gcols.resize(static_cast<size_t>(rows * ohw));
            for (int64_t bi = 0; bi < b; ++bi) {
                im2col(xv + bi * cin * h * w, cin, h, w, static_cast<int>(k), stride, padding, oh,
                       ow, cols.data());
                if (weight.requires_grad()) {
                    T* gw = weight.grad().data();
                    for (int64_t co = 0; co < cout; ++co) {
                        const T* g = go + (bi * cout + co) * ohw;
                        for (int64_t r = 0; r < rows; ++r) {
                            const T* src = cols.data() + r * ohw;
                            T acc = T(0);
                            for (int64_t o = 0; o < ohw; ++o) acc += g[o] * src[o];
                            gw[co * rows + r] += acc;
                        }
                    }
                }
                if (input.requires_grad()) {
                    std::fill(gcols.begin(), gcols.end(), T(0));
                    for (int64_t co = 0; co < cout; ++co) {
                        const T* g = go + (bi * cout + co) * ohw;
                        for (int64_t r = 0; r < rows; ++r) {
                            const T wk = wv[co * rows + r];
                            T* dst = gcols.data() + r * ohw;
                            for (int64_t o = 0; o < ohw; ++o) dst[o] += wk * g[o];
                        }
                    }
                    col2im_accum(gcols.data(), cin, h, w, static_cast<int>(k), stride, padding, oh,
                                 ow, input.grad().data() + bi * cin * h * w);
                }
            }
            return true;
        });
    return out;
}

template <typename T>
Tensor<T> maxpool(Tensor<T> input, int kernel, int stride, int padding) {
    require_rank(input, 4, "maxpool input");
    const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel > h + 2 * padding || kernel > w + 2 * padding) {
        throw ShapeError("maxpool: window " + std::to_string(kernel) + " too large for input " +
                         shape_str(input.shape()));
    }
    const int64_t oh = (h + 2 * padding - kernel) / stride + 1;
    const int64_t ow = (w + 2 * padding - kernel) / stride + 1;
    Tensor<T> out = Tensor<T>::zeros({b, c, oh, ow});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(b * c * oh * ow), -1);
    const T* xv = input.values().data();
    T* yv = out.values().data();
    int64_t oi = 0;
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* plane = xv + (bi * c + ci) * h * w;
            for (int64_t i = 0; i < oh; ++i) {
                for (int64_t j = 0; j < ow; ++j, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    int64_t best_idx = -1;
                    for (int kh = 0; kh < kernel; ++kh) {
                        const int64_t ih = i * stride - padding + kh;
                        if (ih < 0 || ih >= h) continue;
                        for (int kw = 0; kw < kernel; ++kw) {
                            const int64_t iw = j * stride - padding + kw;
                            if (iw < 0 || iw >= w) continue;
                            const T v = plane[ih * w + iw];
                            if (v > best) {
                                best = v;
                                best_idx = (bi * c + ci) * h * w + ih * w + iw;
                            }
                        }
                    }
                    yv[oi] = best_idx >= 0 ? best : T(0);
                    (*argmax)[static_cast<size_t>(oi)] = best_idx;
                }
            }
        }
    }

    maybe_record<T>("maxpool", {input}, out, [input, out, argmax]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        T* gx = input.grad().data();
        for (size_t i = 0; i < argmax->size(); ++i) {
            const int64_t idx = (*argmax)[i];
            if (idx >= 0) gx[idx] += go[i];
        }
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tensor<T> input) {
    require_rank(input, 4, "global_avg_pool input");
    const int64_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    Tensor<T> out = Tensor<T>::zeros({b, c});
    const T* xv = input.values().data();
    T* yv = out.values().data();
    for (int64_t i = 0; i < b * c; ++i) {
        T acc = T(0);
        for (int64_t o = 0; o < hw; ++o) acc += xv[i * hw + o];
        yv[i] = acc / static_cast<T>(hw);
    }
    maybe_record<T>("global_avg_pool", {input}, out, [input, out, b, c, hw]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        T* gx = input.grad().data();
        for (int64_t i = 0; i < b * c; ++i) {
            const T g = go[i] / static_cast<T>(hw);
            for (int64_t o = 0; o < hw; ++o) gx[i * hw + o] += g;
        }
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> batchnorm(Tensor<T> input, Tensor<T> gamma, Tensor<T> beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool train, T momentum,
                    T epsilon, const std::vector<uint8_t>* sample_mask) {
    require_rank(input, 4, "batchnorm input");
    const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
        running_var.numel() != c) {
        throw ShapeError("batchnorm: " + std::to_string(c) + "-channel input " +
                         shape_str(input.shape()) + " vs stats of size " +
                         std::to_string(gamma.numel()));
    }
    const int64_t hw = h * w;
    const int64_t chw = c * hw;

    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
    auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
    std::shared_ptr<std::vector<uint8_t>> mask;
    int64_t n_eff = b * hw;

    if (train) {
        if (sample_mask) {
            mask = std::make_shared<std::vector<uint8_t>>(*sample_mask);
            int64_t alive = 0;
            for (uint8_t m : *mask) alive += (m != 0);
            n_eff = alive * hw;
        }
        if (n_eff < 2) {
            throw DegenerateBatchError("batchnorm: " + std::to_string(n_eff) +
                                       " values per channel in train mode");
        }
        const T* xv = input.values().data();
        for (int64_t ci = 0; ci < c; ++ci) {
            T sum = T(0);
            for (int64_t bi = 0; bi < b; ++bi) {
                if (mask && !(*mask)[static_cast<size_t>(bi)]) continue;
                const T* p = xv + bi * chw + ci * hw;
                for (int64_t o = 0; o < hw; ++o) sum += p[o];
            }
            const T mu = sum / static_cast<T>(n_eff);
            T sq = T(0);
            for (int64_t bi = 0; bi < b; ++bi) {
                if (mask && !(*mask)[static_cast<size_t>(bi)]) continue;
                const T* p = xv + bi * chw + ci * hw;
                for (int64_t o = 0; o < hw; ++o) {
                    const T d = p[o] - mu;
                    sq += d * d;
                }
            }
            const T var = sq / static_cast<T>(n_eff);
            (*mean)[static_cast<size_t>(ci)] = mu;
            (*invstd)[static_cast<size_t>(ci)] = T(1) / std::sqrt(var + epsilon);
            T* rm = running_mean.values().data();
            T* rv = running_var.values().data();
            rm[ci] = (T(1) - momentum) * rm[ci] + momentum * mu;
            rv[ci] = (T(1) - momentum) * rv[ci] +
                     momentum * var * static_cast<T>(n_eff) / static_cast<T>(n_eff - 1);
        }
    } else {
        const T* rm = running_mean.values().data();
        const T* rv = running_var.values().data();
        for (int64_t ci = 0; ci < c; ++ci) {
            (*mean)[static_cast<size_t>(ci)] = rm[ci];
            (*invstd)[static_cast<size_t>(ci)] = T(1) / std::sqrt(rv[ci] + epsilon);
        }
    }

    Tensor<T> out = Tensor<T>::zeros(input.shape());
    {
        const T* xv = input.values().data();
        const T* gv = gamma.values().data();
        const T* bv = beta.values().data();
        T* yv = out.values().data();
        for (int64_t bi = 0; bi < b; ++bi) {
            for (int64_t ci = 0; ci < c; ++ci) {
                const T mu = (*mean)[static_cast<size_t>(ci)];
                const T is = (*invstd)[static_cast<size_t>(ci)];
                const T g = gv[ci], bb = bv[ci];
                const T* p = xv + bi * chw + ci * hw;
                T* q = yv + bi * chw + ci * hw;
                for (int64_t o = 0; o < hw; ++o) q[o] = g * (p[o] - mu) * is + bb;
            }
        }
    }

    maybe_record<T>(
        "batchnorm", {input, gamma, beta}, out,
        [input, gamma, beta, out, mean, invstd, mask, train, n_eff, b, c, hw, chw]() mutable {
            if (!out.has_grad()) return false;
            const T* go = out.grad().data();
            const T* xv = input.values().data();
            const T* gv = gamma.values().data();
            const bool need_x = input.requires_grad();
            for (int64_t ci = 0; ci < c; ++ci) {
                const T mu = (*mean)[static_cast<size_t>(ci)];
                const T is = (*invstd)[static_cast<size_t>(ci)];
                T s1 = T(0), s2 = T(0);
                for (int64_t bi = 0; bi < b; ++bi) {
                    const T* g = go + bi * chw + ci * hw;
                    const T* p = xv + bi * chw + ci * hw;
                    for (int64_t o = 0; o < hw; ++o) {
                        s1 += g[o];
                        s2 += g[o] * (p[o] - mu) * is;
                    }
                }
                if (gamma.requires_grad()) gamma.grad()[static_cast<size_t>(ci)] += s2;
                if (beta.requires_grad()) beta.grad()[static_cast<size_t>(ci)] += s1;
                if (!need_x) continue;
                T* gx_base = input.grad().data();
                const T scale = gv[ci] * is;
                for (int64_t bi = 0; bi < b; ++bi) {
                    const bool in_stats = train && (!mask || (*mask)[static_cast<size_t>(bi)]);
                    const T* g = go + bi * chw + ci * hw;
                    const T* p = xv + bi * chw + ci * hw;
                    T* gx = gx_base + bi * chw + ci * hw;
                    if (train && in_stats) {
                        const T inv_n = T(1) / static_cast<T>(n_eff);
                        for (int64_t o = 0; o < hw; ++o) {
                            const T xhat = (p[o] - mu) * is;
                            gx[o] += scale * (g[o] - (s1 + xhat * s2) * inv_n);
                        }
                    } else {
                        for (int64_t o = 0; o < hw; ++o) gx[o] += scale * g[o];
                    }
                }
            }
            return true;
        });
    return out;
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.values().data();
    T* yv = out.values().data();
    for (int64_t i = 0; i < x.numel(); ++i) yv[i] = xv[i] > T(0) ? xv[i] : T(0);
    maybe_record<T>("relu", {x}, out, [x, out]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        const T* xv = x.values().data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) {
            if (xv[i] > T(0)) gx[i] += go[i];
        }
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.values().data();
    T* yv = out.values().data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T v = xv[i];
        if (v >= T(0)) {
            yv[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            yv[i] = e / (T(1) + e);
        }
    }
    maybe_record<T>("sigmoid", {x}, out, [x, out]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        const T* yv = out.values().data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += go[i] * yv[i] * (T(1) - yv[i]);
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> tanh_op(Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.values().data();
    T* yv = out.values().data();
    for (int64_t i = 0; i < x.numel(); ++i) yv[i] = std::tanh(xv[i]);
    maybe_record<T>("tanh", {x}, out, [x, out]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        const T* yv = out.values().data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += go[i] * (T(1) - yv[i] * yv[i]);
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* av = a.values().data();
    const T* bv = b.values().data();
    T* yv = out.values().data();
    for (int64_t i = 0; i < a.numel(); ++i) yv[i] = av[i] + bv[i];
    maybe_record<T>("add", {a, b}, out, [a, b, out]() mutable {
        if (!out.has_grad()) return false;
        auto go = out.grad();
        if (a.requires_grad()) a.accumulate_grad(go);
        if (b.requires_grad()) b.accumulate_grad(go);
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* av = a.values().data();
    const T* bv = b.values().data();
    T* yv = out.values().data();
    for (int64_t i = 0; i < a.numel(); ++i) yv[i] = av[i] * bv[i];
    maybe_record<T>("mul", {a, b}, out, [a, b, out]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        if (a.requires_grad()) {
            T* ga = a.grad().data();
            const T* bv = b.values().data();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += go[i] * bv[i];
        }
        if (b.requires_grad()) {
            T* gb = b.grad().data();
            const T* av = a.values().data();
            for (int64_t i = 0; i < b.numel(); ++i) gb[i] += go[i] * av[i];
        }
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> affine(Tensor<T> x, T alpha, T beta) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.values().data();
    T* yv = out.values().data();
    for (int64_t i = 0; i < x.numel(); ++i) yv[i] = alpha * xv[i] + beta;
    maybe_record<T>("affine", {x}, out, [x, out, alpha]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        T* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += alpha * go[i];
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw ContractError("concat_channels: no inputs");
    for (const auto& p : parts) require_rank(p, 4, "concat_channels input");
    const int64_t b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int64_t ctotal = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != b || p.dim(2) != h || p.dim(3) != w) {
            throw ShapeError("concat_channels: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        ctotal += p.dim(1);
    }
    Tensor<T> out = Tensor<T>::zeros({b, ctotal, h, w});
    const int64_t hw = h * w;
    T* yv = out.values().data();
    int64_t coff = 0;
    for (const auto& p : parts) {
        const int64_t pc = p.dim(1);
        const T* xv = p.values().data();
        for (int64_t bi = 0; bi < b; ++bi) {
            std::copy(xv + bi * pc * hw, xv + (bi + 1) * pc * hw,
                      yv + (bi * ctotal + coff) * hw);
        }
        coff += pc;
    }

    auto held = std::make_shared<std::vector<Tensor<T>>>(parts.begin(), parts.end());
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    auto* g = Graph<T>::current();
    if (g && any) {
        out.set_requires_grad(true);
        std::vector<uint64_t> ids;
        for (const auto& p : parts) ids.push_back(p.node_id());
        g->record("concat_channels", std::move(ids), out.node_id(),
                  [held, out, b, ctotal, hw]() mutable {
                      if (!out.has_grad()) return false;
                      const T* go = out.grad().data();
                      int64_t coff = 0;
                      for (auto& p : *held) {
                          const int64_t pc = p.dim(1);
                          if (p.requires_grad()) {
                              T* gx = p.grad().data();
                              for (int64_t bi = 0; bi < b; ++bi) {
                                  const T* src = go + (bi * ctotal + coff) * hw;
                                  T* dst = gx + bi * pc * hw;
                                  for (int64_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
                              }
                          }
                          coff += pc;
                      }
                      return true;
                  });
    }
    return out;
}

template <typename T>
Tensor<T> per_sample_scale(Tensor<T> x, Tensor<T> w) {
    if (w.rank() != 1 || w.dim(0) != x.dim(0)) {
        throw ShapeError("per_sample_scale: weights " + shape_str(w.shape()) + " vs input " +
                         shape_str(x.shape()));
    }
    const int64_t b = x.dim(0);
    const int64_t stride = x.numel() / b;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.values().data();
    const T* wv = w.values().data();
    T* yv = out.values().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        const T s = wv[bi];
        for (int64_t i = 0; i < stride; ++i) yv[bi * stride + i] = s * xv[bi * stride + i];
    }
    maybe_record<T>("per_sample_scale", {x, w}, out, [x, w, out, b, stride]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        if (x.requires_grad()) {
            const T* wv = w.values().data();
            T* gx = x.grad().data();
            for (int64_t bi = 0; bi < b; ++bi) {
                const T s = wv[bi];
                for (int64_t i = 0; i < stride; ++i) gx[bi * stride + i] += s * go[bi * stride + i];
            }
        }
        if (w.requires_grad()) {
            const T* xv = x.values().data();
            T* gw = w.grad().data();
            for (int64_t bi = 0; bi < b; ++bi) {
                T acc = T(0);
                for (int64_t i = 0; i < stride; ++i) acc += xv[bi * stride + i] * go[bi * stride + i];
                gw[bi] += acc;
            }
        }
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> reshape(Tensor<T> x, std::vector<int64_t> new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
    }
    Tensor<T> out = Tensor<T>::from(std::move(new_shape),
                                    std::vector<T>(x.values().begin(), x.values().end()));
    maybe_record<T>("reshape", {x}, out, [x, out]() mutable {
        if (!out.has_grad()) return false;
        x.accumulate_grad(out.grad());
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> weight, Tensor<T> bias) {
    require_rank(x, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const int64_t b = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    if (weight.dim(1) != in || bias.numel() != out_dim) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros({b, out_dim});
    const T* xv = x.values().data();
    const T* wv = weight.values().data();
    const T* bv = bias.values().data();
    T* yv = out.values().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t o = 0; o < out_dim; ++o) {
            T acc = bv[o];
            const T* xr = xv + bi * in;
            const T* wr = wv + o * in;
            for (int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yv[bi * out_dim + o] = acc;
        }
    }
    maybe_record<T>("linear", {x, weight, bias}, out, [x, weight, bias, out, b, in,
                                                       out_dim]() mutable {
        if (!out.has_grad()) return false;
        const T* go = out.grad().data();
        if (x.requires_grad()) {
            const T* wv = weight.values().data();
            T* gx = x.grad().data();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t o = 0; o < out_dim; ++o) {
                    const T g = go[bi * out_dim + o];
                    const T* wr = wv + o * in;
                    T* gr = gx + bi * in;
                    for (int64_t i = 0; i < in; ++i) gr[i] += g * wr[i];
                }
            }
        }
        if (weight.requires_grad()) {
            const T* xv = x.values().data();
            T* gw = weight.grad().data();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t o = 0; o < out_dim; ++o) {
                    const T g = go[bi * out_dim + o];
                    const T* xr = xv + bi * in;
                    T* wr = gw + o * in;
                    for (int64_t i = 0; i < in; ++i) wr[i] += g * xr[i];
                }
            }
        }
        if (bias.requires_grad()) {
            T* gb = bias.grad().data();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t o = 0; o < out_dim; ++o) gb[o] += go[bi * out_dim + o];
            }
        }
        return true;
    });
    return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(Tensor<T> logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy logits");
    const int64_t b = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != b) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch " + std::to_string(b));
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= k) {
            throw ContractError("softmax_cross_entropy: label " + std::to_string(lab) +
                                " out of range for " + std::to_string(k) + " classes");
        }
    }
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(b * k));
    const T* zv = logits.values().data();
    T loss = T(0);
    for (int64_t bi = 0; bi < b; ++bi) {
        const T* row = zv + bi * k;
        T m = row[0];
        for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        T sum = T(0);
        for (int64_t j = 0; j < k; ++j) {
            const T e = std::exp(row[j] - m);
            (*probs)[static_cast<size_t>(bi * k + j)] = e;
            sum += e;
        }
        for (int64_t j = 0; j < k; ++j) (*probs)[static_cast<size_t>(bi * k + j)] /= sum;
        loss += std::log(sum) - (row[labels[static_cast<size_t>(bi)]] - m);
    }
    loss /= static_cast<T>(b);
    Tensor<T> out = Tensor<T>::scalar_tensor(loss);
    auto labels_copy = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    maybe_record<T>("softmax_cross_entropy", {logits}, out,
                    [logits, out, probs, labels_copy, b, k]() mutable {
                        if (!out.has_grad()) return false;
                        const T g = out.grad()[0] / static_cast<T>(b);
                        T* gz = logits.grad().data();
                        for (int64_t bi = 0; bi < b; ++bi) {
                            for (int64_t j = 0; j < k; ++j) {
                                T p = (*probs)[static_cast<size_t>(bi * k + j)];
                                if (j == (*labels_copy)[static_cast<size_t>(bi)]) p -= T(1);
                                gz[bi * k + j] += g * p;
                            }
                        }
                        return true;
                    });
    return out;
}

template <typename T>
Tensor<T> mean_all(Tensor<T> x) {
    const int64_t n = x.numel();
    if (n == 0) throw ContractError("mean_all: empty tensor");
    T acc = T(0);
    for (T v : x.values()) acc += v;
    Tensor<T> out = Tensor<T>::scalar_tensor(acc / static_cast<T>(n));
    maybe_record<T>("mean_all", {x}, out, [x, out, n]() mutable {
        if (!out.has_grad()) return false;
        const T g = out.grad()[0] / static_cast<T>(n);
        T* gx = x.grad().data();
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
        return true;
    });
    return out;
}

template <typename T>
std::vector<int> argmax_rows(Tensor<T> logits) {
    const int64_t b = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(b));
    const T* zv = logits.values().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        int best = 0;
        for (int64_t j = 1; j < k; ++j) {
            if (zv[bi * k + j] > zv[bi * k + best]) best = static_cast<int>(j);
        }
        out[static_cast<size_t>(bi)] = best;
    }
    return out;
}

template <typename T>
bool all_finite(Tensor<T> x) {
    for (T v : x.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

#define IAMNN_INSTANTIATE_OPS(T)                                                                 \
    template Tensor<T> conv2d<T>(Tensor<T>, Tensor<T>, int, int);                                \
    template Tensor<T> maxpool<T>(Tensor<T>, int, int, int);                                     \
    template Tensor<T> global_avg_pool<T>(Tensor<T>);                                            \
    template Tensor<T> batchnorm<T>(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>&, Tensor<T>&,     \
                                    bool, T, T, const std::vector<uint8_t>*);                    \
    template Tensor<T> relu<T>(Tensor<T>);                                                       \
    template Tensor<T> sigmoid<T>(Tensor<T>);                                                    \
    template Tensor<T> tanh_op<T>(Tensor<T>);                                                    \
    template Tensor<T> add<T>(Tensor<T>, Tensor<T>);                                             \
    template Tensor<T> mul<T>(Tensor<T>, Tensor<T>);                                             \
    template Tensor<T> affine<T>(Tensor<T>, T, T);                                               \
    template Tensor<T> concat_channels<T>(std::span<const Tensor<T>>);                           \
    template Tensor<T> per_sample_scale<T>(Tensor<T>, Tensor<T>);                                \
    template Tensor<T> reshape<T>(Tensor<T>, std::vector<int64_t>);                              \
    template Tensor<T> linear<T>(Tensor<T>, Tensor<T>, Tensor<T>);                               \
    template Tensor<T> softmax_cross_entropy<T>(Tensor<T>, std::span<const int>);                \
    template Tensor<T> mean_all<T>(Tensor<T>);                                                   \
    template std::vector<int> argmax_rows<T>(Tensor<T>);                                  \
    template bool all_finite<T>(Tensor<T>);

IAMNN_INSTANTIATE_OPS(float)
IAMNN_INSTANTIATE_OPS(double)

#undef IAMNN_INSTANTIATE_OPS

}  // namespace ops
}  // namespace iamnn
