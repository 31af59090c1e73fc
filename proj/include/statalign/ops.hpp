#pragma once

#include <algorithm>
#include <type_traits>
#include <cmath>
#include <vector>

#include "statalign/tensor.hpp"

namespace statalign {

// Layer primitives. Every op computes its forward result eagerly, verifies it
// is finite, and (when a tape is supplied and some input carries grad)
// records a closure that scatters output gradients back onto the inputs.
// Gradients accumulate, so reusing a tensor in several ops is fine.

namespace detail {

template <typename T>
inline bool track(std::type_identity_t<Tape<T>>* tape, std::initializer_list<bool> rg) {
    if (!tape) return false;
    for (bool r : rg)
        if (r) return true;
    return false;
}

}  // namespace detail

template <typename T>
inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// im2col for a single image: (C,H,W) -> (C*k*k) x (OH*OW), row-major.
template <typename T>
void im2col(const T* img, int C, int H, int W, int k, int stride, int pad, int OH, int OW, T* col) {
    const int M = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                T* dst = col + ((c * k + dy) * k + dx) * M;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + oy * OW, dst + (oy + 1) * OW, T(0));
                        continue;
                    }
                    const T* src = img + (c * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        dst[oy * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int k, int stride, int pad, int OH, int OW, T* img) {
    const int M = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                const T* src = col + ((c * k + dy) * k + dx) * M;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = img + (c * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * OW + ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW input with an (O,C,k,k) weight plus bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad, std::type_identity_t<Tape<T>>* tape) {
    if (input.shape().size() != 4) throw TensorError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
    if (weight.shape().size() != 4) throw TensorError("conv2d: weight must be OCkk, got " + shape_str(weight.shape()));
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int O = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != C)
        throw TensorError("conv2d: weight channels " + std::to_string(weight.dim(1)) +
                          " do not match input channels " + std::to_string(C));
    if (weight.dim(3) != k) throw TensorError("conv2d: non-square kernel");
    if (bias.shape() != std::vector<int>{O}) throw TensorError("conv2d: bias shape " + shape_str(bias.shape()));
    const int OH = conv_out_dim<T>(H, k, stride, pad);
    const int OW = conv_out_dim<T>(W, k, stride, pad);
    if (OH < 1 || OW < 1)
        throw TensorError("conv2d: spatial dims " + shape_str(input.shape()) + " admit no window for k=" +
                          std::to_string(k) + " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad));

    const int KK = C * k * k;
    const int M = OH * OW;
    Tensor<T> out({N, O, OH, OW});
    std::vector<T> col(static_cast<size_t>(KK) * M);
    const T* wp = weight.data();
    const T* bp = bias.data();
    for (int n = 0; n < N; ++n) {
        im2col(input.data() + static_cast<size_t>(n) * C * H * W, C, H, W, k, stride, pad, OH, OW, col.data());
        T* op = out.data() + static_cast<size_t>(n) * O * M;
        for (int o = 0; o < O; ++o) {
            T* orow = op + static_cast<size_t>(o) * M;
            std::fill(orow, orow + M, bp[o]);
            const T* wrow = wp + static_cast<size_t>(o) * KK;
            for (int kk = 0; kk < KK; ++kk) {
                const T wv = wrow[kk];
                const T* crow = col.data() + static_cast<size_t>(kk) * M;
                for (int m = 0; m < M; ++m) orow[m] += wv * crow[m];
            }
        }
    }
    out.check_finite("conv2d");

    if (detail::track<T>(tape, {input.requires_grad(), weight.requires_grad(), bias.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input, w = weight, b = bias;
        tape->record([in, w, b, out, stride, pad, N, C, H, W, O, k, OH, OW, KK, M]() mutable {
            const T* gout = out.grad();
            std::vector<T> col(static_cast<size_t>(KK) * M);
            std::vector<T> gcol;
            if (in.requires_grad()) gcol.resize(static_cast<size_t>(KK) * M);
            for (int n = 0; n < N; ++n) {
                const T* go = gout + static_cast<size_t>(n) * O * M;
                if (in.requires_grad() || w.requires_grad())
                    im2col(in.data() + static_cast<size_t>(n) * C * H * W, C, H, W, k, stride, pad, OH, OW,
                           col.data());
                if (w.requires_grad()) {
                    T* gw = w.grad();
                    for (int o = 0; o < O; ++o) {
                        const T* gor = go + static_cast<size_t>(o) * M;
                        T* gwrow = gw + static_cast<size_t>(o) * KK;
                        for (int kk = 0; kk < KK; ++kk) {
                            const T* crow = col.data() + static_cast<size_t>(kk) * M;
                            T acc = T(0);
                            for (int m = 0; m < M; ++m) acc += gor[m] * crow[m];
                            gwrow[kk] += acc;
                        }
                    }
                }
                if (b.requires_grad()) {
                    T* gb = b.grad();
                    for (int o = 0; o < O; ++o) {
                        const T* gor = go + static_cast<size_t>(o) * M;
                        T acc = T(0);
                        for (int m = 0; m < M; ++m) acc += gor[m];
                        gb[o] += acc;
                    }
                }
                if (in.requires_grad()) {
                    std::fill(gcol.begin(), gcol.end(), T(0));
                    const T* wp = w.data();
                    for (int o = 0; o < O; ++o) {
                        const T* gor = go + static_cast<size_t>(o) * M;
                        const T* wrow = wp + static_cast<size_t>(o) * KK;
                        for (int kk = 0; kk < KK; ++kk) {
                            const T wv = wrow[kk];
                            T* gcrow = gcol.data() + static_cast<size_t>(kk) * M;
                            for (int m = 0; m < M; ++m) gcrow[m] += wv * gor[m];
                        }
                    }
                    col2im_add(gcol.data(), C, H, W, k, stride, pad, OH, OW,
                               in.grad() + static_cast<size_t>(n) * C * H * W);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input, std::type_identity_t<Tape<T>>* tape) {
    Tensor<T> out(input.shape());
    const T* x = input.data();
    T* y = out.data();
    for (size_t i = 0; i < input.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    out.check_finite("relu");
    if (detail::track<T>(tape, {input.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input;
        tape->record([in, out]() mutable {
            const T* go = out.grad();
            const T* x = in.data();
            T* gi = in.grad();
            for (size_t i = 0; i < in.size(); ++i)
                if (x[i] > T(0)) gi[i] += go[i];
        });
    }
    return out;
}

/// 2x2 max pooling with stride 2. Gradient flows only to the argmax cell;
/// ties resolve to the first cell in scan order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::type_identity_t<Tape<T>>* tape) {
    if (input.shape().size() != 4) throw TensorError("maxpool2d: input must be NCHW");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 || W % 2) throw TensorError("maxpool2d: odd spatial dims " + shape_str(input.shape()));
    const int OH = H / 2, OW = W / 2;
    Tensor<T> out({N, C, OH, OW});
    std::vector<int> argmax(out.size());
    const T* x = input.data();
    T* y = out.data();
    size_t oi = 0;
    for (int nc = 0; nc < N * C; ++nc) {
        const T* plane = x + static_cast<size_t>(nc) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox, ++oi) {
                int base = (oy * 2) * W + ox * 2;
                int best = base;
                T bv = plane[base];
                for (int q = 1; q < 4; ++q) {
                    int idx = base + (q / 2) * W + (q % 2);
                    if (plane[idx] > bv) {
                        bv = plane[idx];
                        best = idx;
                    }
                }
                y[oi] = bv;
                argmax[oi] = nc * H * W + best;
            }
        }
    }
    out.check_finite("maxpool2d");
    if (detail::track<T>(tape, {input.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input;
        tape->record([in, out, argmax = std::move(argmax)]() mutable {
            const T* go = out.grad();
            T* gi = in.grad();
            for (size_t i = 0; i < out.size(); ++i) gi[argmax[i]] += go[i];
        });
    }
    return out;
}

/// Per-channel batch normalization over (N,H,W). Training mode normalizes
/// with batch statistics and updates the running buffers in place with
/// momentum 0.1 (running variance uses the unbiased estimate); inference
/// mode normalizes with the running buffers.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      std::type_identity_t<Tape<T>>* tape, T momentum = T(0.1), T eps = T(1e-5)) {
    if (input.shape().size() != 4) throw TensorError("batchnorm2d: input must be NCHW");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (gamma.size() != static_cast<size_t>(C) || beta.size() != static_cast<size_t>(C))
        throw TensorError("batchnorm2d: parameter size mismatch for C=" + std::to_string(C));
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t per_ch = static_cast<size_t>(N) * plane;

    std::vector<T> mean(C), invstd(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            T s = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = input.data() + (static_cast<size_t>(n) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) s += p[i];
            }
            T mu = s / static_cast<T>(per_ch);
            T v = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = input.data() + (static_cast<size_t>(n) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    T d = p[i] - mu;
                    v += d * d;
                }
            }
            v /= static_cast<T>(per_ch);
            mean[c] = mu;
            invstd[c] = T(1) / std::sqrt(v + eps);
            T unbiased = per_ch > 1 ? v * static_cast<T>(per_ch) / static_cast<T>(per_ch - 1) : v;
            running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mu;
            running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = running_mean.data()[c];
            invstd[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
        }
    }

    Tensor<T> out(input.shape());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* p = input.data() + (static_cast<size_t>(n) * C + c) * plane;
            T* q = out.data() + (static_cast<size_t>(n) * C + c) * plane;
            const T g = gamma.data()[c], bta = beta.data()[c], mu = mean[c], is = invstd[c];
            for (size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + bta;
        }
    }
    out.check_finite("batchnorm2d");

    if (detail::track<T>(tape, {input.requires_grad(), gamma.requires_grad(), beta.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input, g = gamma, b = beta;
        tape->record([in, g, b, out, mean = std::move(mean), invstd = std::move(invstd), training, N, C, plane,
                      per_ch]() mutable {
            const T* go = out.grad();
            for (int c = 0; c < C; ++c) {
                const T mu = mean[c], is = invstd[c], gm = g.data()[c];
                T sum_go = T(0), sum_go_xhat = T(0);
                for (int n = 0; n < N; ++n) {
                    const size_t off = (static_cast<size_t>(n) * C + c) * plane;
                    const T* gop = go + off;
                    const T* xp = in.data() + off;
                    for (size_t i = 0; i < plane; ++i) {
                        sum_go += gop[i];
                        sum_go_xhat += gop[i] * (xp[i] - mu) * is;
                    }
                }
                if (g.requires_grad()) g.grad()[c] += sum_go_xhat;
                if (b.requires_grad()) b.grad()[c] += sum_go;
                if (in.requires_grad()) {
                    T* gi = in.grad();
                    const T m = static_cast<T>(per_ch);
                    for (int n = 0; n < N; ++n) {
                        const size_t off = (static_cast<size_t>(n) * C + c) * plane;
                        const T* gop = go + off;
                        const T* xp = in.data() + off;
                        T* gip = gi + off;
                        if (training) {
                            for (size_t i = 0; i < plane; ++i) {
                                T xhat = (xp[i] - mu) * is;
                                gip[i] += gm * is / m * (m * gop[i] - sum_go - xhat * sum_go_xhat);
                            }
                        } else {
                            for (size_t i = 0; i < plane; ++i) gip[i] += gm * is * gop[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Affine map y = x W^T + b for x of shape (N,F), W of shape (O,F).
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::type_identity_t<Tape<T>>* tape) {
    if (input.shape().size() != 2 || weight.shape().size() != 2)
        throw TensorError("linear: expected 2-D input and weight");
    const int N = input.dim(0), F = input.dim(1), O = weight.dim(0);
    if (weight.dim(1) != F)
        throw TensorError("linear: weight " + shape_str(weight.shape()) + " vs input " + shape_str(input.shape()));
    Tensor<T> out({N, O});
    for (int n = 0; n < N; ++n) {
        const T* x = input.data() + static_cast<size_t>(n) * F;
        T* y = out.data() + static_cast<size_t>(n) * O;
        for (int o = 0; o < O; ++o) {
            const T* w = weight.data() + static_cast<size_t>(o) * F;
            T acc = bias.data()[o];
            for (int f = 0; f < F; ++f) acc += w[f] * x[f];
            y[o] = acc;
        }
    }
    out.check_finite("linear");
    if (detail::track<T>(tape, {input.requires_grad(), weight.requires_grad(), bias.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input, w = weight, b = bias;
        tape->record([in, w, b, out, N, F, O]() mutable {
            const T* go = out.grad();
            for (int n = 0; n < N; ++n) {
                const T* gon = go + static_cast<size_t>(n) * O;
                const T* x = in.data() + static_cast<size_t>(n) * F;
                for (int o = 0; o < O; ++o) {
                    const T g = gon[o];
                    if (w.requires_grad()) {
                        T* gw = w.grad() + static_cast<size_t>(o) * F;
                        for (int f = 0; f < F; ++f) gw[f] += g * x[f];
                    }
                    if (in.requires_grad()) {
                        T* gi = in.grad() + static_cast<size_t>(n) * F;
                        const T* wr = w.data() + static_cast<size_t>(o) * F;
                        for (int f = 0; f < F; ++f) gi[f] += g * wr[f];
                    }
                    if (b.requires_grad()) b.grad()[o] += g;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& input, std::type_identity_t<Tape<T>>* tape) {
    const int N = input.dim(0);
    const int F = static_cast<int>(input.size()) / N;
    Tensor<T> out = Tensor<T>::from_data({N, F}, input.values());
    if (detail::track<T>(tape, {input.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input;
        tape->record([in, out]() mutable {
            const T* go = out.grad();
            T* gi = in.grad();
            for (size_t i = 0; i < in.size(); ++i) gi[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>>* tape) {
    if (a.shape() != b.shape())
        throw TensorError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    out.check_finite("add");
    if (detail::track<T>(tape, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> ta = a, tb = b;
        tape->record([ta, tb, out]() mutable {
            const T* go = out.grad();
            if (ta.requires_grad()) {
                T* g = ta.grad();
                for (size_t i = 0; i < ta.size(); ++i) g[i] += go[i];
            }
            if (tb.requires_grad()) {
                T* g = tb.grad();
                for (size_t i = 0; i < tb.size(); ++i) g[i] += go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>>* tape) {
    if (a.shape() != b.shape())
        throw TensorError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    out.check_finite("mul");
    if (detail::track<T>(tape, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> ta = a, tb = b;
        tape->record([ta, tb, out]() mutable {
            const T* go = out.grad();
            if (ta.requires_grad()) {
                T* g = ta.grad();
                for (size_t i = 0; i < ta.size(); ++i) g[i] += go[i] * tb.data()[i];
            }
            if (tb.requires_grad()) {
                T* g = tb.grad();
                for (size_t i = 0; i < tb.size(); ++i) g[i] += go[i] * ta.data()[i];
            }
        });
    }
    return out;
}

/// Concatenates NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts, std::type_identity_t<Tape<T>>* tape) {
    if (parts.empty()) throw TensorError("concat_channels: no inputs");
    const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    int C = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw TensorError("concat_channels: incompatible shape " + shape_str(p.shape()));
        C += p.dim(1);
        rg = rg || p.requires_grad();
    }
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<T> out({N, C, H, W});
    for (int n = 0; n < N; ++n) {
        size_t coff = 0;
        for (const auto& p : parts) {
            const size_t pc = static_cast<size_t>(p.dim(1));
            std::copy(p.data() + static_cast<size_t>(n) * pc * plane,
                      p.data() + static_cast<size_t>(n + 1) * pc * plane,
                      out.data() + (static_cast<size_t>(n) * C + coff) * plane);
            coff += pc;
        }
    }
    if (tape && rg) {
        out.set_requires_grad(true);
        std::vector<Tensor<T>> ins = parts;
        tape->record([ins, out, N, C, plane]() mutable {
            const T* go = out.grad();
            for (int n = 0; n < N; ++n) {
                size_t coff = 0;
                for (auto& p : ins) {
                    const size_t pc = static_cast<size_t>(p.dim(1));
                    if (p.requires_grad()) {
                        T* gi = p.grad() + static_cast<size_t>(n) * pc * plane;
                        const T* src = go + (static_cast<size_t>(n) * C + coff) * plane;
                        for (size_t i = 0; i < pc * plane; ++i) gi[i] += src[i];
                    }
                    coff += pc;
                }
            }
        });
    }
    return out;
}

/// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, std::type_identity_t<Tape<T>>* tape) {
    if (logits.shape().size() != 2) throw TensorError("softmax_cross_entropy: logits must be (N,C)");
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw TensorError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                          std::to_string(N));
    for (int y : labels)
        if (y < 0 || y >= C)
            throw TensorError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                              std::to_string(C) + ")");
    std::vector<T> probs(logits.size());
    T total = T(0);
    for (int n = 0; n < N; ++n) {
        const T* z = logits.data() + static_cast<size_t>(n) * C;
        T* p = probs.data() + static_cast<size_t>(n) * C;
        T zmax = *std::max_element(z, z + C);
        T denom = T(0);
        for (int c = 0; c < C; ++c) {
            p[c] = std::exp(z[c] - zmax);
            denom += p[c];
        }
        for (int c = 0; c < C; ++c) p[c] /= denom;
        total += std::log(denom) - (z[labels[n]] - zmax);
    }
    Tensor<T> loss = Tensor<T>::from_data({1}, {total / static_cast<T>(N)});
    loss.check_finite("softmax_cross_entropy");
    if (detail::track<T>(tape, {logits.requires_grad()})) {
        loss.set_requires_grad(true);
        Tensor<T> in = logits;
        tape->record([in, loss, probs = std::move(probs), labels, N, C]() mutable {
            const T g = loss.grad()[0] / static_cast<T>(N);
            T* gi = in.grad();
            for (int n = 0; n < N; ++n) {
                const T* p = probs.data() + static_cast<size_t>(n) * C;
                T* gn = gi + static_cast<size_t>(n) * C;
                for (int c = 0; c < C; ++c) gn[c] += g * (p[c] - (c == labels[n] ? T(1) : T(0)));
            }
        });
    }
    return loss;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input, std::type_identity_t<Tape<T>>* tape) {
    T s = T(0);
    for (size_t i = 0; i < input.size(); ++i) s += input.data()[i];
    Tensor<T> out = Tensor<T>::from_data({1}, {s});
    out.check_finite("sum");
    if (detail::track<T>(tape, {input.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input;
        tape->record([in, out]() mutable {
            const T g = out.grad()[0];
            T* gi = in.grad();
            for (size_t i = 0; i < in.size(); ++i) gi[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor, std::type_identity_t<Tape<T>>* tape) {
    Tensor<T> out(input.shape());
    for (size_t i = 0; i < input.size(); ++i) out.data()[i] = factor * input.data()[i];
    out.check_finite("scale");
    if (detail::track<T>(tape, {input.requires_grad()})) {
        out.set_requires_grad(true);
        Tensor<T> in = input;
        tape->record([in, out, factor]() mutable {
            const T* go = out.grad();
            T* gi = in.grad();
            for (size_t i = 0; i < in.size(); ++i) gi[i] += factor * go[i];
        });
    }
    return out;
}

}  // namespace statalign
