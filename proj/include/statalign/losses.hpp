#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "statalign/feature_map.hpp"
#include "statalign/kernels.hpp"
#include "statalign/rng.hpp"
#include "statalign/tensor.hpp"

namespace statalign {

// Statistic-alignment losses between a source and a target feature map.
// Everything here is a pure function; the *_node wrappers at the bottom
// attach the analytic gradients to a tape.

struct Bandwidth {
    double sigma2 = 1.0;
    bool degenerate = false;  // all pair distances were zero; sigma2 floored
};

enum class EstimatorKind { biased_quadratic, linear_time };

namespace detail {

// sigma2 = mean squared l2 distance over exactly the pairs the estimator
// touches. For the quadratic estimator that is all m^2 + n^2 + mn ordered
// pairs including self-pairs.
template <typename T>
Bandwidth bandwidth_all_pairs(const SampleSet<T>& S, const SampleSet<T>& Tt) {
    double total = 0.0;
    for (int i = 0; i < S.count; ++i)
        for (int j = 0; j < S.count; ++j) total += static_cast<double>(sqdist(S.vec(i), S.vec(j), S.dim));
    for (int i = 0; i < Tt.count; ++i)
        for (int j = 0; j < Tt.count; ++j) total += static_cast<double>(sqdist(Tt.vec(i), Tt.vec(j), Tt.dim));
    for (int i = 0; i < S.count; ++i)
        for (int j = 0; j < Tt.count; ++j) total += static_cast<double>(sqdist(S.vec(i), Tt.vec(j), S.dim));
    const double pairs = static_cast<double>(S.count) * S.count +
                         static_cast<double>(Tt.count) * Tt.count +
                         static_cast<double>(S.count) * Tt.count;
    double sigma2 = total / pairs;
    if (sigma2 <= 0.0) return {1e-8, true};
    return {sigma2, false};
}

}  // namespace detail

template <typename T>
Bandwidth gaussian_bandwidth(const SampleSet<T>& S, const SampleSet<T>& Tt,
                             EstimatorKind estimator = EstimatorKind::biased_quadratic) {
    if (S.count < 1 || Tt.count < 1) throw TensorError("gaussian_bandwidth: empty sample set");
    if (S.dim != Tt.dim) throw TensorError("gaussian_bandwidth: dimension mismatch");
    if (estimator == EstimatorKind::biased_quadratic) return detail::bandwidth_all_pairs(S, Tt);
    // linear-time pairing in the given order: 4 pairs per block of two
    const int L = 2 * (std::min(S.count, Tt.count) / 2);
    if (L < 2) throw TensorError("gaussian_bandwidth: fewer than 2 usable samples per side");
    double total = 0.0;
    for (int i = 0; i + 1 < L; i += 2) {
        total += static_cast<double>(detail::sqdist(S.vec(i), S.vec(i + 1), S.dim));
        total += static_cast<double>(detail::sqdist(Tt.vec(i), Tt.vec(i + 1), Tt.dim));
        total += static_cast<double>(detail::sqdist(S.vec(i), Tt.vec(i + 1), S.dim));
        total += static_cast<double>(detail::sqdist(S.vec(i + 1), Tt.vec(i), S.dim));
    }
    double sigma2 = total / (4.0 * (L / 2));
    if (sigma2 <= 0.0) return {1e-8, true};
    return {sigma2, false};
}

/// Biased quadratic MMD^2 estimate:
///   (1/m^2) sum k(s_i,s_j) + (1/n^2) sum k(t_i,t_j) - (2/mn) sum k(s_i,t_j).
/// When grad is non-null it receives d(loss)/d(s_a) as a count x dim matrix
/// (the bandwidth of an auto-sigma gaussian is treated as a constant).
template <typename T>
T mmd2_biased(const SampleSet<T>& S, const SampleSet<T>& Tt, const KernelSpec& k,
              std::vector<T>* grad = nullptr, Bandwidth* bw_out = nullptr) {
    k.validate();
    if (S.count < 1 || Tt.count < 1) throw TensorError("mmd2_biased: empty sample set");
    if (S.dim != Tt.dim)
        throw TensorError("mmd2_biased: vector dimension mismatch " + std::to_string(S.dim) + " vs " +
                          std::to_string(Tt.dim));
    const int m = S.count, n = Tt.count, dim = S.dim;
    const bool gauss = k.family == KernelFamily::gaussian;

    T sigma2 = T(1);
    Bandwidth bw;
    if (gauss) {
        if (k.sigma2)
            bw = {*k.sigma2, false};
        else
            bw = gaussian_bandwidth(S, Tt, EstimatorKind::biased_quadratic);
        sigma2 = static_cast<T>(bw.sigma2);
        if (bw_out) *bw_out = bw;
    }

    // pair statistic: dot product for linear/polynomial, squared distance for gaussian
    auto stat = [&](const T* a, const T* b) { return gauss ? detail::sqdist(a, b, dim) : detail::dot(a, b, dim); };
    auto kval = [&](T s) {
        return gauss ? detail::kernel_from_stats<T>(k, T(0), s, sigma2) : detail::kernel_from_stats<T>(k, s, T(0), sigma2);
    };

    std::vector<T> k_ss(static_cast<size_t>(m) * m), k_st(static_cast<size_t>(m) * n);
    std::vector<T> stat_ss, stat_st;
    const bool need_stats = grad != nullptr && k.family != KernelFamily::linear;
    if (need_stats) {
        stat_ss.resize(k_ss.size());
        stat_st.resize(k_st.size());
    }
    T sum_ss = T(0), sum_tt = T(0), sum_st = T(0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            T s = stat(S.vec(i), S.vec(j));
            T kv = kval(s);
            k_ss[static_cast<size_t>(i) * m + j] = kv;
            if (need_stats) stat_ss[static_cast<size_t>(i) * m + j] = s;
            sum_ss += kv;
        }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sum_tt += kval(stat(Tt.vec(i), Tt.vec(j)));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T s = stat(S.vec(i), Tt.vec(j));
            T kv = kval(s);
            k_st[static_cast<size_t>(i) * n + j] = kv;
            if (need_stats) stat_st[static_cast<size_t>(i) * n + j] = s;
            sum_st += kv;
        }
    const T loss = sum_ss / (static_cast<T>(m) * m) + sum_tt / (static_cast<T>(n) * n) -
                   T(2) * sum_st / (static_cast<T>(m) * n);

    if (grad) {
        grad->assign(static_cast<size_t>(m) * dim, T(0));
        const T w_self = T(2) / (static_cast<T>(m) * m);
        const T w_cross = T(2) / (static_cast<T>(m) * n);
        for (int a = 0; a < m; ++a) {
            T* g = grad->data() + static_cast<size_t>(a) * dim;
            for (int j = 0; j < m; ++j) {
                const T* sj = S.vec(j);
                const T* sa = S.vec(a);
                switch (k.family) {
                    case KernelFamily::linear:
                        for (int q = 0; q < dim; ++q) g[q] += w_self * sj[q];
                        break;
                    case KernelFamily::polynomial: {
                        T base = stat_ss[static_cast<size_t>(a) * m + j] + static_cast<T>(k.c);
                        T w = static_cast<T>(k.d);
                        for (int i = 1; i < k.d; ++i) w *= base;
                        for (int q = 0; q < dim; ++q) g[q] += w_self * w * sj[q];
                        break;
                    }
                    case KernelFamily::gaussian: {
                        T w = k_ss[static_cast<size_t>(a) * m + j] / sigma2;
                        for (int q = 0; q < dim; ++q) g[q] += w_self * w * (sj[q] - sa[q]);
                        break;
                    }
                }
            }
            for (int j = 0; j < n; ++j) {
                const T* tj = Tt.vec(j);
                const T* sa = S.vec(a);
                switch (k.family) {
                    case KernelFamily::linear:
                        for (int q = 0; q < dim; ++q) g[q] -= w_cross * tj[q];
                        break;
                    case KernelFamily::polynomial: {
                        T base = stat_st[static_cast<size_t>(a) * n + j] + static_cast<T>(k.c);
                        T w = static_cast<T>(k.d);
                        for (int i = 1; i < k.d; ++i) w *= base;
                        for (int q = 0; q < dim; ++q) g[q] -= w_cross * w * tj[q];
                        break;
                    }
                    case KernelFamily::gaussian: {
                        T w = k_st[static_cast<size_t>(a) * n + j] / sigma2;
                        for (int q = 0; q < dim; ++q) g[q] -= w_cross * w * (tj[q] - sa[q]);
                        break;
                    }
                }
            }
        }
    }
    return loss;
}

/// Linear-time unbiased MMD^2: both sets are shuffled (when a seed is given;
/// otherwise paired in order), truncated to a common even length, and the
/// block statistic
///   h = k(s1,s2) + k(t1,t2) - k(s1,t2) - k(s2,t1)
/// is averaged over consecutive blocks of two samples per side.
template <typename T>
T mmd2_linear_time(const SampleSet<T>& S, const SampleSet<T>& Tt, const KernelSpec& k,
                   std::optional<uint64_t> shuffle_seed = std::nullopt, Bandwidth* bw_out = nullptr) {
    k.validate();
    if (S.dim != Tt.dim) throw TensorError("mmd2_linear_time: vector dimension mismatch");
    const int L = 2 * (std::min(S.count, Tt.count) / 2);
    if (L < 2) throw TensorError("mmd2_linear_time: fewer than 2 usable samples per side");

    std::vector<int> ps(S.count), pt(Tt.count);
    for (int i = 0; i < S.count; ++i) ps[i] = i;
    for (int i = 0; i < Tt.count; ++i) pt[i] = i;
    if (shuffle_seed) {
        Rng rs(derive_seed(*shuffle_seed, "mmd_lt:s"));
        Rng rt(derive_seed(*shuffle_seed, "mmd_lt:t"));
        rs.shuffle(ps);
        rt.shuffle(pt);
    }

    const int dim = S.dim;
    const bool gauss = k.family == KernelFamily::gaussian;
    T sigma2 = T(1);
    if (gauss) {
        Bandwidth bw;
        if (k.sigma2) {
            bw = {*k.sigma2, false};
        } else {
            double total = 0.0;
            for (int i = 0; i + 1 < L; i += 2) {
                total += static_cast<double>(detail::sqdist(S.vec(ps[i]), S.vec(ps[i + 1]), dim));
                total += static_cast<double>(detail::sqdist(Tt.vec(pt[i]), Tt.vec(pt[i + 1]), dim));
                total += static_cast<double>(detail::sqdist(S.vec(ps[i]), Tt.vec(pt[i + 1]), dim));
                total += static_cast<double>(detail::sqdist(S.vec(ps[i + 1]), Tt.vec(pt[i]), dim));
            }
            double s2 = total / (4.0 * (L / 2));
            bw = s2 > 0.0 ? Bandwidth{s2, false} : Bandwidth{1e-8, true};
        }
        sigma2 = static_cast<T>(bw.sigma2);
        if (bw_out) *bw_out = bw;
    }

    auto kv = [&](const T* a, const T* b) {
        if (gauss) return detail::kernel_from_stats<T>(k, T(0), detail::sqdist(a, b, dim), sigma2);
        return detail::kernel_from_stats<T>(k, detail::dot(a, b, dim), T(0), sigma2);
    };
    T total = T(0);
    for (int i = 0; i + 1 < L; i += 2) {
        const T* s1 = S.vec(ps[i]);
        const T* s2 = S.vec(ps[i + 1]);
        const T* t1 = Tt.vec(pt[i]);
        const T* t2 = Tt.vec(pt[i + 1]);
        total += kv(s1, s2) + kv(t1, t2) - kv(s1, t2) - kv(s2, t1);
    }
    return total / static_cast<T>(L / 2);
}

/// Pair-wise alignment loss: MMD^2 between the split sample sets.
/// grad (optional) receives d(loss)/dS as a channels x positions matrix.
template <typename T>
T paa_loss(const FeatureMap<T>& Sfm, const FeatureMap<T>& Tfm, const KernelSpec& k,
           SplitStrategy strategy = SplitStrategy::point_wise, std::vector<T>* grad = nullptr,
           Bandwidth* bw_out = nullptr) {
    if (strategy == SplitStrategy::point_wise && Sfm.channels != Tfm.channels)
        throw TensorError("paa_loss: channel count mismatch " + std::to_string(Sfm.channels) + " vs " +
                          std::to_string(Tfm.channels));
    if (strategy == SplitStrategy::channel_wise && Sfm.positions != Tfm.positions)
        throw TensorError("paa_loss: position count mismatch " + std::to_string(Sfm.positions) + " vs " +
                          std::to_string(Tfm.positions));
    SampleSet<T> S = split(Sfm, strategy);
    SampleSet<T> Tset = split(Tfm, strategy);
    std::vector<T> sample_grad;
    T loss = mmd2_biased(S, Tset, k, grad ? &sample_grad : nullptr, bw_out);
    if (grad) {
        grad->assign(Sfm.values.size(), T(0));
        if (strategy == SplitStrategy::channel_wise) {
            *grad = sample_grad;
        } else {
            const int N = Sfm.channels, M = Sfm.positions;
            for (int p = 0; p < M; ++p)
                for (int c = 0; c < N; ++c)
                    (*grad)[static_cast<size_t>(c) * M + p] = sample_grad[static_cast<size_t>(p) * N + c];
        }
    }
    return loss;
}

template <typename T>
struct MomentSummary {
    std::vector<T> means;      // per-channel mean over positions
    std::vector<T> variances;  // per-channel population variance
};

template <typename T>
MomentSummary<T> gaa_moments(const FeatureMap<T>& fm) {
    MomentSummary<T> ms;
    ms.means.resize(fm.channels);
    ms.variances.resize(fm.channels);
    const T inv_m = T(1) / static_cast<T>(fm.positions);
    for (int c = 0; c < fm.channels; ++c) {
        T mu = T(0);
        for (int p = 0; p < fm.positions; ++p) mu += fm.at(c, p);
        mu *= inv_m;
        T var = T(0);
        for (int p = 0; p < fm.positions; ++p) {
            T d = fm.at(c, p) - mu;
            var += d * d;
        }
        ms.means[c] = mu;
        ms.variances[c] = var * inv_m;
    }
    return ms;
}

/// Global-wise alignment loss: mean over channels of squared mean gaps plus
/// mean over channels of squared variance gaps.
template <typename T>
T gaa_loss(const FeatureMap<T>& Sfm, const FeatureMap<T>& Tfm, std::vector<T>* grad = nullptr) {
    if (Sfm.channels != Tfm.channels)
        throw TensorError("gaa_loss: channel count mismatch " + std::to_string(Sfm.channels) + " vs " +
                          std::to_string(Tfm.channels));
    MomentSummary<T> s = gaa_moments(Sfm);
    MomentSummary<T> t = gaa_moments(Tfm);
    const int N = Sfm.channels, M = Sfm.positions;
    T dmu = T(0), dsig = T(0);
    for (int c = 0; c < N; ++c) {
        T a = s.means[c] - t.means[c];
        T b = s.variances[c] - t.variances[c];
        dmu += a * a;
        dsig += b * b;
    }
    const T inv_n = T(1) / static_cast<T>(N);
    const T loss = (dmu + dsig) * inv_n;
    if (grad) {
        grad->assign(Sfm.values.size(), T(0));
        const T inv_m = T(1) / static_cast<T>(M);
        for (int c = 0; c < N; ++c) {
            const T gmu = T(2) * inv_n * (s.means[c] - t.means[c]) * inv_m;
            const T gsig = T(2) * inv_n * (s.variances[c] - t.variances[c]);
            for (int p = 0; p < M; ++p)
                (*grad)[static_cast<size_t>(c) * M + p] =
                    gmu + gsig * T(2) * inv_m * (Sfm.at(c, p) - s.means[c]);
        }
    }
    return loss;
}

/// Baseline: pixel-wise squared Euclidean distance between the maps.
template <typename T>
T euclid_loss(const FeatureMap<T>& Sfm, const FeatureMap<T>& Tfm, std::vector<T>* grad = nullptr) {
    if (Sfm.channels != Tfm.channels || Sfm.positions != Tfm.positions)
        throw TensorError("euclid_loss: shape mismatch " + std::to_string(Sfm.channels) + "x" +
                          std::to_string(Sfm.positions) + " vs " + std::to_string(Tfm.channels) + "x" +
                          std::to_string(Tfm.positions));
    T loss = T(0);
    if (grad) grad->assign(Sfm.values.size(), T(0));
    for (size_t i = 0; i < Sfm.values.size(); ++i) {
        T d = Sfm.values[i] - Tfm.values[i];
        loss += d * d;
        if (grad) (*grad)[i] = T(2) * d;
    }
    return loss;
}

// ---- tape wrappers -------------------------------------------------------
// Each wrapper views a (1,C,H,W) tap activation as a C x (H*W) feature map,
// computes the loss and its analytic gradient, and records the gradient on
// the tape so attacks can differentiate straight through to the image.

namespace detail {

template <typename T>
Tensor<T> loss_node(const Tensor<T>& tap, T value, std::vector<T>&& grad_values,
                    std::type_identity_t<Tape<T>>* tape) {
    Tensor<T> out = Tensor<T>::from_data({1}, {value});
    out.check_finite("statalign loss");
    if (tape && tap.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> in = tap;
        tape->record([in, out, g = std::move(grad_values)]() mutable {
            const T go = out.grad()[0];
            T* gi = in.grad();
            for (size_t i = 0; i < g.size(); ++i) gi[i] += go * g[i];
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> paa_loss_node(const Tensor<T>& tap, const FeatureMap<T>& target, const KernelSpec& k,
                        SplitStrategy strategy, std::type_identity_t<Tape<T>>* tape,
                        Bandwidth* bw_out = nullptr) {
    FeatureMap<T> S = FeatureMap<T>::from_tensor(tap);
    std::vector<T> grad;
    const bool want_grad = tape && tap.requires_grad();
    T v = paa_loss(S, target, k, strategy, want_grad ? &grad : nullptr, bw_out);
    return detail::loss_node(tap, v, std::move(grad), tape);
}

template <typename T>
Tensor<T> gaa_loss_node(const Tensor<T>& tap, const FeatureMap<T>& target,
                        std::type_identity_t<Tape<T>>* tape) {
    FeatureMap<T> S = FeatureMap<T>::from_tensor(tap);
    std::vector<T> grad;
    const bool want_grad = tape && tap.requires_grad();
    T v = gaa_loss(S, target, want_grad ? &grad : nullptr);
    return detail::loss_node(tap, v, std::move(grad), tape);
}

template <typename T>
Tensor<T> euclid_loss_node(const Tensor<T>& tap, const FeatureMap<T>& target,
                           std::type_identity_t<Tape<T>>* tape) {
    FeatureMap<T> S = FeatureMap<T>::from_tensor(tap);
    std::vector<T> grad;
    const bool want_grad = tape && tap.requires_grad();
    T v = euclid_loss(S, target, want_grad ? &grad : nullptr);
    return detail::loss_node(tap, v, std::move(grad), tape);
}

}  // namespace statalign
