#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "statalign/tensor.hpp"

namespace statalign {

enum class KernelFamily { linear, polynomial, gaussian };

inline const char* to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::linear: return "linear";
        case KernelFamily::polynomial: return "polynomial";
        case KernelFamily::gaussian: return "gaussian";
    }
    return "?";
}

/// Kernel family plus hyperparameters. A gaussian spec without sigma2 uses
/// the median-free bandwidth heuristic: the mean squared pair distance over
/// exactly the pairs the active estimator touches.
struct KernelSpec {
    KernelFamily family = KernelFamily::linear;
    double c = 0.0;      // polynomial bias, >= 0
    int d = 2;           // polynomial power, >= 1
    std::optional<double> sigma2;  // gaussian bandwidth; empty = auto

    void validate() const {
        if (family == KernelFamily::polynomial) {
            if (d < 1) throw TensorError("polynomial kernel needs power d >= 1");
            if (c < 0.0) throw TensorError("polynomial kernel needs bias c >= 0");
        }
        if (family == KernelFamily::gaussian && sigma2 && *sigma2 <= 0.0)
            throw TensorError("gaussian kernel needs sigma2 > 0");
    }

    static KernelSpec linear() { return {KernelFamily::linear, 0.0, 1, std::nullopt}; }
    static KernelSpec polynomial(double c, int d) { return {KernelFamily::polynomial, c, d, std::nullopt}; }
    static KernelSpec gaussian(std::optional<double> sigma2 = std::nullopt) {
        return {KernelFamily::gaussian, 0.0, 2, sigma2};
    }
};

namespace detail {

template <typename T>
T dot(const T* a, const T* b, int dim) {
    T s = T(0);
    for (int i = 0; i < dim; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
T sqdist(const T* a, const T* b, int dim) {
    T s = T(0);
    for (int i = 0; i < dim; ++i) {
        T d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Kernel value from the pair's precomputed dot product / squared distance.
template <typename T>
T kernel_from_stats(const KernelSpec& k, T dot, T sqd, T sigma2) {
    switch (k.family) {
        case KernelFamily::linear: return dot;
        case KernelFamily::polynomial: {
            T base = dot + static_cast<T>(k.c);
            T r = base;
            for (int i = 1; i < k.d; ++i) r *= base;
            return r;
        }
        case KernelFamily::gaussian: return std::exp(-sqd / (T(2) * sigma2));
    }
    return T(0);
}

}  // namespace detail

/// k(s, t) for vectors of equal dimension. A gaussian spec must carry an
/// explicit sigma2 here; the auto heuristic only makes sense inside an
/// estimator that sees whole sample sets.
template <typename T>
T kernel_eval(const KernelSpec& k, const T* s, const T* t, int dim) {
    k.validate();
    if (k.family == KernelFamily::gaussian) {
        if (!k.sigma2) throw TensorError("kernel_eval: gaussian kernel needs an explicit sigma2");
        return detail::kernel_from_stats<T>(k, T(0), detail::sqdist(s, t, dim), static_cast<T>(*k.sigma2));
    }
    return detail::kernel_from_stats<T>(k, detail::dot(s, t, dim), T(0), T(1));
}

template <typename T>
T kernel_eval(const KernelSpec& k, const std::vector<T>& s, const std::vector<T>& t) {
    if (s.size() != t.size())
        throw TensorError("kernel_eval: dimension mismatch " + std::to_string(s.size()) + " vs " +
                          std::to_string(t.size()));
    return kernel_eval(k, s.data(), t.data(), static_cast<int>(s.size()));
}

}  // namespace statalign
