#pragma once

#include <string>
#include <vector>

#include "statalign/tensor.hpp"

namespace statalign {

/// An intermediate activation viewed as a channels x positions matrix,
/// where positions = height * width of the tapped layer. Row-major.
template <typename T>
struct FeatureMap {
    int channels = 0;
    int positions = 0;
    std::vector<T> values;

    FeatureMap() = default;
    FeatureMap(int n, int m, std::vector<T> v) : channels(n), positions(m), values(std::move(v)) {
        validate();
    }

    T at(int c, int p) const { return values[static_cast<size_t>(c) * positions + p]; }
    T& at(int c, int p) { return values[static_cast<size_t>(c) * positions + p]; }

    void validate() const {
        if (channels < 1 || positions < 1)
            throw TensorError("feature map needs at least one channel and one position");
        if (values.size() != static_cast<size_t>(channels) * positions)
            throw TensorError("feature map value count does not match " + std::to_string(channels) + "x" +
                              std::to_string(positions));
        for (T v : values)
            if (!std::isfinite(static_cast<double>(v))) throw TensorError("non-finite feature map value");
    }

    /// Interprets an NCHW activation with N==1 (or an already 2-D tensor)
    /// as channels x positions.
    static FeatureMap from_tensor(const Tensor<T>& t) {
        const auto& s = t.shape();
        if (s.size() == 4) {
            if (s[0] != 1) throw TensorError("feature map tap expects a single image, got batch " + shape_str(s));
            return FeatureMap(s[1], s[2] * s[3], t.values());
        }
        if (s.size() == 2) return FeatureMap(s[0], s[1], t.values());
        throw TensorError("cannot view tensor " + shape_str(s) + " as a feature map");
    }

    FeatureMap permuted_columns(const std::vector<int>& perm) const {
        FeatureMap out = *this;
        for (int c = 0; c < channels; ++c)
            for (int p = 0; p < positions; ++p) out.at(c, p) = at(c, perm[p]);
        return out;
    }

    FeatureMap shifted_columns(int shift) const {
        std::vector<int> perm(positions);
        for (int p = 0; p < positions; ++p)
            perm[p] = ((p + shift) % positions + positions) % positions;
        return permuted_columns(perm);
    }
};

enum class SplitStrategy { point_wise, channel_wise };

inline const char* to_string(SplitStrategy s) {
    return s == SplitStrategy::point_wise ? "point_wise" : "channel_wise";
}

/// A bag of equal-dimension vectors sampled from a feature map. Stored
/// row-major as count x dim.
template <typename T>
struct SampleSet {
    int count = 0;
    int dim = 0;
    SplitStrategy strategy = SplitStrategy::point_wise;
    std::vector<T> data;

    const T* vec(int i) const { return data.data() + static_cast<size_t>(i) * dim; }
    T* vec(int i) { return data.data() + static_cast<size_t>(i) * dim; }
};

/// point_wise yields one vector per spatial position (dim = channels);
/// channel_wise yields one vector per channel (dim = positions).
template <typename T>
SampleSet<T> split(const FeatureMap<T>& fm, SplitStrategy strategy) {
    SampleSet<T> set;
    set.strategy = strategy;
    if (strategy == SplitStrategy::channel_wise) {
        set.count = fm.channels;
        set.dim = fm.positions;
        set.data = fm.values;
    } else {
        set.count = fm.positions;
        set.dim = fm.channels;
        set.data.resize(fm.values.size());
        for (int p = 0; p < fm.positions; ++p)
            for (int c = 0; c < fm.channels; ++c)
                set.data[static_cast<size_t>(p) * fm.channels + c] = fm.at(c, p);
    }
    return set;
}

}  // namespace statalign
