#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "statalign/feature_map.hpp"
#include "statalign/ops.hpp"
#include "statalign/rng.hpp"
#include "statalign/tensor.hpp"

namespace statalign {

enum class BlockKind { conv, pool, residual, inception, linear };

inline const char* to_string(BlockKind k) {
    switch (k) {
        case BlockKind::conv: return "conv";
        case BlockKind::pool: return "pool";
        case BlockKind::residual: return "residual";
        case BlockKind::inception: return "inception";
        case BlockKind::linear: return "linear";
    }
    return "?";
}

struct BlockSpec {
    BlockKind kind = BlockKind::conv;
    int channels = 0;            // conv output width; residual keeps its input width
    int b1 = 0, b3 = 0, b5 = 0;  // inception branch widths (1x1, 3x3, 5x5)

    static BlockSpec conv(int out) { return {BlockKind::conv, out, 0, 0, 0}; }
    static BlockSpec pool() { return {BlockKind::pool, 0, 0, 0, 0}; }
    static BlockSpec residual(int ch) { return {BlockKind::residual, ch, 0, 0, 0}; }
    static BlockSpec inception(int b1, int b3, int b5) { return {BlockKind::inception, b1 + b3 + b5, b1, b3, b5}; }
    static BlockSpec linear() { return {BlockKind::linear, 0, 0, 0, 0}; }
};

/// Block list plus the ordered tap points exposing intermediate activations.
/// Tap 0 is nearest the input; the last tap is nearest the classifier.
struct Architecture {
    std::string name;
    std::vector<BlockSpec> blocks;
    std::vector<int> tap_points;
    int in_channels = 1;
    int image_size = 32;

    void validate() const {
        if (blocks.empty() || blocks.back().kind != BlockKind::linear)
            throw TensorError("architecture '" + name + "' must end with a linear block");
        for (size_t i = 0; i < tap_points.size(); ++i) {
            if (tap_points[i] < 0 || tap_points[i] >= static_cast<int>(blocks.size()))
                throw TensorError("tap point out of range in '" + name + "'");
            if (i > 0 && tap_points[i] <= tap_points[i - 1])
                throw TensorError("tap points must be strictly increasing in '" + name + "'");
        }
    }
};

// The three shipped desk-scale networks: a plain stack, a residual variant
// and an inception-style mix, with 4 / 5 / 6 taps respectively.
inline std::vector<Architecture> shipped_architectures() {
    Architecture vgg;
    vgg.name = "vgg_small";
    vgg.blocks = {BlockSpec::conv(12), BlockSpec::pool(), BlockSpec::conv(24), BlockSpec::pool(),
                  BlockSpec::conv(48), BlockSpec::pool(), BlockSpec::conv(48), BlockSpec::pool(),
                  BlockSpec::linear()};
    vgg.tap_points = {1, 2, 4, 6};

    Architecture res;
    res.name = "res_small";
    res.blocks = {BlockSpec::conv(12),     BlockSpec::pool(),     BlockSpec::residual(12),
                  BlockSpec::pool(),       BlockSpec::conv(24),   BlockSpec::residual(24),
                  BlockSpec::pool(),       BlockSpec::conv(48),   BlockSpec::residual(48),
                  BlockSpec::pool(),       BlockSpec::linear()};
    res.tap_points = {1, 2, 4, 5, 8};

    Architecture mix;
    mix.name = "mix_small";
    mix.blocks = {BlockSpec::conv(12),           BlockSpec::pool(),
                  BlockSpec::conv(24),           BlockSpec::pool(),
                  BlockSpec::inception(8, 12, 8), BlockSpec::pool(),
                  BlockSpec::inception(12, 12, 8), BlockSpec::pool(),
                  BlockSpec::linear()};
    mix.tap_points = {0, 1, 2, 4, 6, 7};
    return {vgg, res, mix};
}

inline Architecture architecture_by_name(const std::string& name) {
    for (auto& a : shipped_architectures())
        if (a.name == name) return a;
    throw TensorError("unknown architecture '" + name + "' (expected vgg_small, res_small or mix_small)");
}

template <typename T>
struct ConvBn {
    Tensor<T> w, b, gamma, beta, run_mean, run_var;
    int ksize = 3, stride = 1, pad = 1;
};

template <typename T>
struct BlockParams {
    std::vector<ConvBn<T>> convs;
    Tensor<T> lin_w, lin_b;
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    bool learnable = true;  // running statistics are checkpointed but not SGD-updated
};

/// A built network. Parameters are owned tensors; forward in inference mode
/// is read-only and safe to share across threads.
template <typename T>
class Model {
public:
    Architecture arch;
    int num_classes = 0;
    std::vector<BlockParams<T>> blocks;

    struct ForwardResult {
        Tensor<T> logits;               // empty when the pass stopped at a tap
        std::vector<Tensor<T>> taps;    // one entry per requested tap point
    };

    int tap_count() const { return static_cast<int>(arch.tap_points.size()); }

    /// Runs the network. `training` selects batch-statistics batchnorm and
    /// updates the running buffers; attacks and evaluation always run with
    /// training=false. `upto_tap` < 0 runs to the logits, otherwise the pass
    /// stops right after the tap'th tap point.
    ForwardResult forward(const Tensor<T>& x, Tape<T>* tape, bool training = false, int upto_tap = -1) {
        if (x.shape().size() != 4 || x.dim(1) != arch.in_channels || x.dim(2) != arch.image_size ||
            x.dim(3) != arch.image_size)
            throw TensorError("model '" + arch.name + "' expects Nx" + std::to_string(arch.in_channels) + "x" +
                              std::to_string(arch.image_size) + "x" + std::to_string(arch.image_size) +
                              " input, got " + shape_str(x.shape()));
        if (upto_tap >= tap_count()) throw TensorError("tap index " + std::to_string(upto_tap) +
                                                       " out of range for '" + arch.name + "'");
        ForwardResult out;
        Tensor<T> cur = x;
        int next_tap = 0;
        for (size_t bi = 0; bi < arch.blocks.size(); ++bi) {
            const BlockSpec& spec = arch.blocks[bi];
            BlockParams<T>& p = blocks[bi];
            switch (spec.kind) {
                case BlockKind::conv:
                    cur = conv_bn_relu(cur, p.convs[0], training, tape);
                    break;
                case BlockKind::pool:
                    cur = maxpool2d(cur, tape);
                    break;
                case BlockKind::residual: {
                    Tensor<T> y = conv_bn_relu(cur, p.convs[0], training, tape);
                    y = conv_bn(y, p.convs[1], training, tape);
                    cur = relu(add(y, cur, tape), tape);
                    break;
                }
                case BlockKind::inception: {
                    std::vector<Tensor<T>> branches;
                    for (auto& cb : p.convs) branches.push_back(conv_bn_relu(cur, cb, training, tape));
                    cur = concat_channels(branches, tape);
                    break;
                }
                case BlockKind::linear:
                    cur = linear(flatten(cur, tape), p.lin_w, p.lin_b, tape);
                    break;
            }
            if (next_tap < tap_count() && arch.tap_points[next_tap] == static_cast<int>(bi)) {
                out.taps.push_back(cur);
                if (upto_tap >= 0 && next_tap == upto_tap) return out;
                ++next_tap;
            }
        }
        out.logits = cur;
        return out;
    }

    std::vector<NamedParam<T>> parameters() {
        std::vector<NamedParam<T>> ps;
        for (size_t bi = 0; bi < arch.blocks.size(); ++bi) {
            const std::string prefix = "block" + std::to_string(bi);
            BlockParams<T>& p = blocks[bi];
            for (size_t ci = 0; ci < p.convs.size(); ++ci) {
                const std::string cp = prefix + ".conv" + std::to_string(ci);
                ConvBn<T>& cb = p.convs[ci];
                ps.push_back({cp + ".w", cb.w, true});
                ps.push_back({cp + ".b", cb.b, true});
                ps.push_back({cp + ".gamma", cb.gamma, true});
                ps.push_back({cp + ".beta", cb.beta, true});
                ps.push_back({cp + ".run_mean", cb.run_mean, false});
                ps.push_back({cp + ".run_var", cb.run_var, false});
            }
            if (arch.blocks[bi].kind == BlockKind::linear) {
                ps.push_back({prefix + ".w", p.lin_w, true});
                ps.push_back({prefix + ".b", p.lin_b, true});
            }
        }
        return ps;
    }

private:
    static Tensor<T> conv_bn(const Tensor<T>& x, ConvBn<T>& cb, bool training, Tape<T>* tape) {
        Tensor<T> y = conv2d(x, cb.w, cb.b, cb.stride, cb.pad, tape);
        return batchnorm2d(y, cb.gamma, cb.beta, cb.run_mean, cb.run_var, training, tape);
    }
    static Tensor<T> conv_bn_relu(const Tensor<T>& x, ConvBn<T>& cb, bool training, Tape<T>* tape) {
        return relu(conv_bn(x, cb, training, tape), tape);
    }
};

namespace detail {

template <typename T>
ConvBn<T> make_conv_bn(int in_ch, int out_ch, int ksize, int pad, Rng& rng) {
    ConvBn<T> cb;
    cb.ksize = ksize;
    cb.pad = pad;
    const int fan_in = in_ch * ksize * ksize;
    const double bound = std::sqrt(6.0 / fan_in);
    cb.w = Tensor<T>({out_ch, in_ch, ksize, ksize});
    for (size_t i = 0; i < cb.w.size(); ++i) cb.w.data()[i] = static_cast<T>(rng.next_real(-bound, bound));
    const double bbound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    cb.b = Tensor<T>({out_ch});
    for (size_t i = 0; i < cb.b.size(); ++i) cb.b.data()[i] = static_cast<T>(rng.next_real(-bbound, bbound));
    cb.gamma = Tensor<T>({out_ch}, T(1));
    cb.beta = Tensor<T>({out_ch}, T(0));
    cb.run_mean = Tensor<T>({out_ch}, T(0));
    cb.run_var = Tensor<T>({out_ch}, T(1));
    return cb;
}

}  // namespace detail

/// Deterministic Kaiming-uniform initialization given the seed.
template <typename T>
Model<T> build(const Architecture& arch, int num_classes, uint64_t seed) {
    arch.validate();
    Model<T> m;
    m.arch = arch;
    m.num_classes = num_classes;
    Rng rng(derive_seed(seed, "init:" + arch.name));
    int ch = arch.in_channels;
    int hw = arch.image_size;
    for (const BlockSpec& spec : arch.blocks) {
        BlockParams<T> p;
        switch (spec.kind) {
            case BlockKind::conv:
                p.convs.push_back(detail::make_conv_bn<T>(ch, spec.channels, 3, 1, rng));
                ch = spec.channels;
                break;
            case BlockKind::pool:
                if (hw % 2) throw TensorError("pool on odd spatial size in '" + arch.name + "'");
                hw /= 2;
                break;
            case BlockKind::residual:
                if (spec.channels != ch)
                    throw TensorError("residual block expects " + std::to_string(ch) + " channels in '" +
                                      arch.name + "'");
                p.convs.push_back(detail::make_conv_bn<T>(ch, ch, 3, 1, rng));
                p.convs.push_back(detail::make_conv_bn<T>(ch, ch, 3, 1, rng));
                // start the block as identity: zero gain on the closing batchnorm
                for (size_t i = 0; i < p.convs[1].gamma.size(); ++i) p.convs[1].gamma.data()[i] = T(0);
                break;
            case BlockKind::inception:
                p.convs.push_back(detail::make_conv_bn<T>(ch, spec.b1, 1, 0, rng));
                p.convs.push_back(detail::make_conv_bn<T>(ch, spec.b3, 3, 1, rng));
                p.convs.push_back(detail::make_conv_bn<T>(ch, spec.b5, 5, 2, rng));
                ch = spec.channels;
                break;
            case BlockKind::linear: {
                const int fan_in = ch * hw * hw;
                const double bound = std::sqrt(6.0 / fan_in);
                p.lin_w = Tensor<T>({num_classes, fan_in});
                for (size_t i = 0; i < p.lin_w.size(); ++i)
                    p.lin_w.data()[i] = static_cast<T>(rng.next_real(-bound, bound));
                const double bbound = 1.0 / std::sqrt(static_cast<double>(fan_in));
                p.lin_b = Tensor<T>({num_classes});
                for (size_t i = 0; i < p.lin_b.size(); ++i)
                    p.lin_b.data()[i] = static_cast<T>(rng.next_real(-bbound, bbound));
                break;
            }
        }
        m.blocks.push_back(std::move(p));
    }
    return m;
}

/// Feature map at the given tap for a single image, inference mode.
template <typename T>
FeatureMap<T> forward_to_tap(Model<T>& model, const Tensor<T>& image, int tap) {
    if (tap < 0 || tap >= model.tap_count())
        throw TensorError("tap " + std::to_string(tap) + " out of range (model has " +
                          std::to_string(model.tap_count()) + " taps)");
    auto fwd = model.forward(image, nullptr, false, tap);
    return FeatureMap<T>::from_tensor(fwd.taps.back());
}

template <typename T>
std::vector<T> predict(Model<T>& model, const Tensor<T>& image) {
    auto fwd = model.forward(image, nullptr, false);
    return fwd.logits.values();
}

template <typename T>
int argmax(const std::vector<T>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Label whose logit is the k-th largest (k=1 is the top prediction).
/// Ties break toward the lower label index.
template <typename T>
int rank_of_label(const std::vector<T>& logits, int k) {
    const int C = static_cast<int>(logits.size());
    if (k < 1 || k > C)
        throw TensorError("rank " + std::to_string(k) + " out of range for " + std::to_string(C) + " classes");
    std::vector<int> idx(C);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });
    return idx[k - 1];
}

}  // namespace statalign
