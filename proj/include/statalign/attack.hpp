#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "statalign/dataset.hpp"
#include "statalign/losses.hpp"
#include "statalign/model.hpp"

namespace statalign {

enum class LossKind { paa_l, paa_p, paa_g, gaa, euclid, mifgsm };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::paa_l: return "paa_l";
        case LossKind::paa_p: return "paa_p";
        case LossKind::paa_g: return "paa_g";
        case LossKind::gaa: return "gaa";
        case LossKind::euclid: return "euclid";
        case LossKind::mifgsm: return "mifgsm";
    }
    return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
    for (LossKind k : {LossKind::paa_l, LossKind::paa_p, LossKind::paa_g, LossKind::gaa, LossKind::euclid,
                       LossKind::mifgsm})
        if (s == to_string(k)) return k;
    throw TensorError("unknown loss '" + s + "' (expected paa_l|paa_p|paa_g|gaa|euclid|mifgsm)");
}

inline bool is_feature_loss(LossKind k) { return k != LossKind::mifgsm; }

/// Target label selection: uniform over the non-true labels, or the label
/// ranked k-th by the white-box confidence on the clean image.
struct LabelMode {
    bool random = true;
    int rank = 2;

    static LabelMode random_mode() { return {true, 0}; }
    static LabelMode rank_mode(int k) { return {false, k}; }

    std::string str() const { return random ? "random" : "rank:" + std::to_string(rank); }

    static LabelMode parse(const std::string& s) {
        if (s == "random") return random_mode();
        if (s.rfind("rank:", 0) == 0) return rank_mode(std::stoi(s.substr(5)));
        throw TensorError("bad label mode '" + s + "' (expected random or rank:K)");
    }
};

enum class GradNorm { l1, l2 };

struct AttackConfig {
    double epsilon = 0.07;
    int iters = 20;
    double alpha = -1.0;  // < 0 selects the default step epsilon / iters
    double decay = 1.0;
    LossKind loss = LossKind::paa_p;
    KernelSpec kernel = KernelSpec::polynomial(0.0, 2);
    int tap = 0;
    SplitStrategy strategy = SplitStrategy::point_wise;
    LabelMode label_mode = LabelMode::random_mode();
    uint64_t seed = 0;
    GradNorm grad_norm = GradNorm::l1;

    double step_size() const { return alpha < 0.0 ? epsilon / iters : alpha; }

    KernelSpec kernel_for_loss() const {
        switch (loss) {
            case LossKind::paa_l: return KernelSpec::linear();
            case LossKind::paa_p: return KernelSpec::polynomial(kernel.c, kernel.d);
            case LossKind::paa_g: return KernelSpec::gaussian(kernel.sigma2);
            default: return kernel;
        }
    }

    void validate() const {
        if (epsilon < 0.0 || epsilon >= 1.0) throw TensorError("epsilon must lie in [0,1)");
        if (iters < 1) throw TensorError("iteration count must be >= 1");
        if (decay < 0.0) throw TensorError("decay must be >= 0");
        if (!label_mode.random && label_mode.rank < 2)
            throw TensorError("rank targets start at 2: rank 1 is the true label of a correctly "
                              "classified image and never a valid target");
        kernel_for_loss().validate();
        if (tap < 0) throw TensorError("tap must be >= 0");
    }
};

struct GalleryEntry {
    int dataset_index = -1;
    Tensor<float> image;
    FeatureMap<float> feature;
};

/// Per-label pools of correctly classified candidate target images with
/// their tap features cached for scoring.
struct Gallery {
    std::string model_name;
    int tap = 0;
    int entries_per_label = 0;
    uint64_t seed = 0;
    std::vector<std::vector<GalleryEntry>> per_label;

    const std::vector<GalleryEntry>& sub_gallery(int label) const {
        if (label < 0 || label >= static_cast<int>(per_label.size()))
            throw TensorError("gallery has no label " + std::to_string(label));
        return per_label[label];
    }
};

/// Deterministically samples K correctly classified images per label and
/// caches their features at the given tap.
inline Gallery build_gallery(const Dataset& ds, Model<float>& model, int tap, int K, uint64_t seed) {
    if (tap < 0 || tap >= model.tap_count()) throw TensorError("gallery tap out of range");
    Gallery g;
    g.model_name = model.arch.name;
    g.tap = tap;
    g.entries_per_label = K;
    g.seed = seed;
    g.per_label.resize(ds.num_classes);

    // one batched prediction pass over the whole dataset
    std::vector<int> predicted(ds.count);
    const int batch = 64;
    std::vector<int> idx;
    for (int start = 0; start < ds.count; start += batch) {
        const int n = std::min(batch, ds.count - start);
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), start);
        auto fwd = model.forward(ds.batch(idx), nullptr, false);
        for (int i = 0; i < n; ++i) {
            const float* row = fwd.logits.data() + static_cast<size_t>(i) * model.num_classes;
            predicted[start + i] = static_cast<int>(std::max_element(row, row + model.num_classes) - row);
        }
    }

    for (int label = 0; label < ds.num_classes; ++label) {
        std::vector<int> candidates;
        for (int i = 0; i < ds.count; ++i)
            if (ds.labels[i] == label && predicted[i] == label) candidates.push_back(i);
        if (static_cast<int>(candidates.size()) < K)
            throw TensorError("gallery needs " + std::to_string(K) + " correctly classified images of label " +
                              std::to_string(label) + " but the dataset provides only " +
                              std::to_string(candidates.size()));
        Rng rng(derive_seed(seed, "gallery", label));
        rng.shuffle(candidates);
        candidates.resize(K);
        for (int i : candidates) {
            GalleryEntry e;
            e.dataset_index = i;
            e.image = ds.image(i);
            e.feature = forward_to_tap(model, e.image, tap);
            g.per_label[label].push_back(std::move(e));
        }
    }
    return g;
}

inline int select_target_label(const std::vector<float>& clean_logits, int y, const LabelMode& mode, Rng& rng) {
    const int C = static_cast<int>(clean_logits.size());
    if (mode.random) {
        int pick = static_cast<int>(rng.next_below(C - 1));
        return pick >= y ? pick + 1 : pick;
    }
    if (mode.rank == 1)
        throw TensorError("rank 1 is the true label of a correctly classified image; pick rank >= 2");
    return rank_of_label(clean_logits, mode.rank);
}

/// Picks the sub-gallery image whose feature is furthest from the clean
/// source feature under the scoring loss: the linear-time MMD^2 estimate for
/// the pair-wise losses, the moment loss for GAA and the squared Euclidean
/// distance for the baseline. Ties break to the lowest gallery index.
inline const GalleryEntry& select_target_image(const Gallery& gallery, int y_tgt,
                                               const FeatureMap<float>& clean_feature, const AttackConfig& cfg,
                                               uint64_t pairing_seed) {
    const auto& pool = gallery.sub_gallery(y_tgt);
    if (pool.empty()) throw TensorError("empty sub-gallery for label " + std::to_string(y_tgt));
    const KernelSpec kernel = cfg.kernel_for_loss();
    SampleSet<float> S = split(clean_feature, cfg.strategy);
    double best = -std::numeric_limits<double>::infinity();
    const GalleryEntry* pick = nullptr;
    for (const auto& entry : pool) {
        double score = 0.0;
        switch (cfg.loss) {
            case LossKind::paa_l:
            case LossKind::paa_p:
            case LossKind::paa_g:
                score = mmd2_linear_time(S, split(entry.feature, cfg.strategy), kernel, pairing_seed);
                break;
            case LossKind::gaa:
                score = gaa_loss(clean_feature, entry.feature);
                break;
            case LossKind::euclid:
                score = euclid_loss(clean_feature, entry.feature);
                break;
            case LossKind::mifgsm:
                throw TensorError("mifgsm does not select a target image");
        }
        if (score > best) {
            best = score;
            pick = &entry;
        }
    }
    return *pick;
}

struct MomentumState {
    Tensor<float> beta;  // zero-initialized accumulator, image-shaped
    int step = 0;

    explicit MomentumState(const std::vector<int>& shape) : beta(shape, 0.0f) {}
};

struct StepOutcome {
    Tensor<float> x;
    bool zero_grad = false;
};

/// One momentum-sign update: the gradient is normalized (L1 by default),
/// folded into the momentum accumulator, and the image moves one signed step
/// before projection onto the epsilon box and the [0,1] pixel range. A zero
/// gradient contributes nothing to the accumulator (the momentum just
/// decays) and is flagged.
inline StepOutcome attack_step(const Tensor<float>& x_adv, const Tensor<float>& x_orig,
                               const Tensor<float>& grad, MomentumState& state, const AttackConfig& cfg) {
    grad.check_finite("attack gradient");
    double norm = 0.0;
    for (size_t i = 0; i < grad.size(); ++i)
        norm += cfg.grad_norm == GradNorm::l1 ? std::abs(double(grad.data()[i]))
                                              : double(grad.data()[i]) * grad.data()[i];
    if (cfg.grad_norm == GradNorm::l2) norm = std::sqrt(norm);

    StepOutcome out;
    out.zero_grad = norm == 0.0;
    const float mu = static_cast<float>(cfg.decay);
    const float inv_norm = out.zero_grad ? 0.0f : static_cast<float>(1.0 / norm);
    float* beta = state.beta.data();
    for (size_t i = 0; i < grad.size(); ++i) beta[i] = mu * beta[i] + inv_norm * grad.data()[i];

    const float alpha = static_cast<float>(cfg.step_size());
    const float eps = static_cast<float>(cfg.epsilon);
    out.x = Tensor<float>(x_adv.shape());
    for (size_t i = 0; i < x_adv.size(); ++i) {
        const float sign = beta[i] > 0.0f ? 1.0f : (beta[i] < 0.0f ? -1.0f : 0.0f);
        float v = x_adv.data()[i] - alpha * sign;
        v = std::min(x_orig.data()[i] + eps, std::max(x_orig.data()[i] - eps, v));
        out.x.data()[i] = std::min(1.0f, std::max(0.0f, v));
    }
    ++state.step;
    return out;
}

struct AdversarialResult {
    Tensor<float> x_adv;
    int y = -1;
    int y_tgt = -1;
    int target_gallery_index = -1;     // dataset index of the chosen target image
    std::vector<double> loss_trace;    // loss at x_0 .. x_T, length iters+1
    int white_prediction = -1;
    double seconds = 0.0;
    int zero_grad_steps = 0;
    int degenerate_bandwidth_steps = 0;
};

/// Full pipeline on one image: target label selection, target image
/// selection (feature losses), then `iters` momentum-sign steps against the
/// chosen loss. The attack seed drives label sampling and the linear-time
/// pairing used for gallery scoring.
inline AdversarialResult run_attack(Model<float>& model, const Tensor<float>& x, int y,
                                    const AttackConfig& cfg, const Gallery* gallery, uint64_t attack_seed) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    std::vector<float> clean_logits = predict(model, x);
    if (argmax(clean_logits) != y)
        throw TensorError("attack expects a correctly classified source image (predicted " +
                          std::to_string(argmax(clean_logits)) + ", label " + std::to_string(y) + ")");

    AdversarialResult res;
    res.y = y;
    Rng label_rng(derive_seed(attack_seed, "label"));
    res.y_tgt = select_target_label(clean_logits, y, cfg.label_mode, label_rng);

    FeatureMap<float> target_feature;
    if (is_feature_loss(cfg.loss)) {
        if (!gallery) throw TensorError("feature-space losses need a gallery");
        if (gallery->model_name != model.arch.name || gallery->tap != cfg.tap)
            throw TensorError("gallery was built for " + gallery->model_name + " tap " +
                              std::to_string(gallery->tap) + ", attack wants " + model.arch.name + " tap " +
                              std::to_string(cfg.tap));
        if (cfg.tap >= model.tap_count()) throw TensorError("tap out of range for " + model.arch.name);
        FeatureMap<float> clean_feature = forward_to_tap(model, x, cfg.tap);
        const GalleryEntry& entry =
            select_target_image(*gallery, res.y_tgt, clean_feature, cfg, derive_seed(attack_seed, "pairing"));
        target_feature = entry.feature;
        res.target_gallery_index = entry.dataset_index;
    }

    const KernelSpec kernel = cfg.kernel_for_loss();
    auto eval_loss = [&](const Tensor<float>& img, Tape<float>* tape, Bandwidth* bw) -> Tensor<float> {
        if (cfg.loss == LossKind::mifgsm) {
            auto fwd = model.forward(img, tape, false);
            return softmax_cross_entropy(fwd.logits, {res.y_tgt}, tape);
        }
        auto fwd = model.forward(img, tape, false, cfg.tap);
        const Tensor<float>& tap_out = fwd.taps.back();
        switch (cfg.loss) {
            case LossKind::paa_l:
            case LossKind::paa_p:
            case LossKind::paa_g:
                return paa_loss_node(tap_out, target_feature, kernel, cfg.strategy, tape, bw);
            case LossKind::gaa:
                return gaa_loss_node(tap_out, target_feature, tape);
            default:
                return euclid_loss_node(tap_out, target_feature, tape);
        }
    };

    Tensor<float> x_cur = x.clone();
    MomentumState state(x.shape());
    for (int step = 0; step < cfg.iters; ++step) {
        Tensor<float> img = x_cur.clone();
        img.set_requires_grad(true);
        Tape<float> tape;
        Bandwidth bw;
        Tensor<float> loss = eval_loss(img, &tape, &bw);
        if (bw.degenerate) ++res.degenerate_bandwidth_steps;
        res.loss_trace.push_back(loss.item());
        tape.backward(loss);
        Tensor<float> grad = Tensor<float>::from_data(img.shape(),
                                                      std::vector<float>(img.grad(), img.grad() + img.size()));
        StepOutcome step_out = attack_step(x_cur, x, grad, state, cfg);
        if (step_out.zero_grad) ++res.zero_grad_steps;
        x_cur = step_out.x;
    }
    res.loss_trace.push_back(eval_loss(x_cur, nullptr, nullptr).item());
    res.x_adv = x_cur;
    res.white_prediction = argmax(predict(model, x_cur));

    const float eps_slack = static_cast<float>(cfg.epsilon) + 1e-6f;
    for (size_t i = 0; i < x.size(); ++i) {
        const float d = std::abs(res.x_adv.data()[i] - x.data()[i]);
        if (d > eps_slack || res.x_adv.data()[i] < 0.0f || res.x_adv.data()[i] > 1.0f)
            throw TensorError("perturbation constraint violated at pixel " + std::to_string(i));
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

}  // namespace statalign
