#pragma once

#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <json.hpp>

#include "statalign/attack.hpp"

namespace statalign {

/// One attacked image evaluated against one black-box model.
struct TransferRecord {
    int image_id = -1;
    int y = -1;
    int y_tgt = -1;
    std::string white_box, black_box;
    bool white_success = false;  // white-box predicts y_tgt on x_adv
    bool black_success = false;  // black-box predicts y_tgt on x_adv
    LossKind loss = LossKind::paa_p;
    int tap = 0;
    std::string config_hash;
};

/// Targeted success rate: percentage of records whose adversarial example
/// fools the black box into the target label.
inline double eval_tsuc(const std::vector<TransferRecord>& records) {
    if (records.empty()) throw TensorError("eval_tsuc on an empty record set");
    int hits = 0;
    for (const auto& r : records) hits += r.black_success ? 1 : 0;
    return 100.0 * hits / static_cast<double>(records.size());
}

/// Targeted transfer rate over the white-box successes; not applicable
/// (nullopt) when nothing fooled the white box.
inline std::optional<double> eval_ttr(const std::vector<TransferRecord>& records) {
    int white = 0, both = 0, black = 0;
    for (const auto& r : records) {
        white += r.white_success ? 1 : 0;
        black += r.black_success ? 1 : 0;
        both += (r.white_success && r.black_success) ? 1 : 0;
    }
    if (white == 0) return std::nullopt;
    // count reconciliation: the joint successes can exceed neither side
    if (both > white || both > black || black > static_cast<int>(records.size()))
        throw TensorError("transfer record counts do not reconcile");
    const double ttr = 100.0 * both / static_cast<double>(white);
    // when every black-box success also fooled the white box, tTR >= tSuc
    if (both == black && ttr + 1e-9 < eval_tsuc(records))
        throw TensorError("tTR < tSuc although the white-box success set covers the black-box one");
    return ttr;
}

enum class TimingMode { none, wall };  // none writes 0.000 so reruns are byte-identical

/// One aggregate line of the results schema.
struct ResultRow {
    std::string white_box, black_box;
    LossKind loss = LossKind::paa_p;
    int tap = 0;
    std::string rank_or_random = "random";
    double c = 0.0;
    uint64_t seed = 0;
    int n_images = 0;
    double tsuc = 0.0;
    std::optional<double> ttr;
    double runtime_s = 0.0;

    bool operator==(const ResultRow& o) const {
        return white_box == o.white_box && black_box == o.black_box && loss == o.loss && tap == o.tap &&
               rank_or_random == o.rank_or_random && c == o.c && seed == o.seed && n_images == o.n_images &&
               tsuc == o.tsuc && ttr == o.ttr && runtime_s == o.runtime_s;
    }
};

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

/// Label-balanced draw of attack images that every model classifies
/// correctly. Deterministic given the seed.
inline std::vector<int> select_attack_images(std::vector<Model<float>*> models, const Dataset& ds, int n,
                                             uint64_t seed) {
    std::vector<std::vector<int>> by_label(ds.num_classes);
    const int batch = 64;
    std::vector<bool> all_correct(ds.count, true);
    for (Model<float>* m : models) {
        for (int start = 0; start < ds.count; start += batch) {
            const int cnt = std::min(batch, ds.count - start);
            std::vector<int> idx(cnt);
            std::iota(idx.begin(), idx.end(), start);
            auto fwd = m->forward(ds.batch(idx), nullptr, false);
            for (int i = 0; i < cnt; ++i) {
                const float* row = fwd.logits.data() + static_cast<size_t>(i) * m->num_classes;
                int pred = static_cast<int>(std::max_element(row, row + m->num_classes) - row);
                if (pred != ds.labels[start + i]) all_correct[start + i] = false;
            }
        }
    }
    for (int i = 0; i < ds.count; ++i)
        if (all_correct[i]) by_label[ds.labels[i]].push_back(i);
    for (int l = 0; l < ds.num_classes; ++l) {
        Rng rng(derive_seed(seed, "attack_images", l));
        rng.shuffle(by_label[l]);
    }
    std::vector<int> out;
    for (size_t round = 0; static_cast<int>(out.size()) < n; ++round) {
        bool any = false;
        for (int l = 0; l < ds.num_classes && static_cast<int>(out.size()) < n; ++l)
            if (round < by_label[l].size()) {
                out.push_back(by_label[l][round]);
                any = true;
            }
        if (!any) break;  // exhausted the eligible pool
    }
    if (static_cast<int>(out.size()) < n)
        throw TensorError("only " + std::to_string(out.size()) + " images are correctly classified by all " +
                          "models; " + std::to_string(n) + " requested");
    return out;
}

struct RunSpec {
    AttackConfig attack;
    int n_images = 100;
    int gallery_k = 20;
    uint64_t gallery_seed = 1;  // gallery and image pools stay fixed while attack seeds vary
    uint64_t images_seed = 2;
    int threads = 0;
    TimingMode timing = TimingMode::none;
    std::string config_hash;
};

struct TransferRun {
    std::vector<int> image_indices;
    std::vector<AdversarialResult> attacks;      // one per image
    std::vector<TransferRecord> records;         // one per (image, black box)
    std::vector<ResultRow> rows;                 // one per black box
    double seconds = 0.0;
};

/// Attacks `n_images` eligible images of `ds` on the white box in parallel,
/// then evaluates every adversarial example on each black box.
inline TransferRun run_transfer(Model<float>& white, const std::vector<Model<float>*>& blacks,
                                const Dataset& ds, const RunSpec& spec, const Gallery* prebuilt = nullptr) {
    spec.attack.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Model<float>*> all = {&white};
    for (auto* b : blacks) all.push_back(b);

    TransferRun run;
    run.image_indices = select_attack_images(all, ds, spec.n_images, spec.images_seed);

    Gallery local;
    const Gallery* gallery = prebuilt;
    if (!gallery && is_feature_loss(spec.attack.loss)) {
        local = build_gallery(ds, white, spec.attack.tap, spec.gallery_k, spec.gallery_seed);
        gallery = &local;
    }

    run.attacks.resize(run.image_indices.size());
    parallel_for(static_cast<int>(run.image_indices.size()), spec.threads, [&](int i) {
        const int idx = run.image_indices[i];
        run.attacks[i] = run_attack(white, ds.image(idx), ds.labels[idx], spec.attack, gallery,
                                    derive_seed(spec.attack.seed, "attack:image", idx));
    });

    // batched black-box evaluation of all adversarial examples
    for (Model<float>* black : blacks) {
        const int batch = 64;
        std::vector<int> preds(run.attacks.size());
        for (size_t start = 0; start < run.attacks.size(); start += batch) {
            const int cnt = static_cast<int>(std::min<size_t>(batch, run.attacks.size() - start));
            Tensor<float> x({cnt, ds.channels, ds.height, ds.width});
            for (int i = 0; i < cnt; ++i)
                std::copy(run.attacks[start + i].x_adv.data(),
                          run.attacks[start + i].x_adv.data() + run.attacks[start + i].x_adv.size(),
                          x.data() + static_cast<size_t>(i) * ds.image_size());
            auto fwd = black->forward(x, nullptr, false);
            for (int i = 0; i < cnt; ++i) {
                const float* row = fwd.logits.data() + static_cast<size_t>(i) * black->num_classes;
                preds[start + i] = static_cast<int>(std::max_element(row, row + black->num_classes) - row);
            }
        }
        for (size_t i = 0; i < run.attacks.size(); ++i) {
            const AdversarialResult& a = run.attacks[i];
            TransferRecord rec;
            rec.image_id = run.image_indices[i];
            rec.y = a.y;
            rec.y_tgt = a.y_tgt;
            rec.white_box = white.arch.name;
            rec.black_box = black->arch.name;
            rec.white_success = a.white_prediction == a.y_tgt;
            rec.black_success = preds[i] == a.y_tgt;
            rec.loss = spec.attack.loss;
            rec.tap = spec.attack.tap;
            rec.config_hash = spec.config_hash;
            run.records.push_back(std::move(rec));
        }
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    for (Model<float>* black : blacks) {
        std::vector<TransferRecord> subset;
        for (const auto& r : run.records)
            if (r.black_box == black->arch.name) subset.push_back(r);
        ResultRow row;
        row.white_box = white.arch.name;
        row.black_box = black->arch.name;
        row.loss = spec.attack.loss;
        row.tap = spec.attack.tap;
        row.rank_or_random = spec.attack.label_mode.str();
        row.c = spec.attack.loss == LossKind::paa_p ? spec.attack.kernel.c : 0.0;
        row.seed = spec.attack.seed;
        row.n_images = static_cast<int>(run.image_indices.size());
        row.tsuc = eval_tsuc(subset);
        row.ttr = eval_ttr(subset);
        row.runtime_s = spec.timing == TimingMode::wall ? run.seconds : 0.0;
        run.rows.push_back(std::move(row));
    }
    return run;
}

struct SweepResult {
    std::string axis;            // "tap" | "rank" | "c"
    std::vector<double> values;
    std::vector<ResultRow> rows;
};

/// One full attack + transfer evaluation per tap; galleries are rebuilt per
/// tap and shared across the seeds.
inline SweepResult layer_sweep(Model<float>& white, const std::vector<Model<float>*>& blacks,
                               const Dataset& ds, const RunSpec& base, const std::vector<int>& taps,
                               const std::vector<uint64_t>& seeds) {
    SweepResult out;
    out.axis = "tap";
    for (int tap : taps) {
        out.values.push_back(tap);
        Gallery gallery;
        bool have_gallery = false;
        if (is_feature_loss(base.attack.loss)) {
            gallery = build_gallery(ds, white, tap, base.gallery_k, base.gallery_seed);
            have_gallery = true;
        }
        for (uint64_t seed : seeds) {
            RunSpec spec = base;
            spec.attack.tap = tap;
            spec.attack.seed = seed;
            TransferRun run = run_transfer(white, blacks, ds, spec, have_gallery ? &gallery : nullptr);
            out.rows.insert(out.rows.end(), run.rows.begin(), run.rows.end());
        }
    }
    return out;
}

inline SweepResult rank_sweep(Model<float>& white, const std::vector<Model<float>*>& blacks,
                              const Dataset& ds, const RunSpec& base, const std::vector<int>& ranks,
                              const std::vector<uint64_t>& seeds) {
    SweepResult out;
    out.axis = "rank";
    Gallery gallery;
    bool have_gallery = false;
    if (is_feature_loss(base.attack.loss)) {
        gallery = build_gallery(ds, white, base.attack.tap, base.gallery_k, base.gallery_seed);
        have_gallery = true;
    }
    for (int rank : ranks) {
        out.values.push_back(rank);
        for (uint64_t seed : seeds) {
            RunSpec spec = base;
            spec.attack.label_mode = LabelMode::rank_mode(rank);
            spec.attack.seed = seed;
            TransferRun run = run_transfer(white, blacks, ds, spec, have_gallery ? &gallery : nullptr);
            out.rows.insert(out.rows.end(), run.rows.begin(), run.rows.end());
        }
    }
    return out;
}

/// Polynomial-bias sweep for the pair-wise polynomial loss.
inline SweepResult c_sweep(Model<float>& white, const std::vector<Model<float>*>& blacks, const Dataset& ds,
                           const RunSpec& base, const std::vector<double>& c_values,
                           const std::vector<uint64_t>& seeds) {
    if (base.attack.loss != LossKind::paa_p)
        throw TensorError("the bias sweep applies to the polynomial pair-wise loss");
    SweepResult out;
    out.axis = "c";
    Gallery gallery = build_gallery(ds, white, base.attack.tap, base.gallery_k, base.gallery_seed);
    for (double c : c_values) {
        if (c < 0.0) throw TensorError("polynomial bias c must be >= 0");
        out.values.push_back(c);
        for (uint64_t seed : seeds) {
            RunSpec spec = base;
            spec.attack.kernel.c = c;
            spec.attack.seed = seed;
            TransferRun run = run_transfer(white, blacks, ds, spec, &gallery);
            out.rows.insert(out.rows.end(), run.rows.begin(), run.rows.end());
        }
    }
    return out;
}

struct TranslationReport {
    int shift = 1;
    // feature of the image vs feature of its horizontal mirror
    double flip_euclid = 0, flip_paa_linear = 0, flip_paa_poly = 0, flip_paa_gauss = 0, flip_gaa = 0;
    // feature map vs its circular column shift
    double shift_euclid = 0, shift_paa_linear = 0, shift_paa_poly = 0, shift_paa_gauss = 0, shift_gaa = 0;
};

/// Contrasts the losses on a real feature map against its spatially shifted
/// self: the statistic losses must be invariant under the column shift while
/// the Euclidean baseline is not. Computed in 64-bit.
inline TranslationReport translation_demo(Model<float>& model, const Tensor<float>& image, int tap,
                                          int shift = 1) {
    FeatureMap<float> feat_f = forward_to_tap(model, image, tap);

    Tensor<float> flipped(image.shape());
    const int C = image.dim(1), H = image.dim(2), W = image.dim(3);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                flipped.data()[(c * H + y) * W + (W - 1 - x)] = image.data()[(c * H + y) * W + x];
    FeatureMap<float> feat_flip_f = forward_to_tap(model, flipped, tap);

    auto widen = [](const FeatureMap<float>& f) {
        return FeatureMap<double>(f.channels, f.positions, std::vector<double>(f.values.begin(), f.values.end()));
    };
    FeatureMap<double> feat = widen(feat_f);
    FeatureMap<double> feat_flip = widen(feat_flip_f);
    FeatureMap<double> feat_shift = feat.shifted_columns(shift);

    TranslationReport rep;
    rep.shift = shift;
    rep.flip_euclid = euclid_loss(feat, feat_flip);
    rep.flip_paa_linear = paa_loss(feat, feat_flip, KernelSpec::linear());
    rep.flip_paa_poly = paa_loss(feat, feat_flip, KernelSpec::polynomial(0.0, 2));
    rep.flip_paa_gauss = paa_loss(feat, feat_flip, KernelSpec::gaussian());
    rep.flip_gaa = gaa_loss(feat, feat_flip);

    rep.shift_euclid = euclid_loss(feat, feat_shift);
    rep.shift_paa_linear = paa_loss(feat, feat_shift, KernelSpec::linear());
    rep.shift_paa_poly = paa_loss(feat, feat_shift, KernelSpec::polynomial(0.0, 2));
    rep.shift_paa_gauss = paa_loss(feat, feat_shift, KernelSpec::gaussian());
    rep.shift_gaa = gaa_loss(feat, feat_shift);

    const int effective = ((shift % feat.positions) + feat.positions) % feat.positions;
    if (effective != 0) {
        if (std::abs(rep.shift_paa_linear) > 1e-9 || std::abs(rep.shift_paa_poly) > 1e-9 ||
            std::abs(rep.shift_paa_gauss) > 1e-9 || std::abs(rep.shift_gaa) > 1e-9)
            throw TensorError("statistic losses are not invariant under the column shift");
        bool constant = true;
        for (double v : feat.values)
            if (v != feat.values[0]) constant = false;
        if (!constant && rep.shift_euclid <= 1e-3)
            throw TensorError("Euclidean distance unexpectedly invariant under the column shift");
    }
    return rep;
}

// ---- result export -------------------------------------------------------

inline const char* result_csv_header() {
    return "white_box,black_box,loss,tap,rank_or_random,c,seed,n_images,tsuc,ttr,runtime_s";
}

inline std::string format_row(const ResultRow& r) {
    char ttr[32];
    if (r.ttr)
        std::snprintf(ttr, sizeof(ttr), "%.4f", *r.ttr);
    else
        std::snprintf(ttr, sizeof(ttr), "na");
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%s,%.2f,%llu,%d,%.4f,%s,%.3f", r.white_box.c_str(),
                  r.black_box.c_str(), to_string(r.loss), r.tap, r.rank_or_random.c_str(), r.c,
                  static_cast<unsigned long long>(r.seed), r.n_images, r.tsuc, ttr, r.runtime_s);
    return buf;
}

inline void export_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw TensorError("cannot write " + path);
    out << result_csv_header() << "\n";
    for (const auto& r : rows) out << format_row(r) << "\n";
}

inline void export_json(const std::vector<ResultRow>& rows, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json o;
        o["white_box"] = r.white_box;
        o["black_box"] = r.black_box;
        o["loss"] = to_string(r.loss);
        o["tap"] = r.tap;
        o["rank_or_random"] = r.rank_or_random;
        o["c"] = r.c;
        o["seed"] = r.seed;
        o["n_images"] = r.n_images;
        o["tsuc"] = r.tsuc;
        if (r.ttr)
            o["ttr"] = *r.ttr;
        else
            o["ttr"] = nullptr;
        o["runtime_s"] = r.runtime_s;
        arr.push_back(std::move(o));
    }
    std::ofstream out(path);
    if (!out) throw TensorError("cannot write " + path);
    out << arr.dump(2) << "\n";
}

inline std::vector<ResultRow> import_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("cannot open " + path);
    nlohmann::json arr = nlohmann::json::parse(in);
    std::vector<ResultRow> rows;
    for (const auto& o : arr) {
        ResultRow r;
        r.white_box = o.at("white_box").get<std::string>();
        r.black_box = o.at("black_box").get<std::string>();
        r.loss = loss_kind_from_string(o.at("loss").get<std::string>());
        r.tap = o.at("tap").get<int>();
        r.rank_or_random = o.at("rank_or_random").get<std::string>();
        r.c = o.at("c").get<double>();
        r.seed = o.at("seed").get<uint64_t>();
        r.n_images = o.at("n_images").get<int>();
        r.tsuc = o.at("tsuc").get<double>();
        if (!o.at("ttr").is_null()) r.ttr = o.at("ttr").get<double>();
        r.runtime_s = o.at("runtime_s").get<double>();
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<ResultRow> import_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != result_csv_header())
        throw TensorError("unexpected CSV header in " + path);
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        size_t pos = 0;
        while (pos <= line.size()) {
            size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                f.push_back(line.substr(pos));
                break;
            }
            f.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (f.size() != 11) throw TensorError("malformed CSV row in " + path);
        ResultRow r;
        r.white_box = f[0];
        r.black_box = f[1];
        r.loss = loss_kind_from_string(f[2]);
        r.tap = std::stoi(f[3]);
        r.rank_or_random = f[4];
        r.c = std::stod(f[5]);
        r.seed = std::stoull(f[6]);
        r.n_images = std::stoi(f[7]);
        r.tsuc = std::stod(f[8]);
        if (f[9] != "na") r.ttr = std::stod(f[9]);
        r.runtime_s = std::stod(f[10]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace statalign
