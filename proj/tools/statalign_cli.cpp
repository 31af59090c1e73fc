// Command-line driver: dataset generation and ingestion, model training,
// targeted attacks, the three sweep experiments, the translation-invariance
// demo and result export.
//
// All randomness derives from one --seed via named streams (see rng.hpp):
//   train:<arch>       weight init and batch shuffling
//   gallery            gallery sampling, fixed across evaluation seeds
//   images             attack-image selection, fixed across evaluation seeds
//   eval,<i>           per-run attack seed i (label draws, scoring pairing)

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "statalign/checkpoint.hpp"
#include "statalign/harness.hpp"
#include "statalign/synth.hpp"
#include "statalign/train.hpp"

namespace fs = std::filesystem;
using namespace statalign;

namespace {

struct AttackCliOpts {
    std::string dataset_images, dataset_labels;
    std::string checkpoint_dir;
    std::string out = "run_out";
    std::string white = "vgg_small";
    std::vector<std::string> blacks;  // empty = the other two shipped architectures
    uint64_t seed = 1;
    double eps = 0.07;
    int iters = 20;
    double alpha = -1.0;
    double decay = 1.0;
    std::string loss = "paa_p";
    double kernel_c = 0.0;
    int kernel_d = 2;
    std::string sigma2 = "auto";
    int tap = 0;
    std::string label_mode = "random";
    int gallery_k = 20;
    std::string split = "point";
    int n_images = 100;
    int eval_seeds = 1;
    int threads = 0;
    std::string timing = "none";
};

void add_attack_options(CLI::App* sub, AttackCliOpts& o) {
    sub->option_defaults()->always_capture_default();
    sub->add_option("--dataset-images", o.dataset_images, "IDX image file of the attack pool")->required();
    sub->add_option("--dataset-labels", o.dataset_labels, "IDX label file of the attack pool")->required();
    sub->add_option("--checkpoint-dir", o.checkpoint_dir, "directory holding <arch>.ckpt files")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--white", o.white, "white-box architecture");
    sub->add_option("--black", o.blacks, "black-box architectures (default: the other two)");
    sub->add_option("--seed", o.seed, "global seed");
    sub->add_option("--eps", o.eps, "l-infinity budget on [0,1] pixels");
    sub->add_option("--iters", o.iters, "attack iterations T");
    sub->add_option("--alpha", o.alpha, "step size (negative = eps/T)");
    sub->add_option("--decay", o.decay, "momentum decay mu");
    sub->add_option("--loss", o.loss, "paa_l|paa_p|paa_g|gaa|euclid|mifgsm");
    sub->add_option("--kernel-c", o.kernel_c, "polynomial bias c");
    sub->add_option("--kernel-d", o.kernel_d, "polynomial power d");
    sub->add_option("--sigma2", o.sigma2, "gaussian bandwidth: auto or a positive number");
    sub->add_option("--tap", o.tap, "relative layer depth to attack");
    sub->add_option("--label-mode", o.label_mode, "random or rank:K");
    sub->add_option("--gallery-k", o.gallery_k, "gallery images per label");
    sub->add_option("--split", o.split, "point or channel sample splitting");
    sub->add_option("--n-images", o.n_images, "number of attack images");
    sub->add_option("--eval-seeds", o.eval_seeds, "number of evaluation seeds");
    sub->add_option("--threads", o.threads, "worker threads (0 = all cores)");
    sub->add_option("--timing", o.timing, "runtime_s column: none (deterministic) or wall");
    sub->set_config("--config", "", "flat key=value config file; command-line flags override");
    sub->allow_config_extras(false);
}

AttackConfig make_attack_config(const AttackCliOpts& o) {
    AttackConfig cfg;
    cfg.epsilon = o.eps;
    cfg.iters = o.iters;
    cfg.alpha = o.alpha;
    cfg.decay = o.decay;
    cfg.loss = loss_kind_from_string(o.loss);
    cfg.kernel.c = o.kernel_c;
    cfg.kernel.d = o.kernel_d;
    if (o.sigma2 != "auto") cfg.kernel.sigma2 = std::stod(o.sigma2);
    cfg.tap = o.tap;
    if (o.split == "point")
        cfg.strategy = SplitStrategy::point_wise;
    else if (o.split == "channel")
        cfg.strategy = SplitStrategy::channel_wise;
    else
        throw TensorError("--split must be point or channel");
    cfg.label_mode = LabelMode::parse(o.label_mode);
    if (o.timing != "none" && o.timing != "wall") throw TensorError("--timing must be none or wall");
    cfg.validate();
    return cfg;
}

RunSpec make_run_spec(const AttackCliOpts& o, const AttackConfig& cfg, const std::string& hash) {
    RunSpec spec;
    spec.attack = cfg;
    spec.n_images = o.n_images;
    spec.gallery_k = o.gallery_k;
    spec.gallery_seed = derive_seed(o.seed, "gallery");
    spec.images_seed = derive_seed(o.seed, "images");
    spec.threads = o.threads;
    spec.timing = o.timing == "wall" ? TimingMode::wall : TimingMode::none;
    spec.config_hash = hash;
    return spec;
}

Model<float> load_model(const std::string& dir, const std::string& arch) {
    const fs::path path = fs::path(dir) / (arch + ".ckpt");
    if (!fs::exists(path))
        throw TensorError("checkpoint not found: " + path.string() + " (train it first: statalign train --arch " +
                          arch + " ...)");
    return load_checkpoint(path.string());
}

std::vector<std::string> default_blacks(const std::string& white) {
    std::vector<std::string> out;
    for (auto& a : shipped_architectures())
        if (a.name != white) out.push_back(a.name);
    return out;
}

// The resolved configuration is written into every run directory; feeding it
// back through --config reproduces the run. Its FNV-1a hash keys the records.
std::string write_run_config(CLI::App* sub, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string resolved = sub->config_to_str(true, false);
    std::ofstream f(fs::path(out_dir) / "resolved_config.txt");
    f << resolved;
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a64(resolved)));
    return hex;
}

std::vector<uint64_t> eval_seed_list(uint64_t master, int count) {
    std::vector<uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(derive_seed(master, "eval", i));
    return seeds;
}

void write_rows(const std::vector<ResultRow>& rows, const std::string& out_dir) {
    export_csv(rows, (fs::path(out_dir) / "results.csv").string());
    export_json(rows, (fs::path(out_dir) / "results.json").string());
}

void print_rows(const std::vector<ResultRow>& rows) {
    std::cout << result_csv_header() << "\n";
    for (const auto& r : rows) std::cout << format_row(r) << "\n";
}

int cmd_gen_data(const std::string& out, int train_per_class, int test_per_class, uint64_t seed) {
    fs::create_directories(out);
    Dataset train = make_desk_dataset(train_per_class, seed, "train");
    Dataset test = make_desk_dataset(test_per_class, seed, "test");
    write_idx(train, (fs::path(out) / "train-images.idx").string(), (fs::path(out) / "train-labels.idx").string());
    write_idx(test, (fs::path(out) / "test-images.idx").string(), (fs::path(out) / "test-labels.idx").string());
    std::cout << "wrote " << train.count << " train and " << test.count << " test images to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"statistic-alignment feature-space targeted attacks"};
    app.require_subcommand(1);

    // gen-data ---------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "synthesize the 10-class desk dataset as IDX files");
    gen->option_defaults()->always_capture_default();
    std::string gen_out = "data";
    int gen_train = 150, gen_test = 150;
    uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--train-per-class", gen_train, "training images per label");
    gen->add_option("--test-per-class", gen_test, "test images per label");
    gen->add_option("--seed", gen_seed, "global seed");
    gen->set_config("--config");
    gen->allow_config_extras(false);

    // train ------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train one or all of the shipped architectures");
    tr->option_defaults()->always_capture_default();
    std::string tr_images, tr_labels, tr_val_images, tr_val_labels, tr_arch = "all", tr_dir = "checkpoints";
    int tr_epochs = 20, tr_batch = 32;
    double tr_lr = 0.08;
    uint64_t tr_seed = 1;
    tr->add_option("--dataset-images", tr_images, "IDX training images")->required();
    tr->add_option("--dataset-labels", tr_labels, "IDX training labels")->required();
    tr->add_option("--val-images", tr_val_images, "optional IDX validation images");
    tr->add_option("--val-labels", tr_val_labels, "optional IDX validation labels");
    tr->add_option("--arch", tr_arch, "vgg_small|res_small|mix_small|all");
    tr->add_option("--checkpoint-dir", tr_dir, "where to write <arch>.ckpt");
    tr->add_option("--epochs", tr_epochs, "max epochs");
    tr->add_option("--lr", tr_lr, "learning rate");
    tr->add_option("--batch", tr_batch, "batch size");
    tr->add_option("--seed", tr_seed, "global seed");
    tr->set_config("--config");
    tr->allow_config_extras(false);

    // attack and sweeps --------------------------------------------------
    AttackCliOpts at, sl, sr, sc;
    auto* attack = app.add_subcommand("attack", "attack the white box and evaluate transfer");
    add_attack_options(attack, at);
    auto* sweep_layers = app.add_subcommand("sweep-layers", "transferability per relative layer depth");
    add_attack_options(sweep_layers, sl);
    std::string sl_taps = "all";
    sweep_layers->add_option("--taps", sl_taps, "comma-separated tap list or 'all'");
    auto* sweep_ranks = app.add_subcommand("sweep-ranks", "transferability per target-label rank");
    add_attack_options(sweep_ranks, sr);
    std::string sr_ranks = "2,4,6,8,10";
    sweep_ranks->add_option("--ranks", sr_ranks, "comma-separated rank list");
    auto* sweep_c = app.add_subcommand("sweep-c", "transferability per polynomial bias c");
    add_attack_options(sweep_c, sc);
    std::string sc_grid = "0.0:2.0:0.1";
    sweep_c->add_option("--c-grid", sc_grid, "lo:hi:step grid for the bias");

    // demo-translation ---------------------------------------------------
    auto* demo = app.add_subcommand("demo-translation", "contrast losses under spatial shifts");
    demo->option_defaults()->always_capture_default();
    std::string de_images, de_labels, de_dir, de_white = "vgg_small", de_out = "run_out";
    int de_tap = 0, de_index = 0, de_shift = 1;
    demo->add_option("--dataset-images", de_images)->required();
    demo->add_option("--dataset-labels", de_labels)->required();
    demo->add_option("--checkpoint-dir", de_dir)->required();
    demo->add_option("--white", de_white, "model to probe");
    demo->add_option("--tap", de_tap, "tap to inspect");
    demo->add_option("--image-index", de_index, "dataset index of the probe image");
    demo->add_option("--shift", de_shift, "circular column shift");
    demo->add_option("--out", de_out, "output directory");
    demo->set_config("--config");
    demo->allow_config_extras(false);

    // export -------------------------------------------------------------
    auto* exp = app.add_subcommand("export", "convert result files between csv and json");
    exp->option_defaults()->always_capture_default();
    std::string ex_in, ex_out, ex_format = "csv";
    exp->add_option("--in", ex_in, "input results file (.csv or .json)")->required();
    exp->add_option("--out", ex_out, "output file")->required();
    exp->add_option("--format", ex_format, "csv or json");
    exp->set_config("--config");
    exp->allow_config_extras(false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_train, gen_test, gen_seed);

        if (tr->parsed()) {
            if ((tr_val_images.empty()) != (tr_val_labels.empty()))
                throw TensorError("--val-images and --val-labels must be given together");
            write_run_config(tr, tr_dir);
            Dataset train_set = ingest_idx(tr_images, tr_labels);
            Dataset val_set;
            const bool have_val = !tr_val_images.empty();
            if (have_val) val_set = ingest_idx(tr_val_images, tr_val_labels);
            std::vector<std::string> archs;
            if (tr_arch == "all")
                for (auto& a : shipped_architectures()) archs.push_back(a.name);
            else
                archs.push_back(tr_arch);
            for (const std::string& name : archs) {
                Model<float> model = build<float>(architecture_by_name(name), train_set.num_classes,
                                                  derive_seed(tr_seed, "train:" + name));
                TrainOptions opt;
                opt.epochs = tr_epochs;
                opt.lr = tr_lr;
                opt.batch = tr_batch;
                opt.seed = derive_seed(tr_seed, "train:" + name);
                opt.log = &std::cout;
                std::cout << "training " << name << "\n";
                TrainReport rep = train(model, train_set, have_val ? &val_set : nullptr, opt);
                CheckpointMeta meta;
                meta.epochs = rep.epochs_run;
                meta.train_acc = static_cast<float>(rep.final_train_acc);
                meta.val_acc = static_cast<float>(rep.final_val_acc);
                fs::create_directories(tr_dir);
                const std::string path = (fs::path(tr_dir) / (name + ".ckpt")).string();
                save_checkpoint(model, meta, path);
                std::cout << name << ": train_acc " << rep.final_train_acc;
                if (have_val) std::cout << "  val_acc " << rep.final_val_acc;
                std::cout << "  -> " << path << "\n";
            }
            return 0;
        }

        auto run_attack_like = [&](CLI::App* sub, AttackCliOpts& o,
                                   const std::function<std::vector<ResultRow>(
                                       Model<float>&, std::vector<Model<float>*>&, Dataset&, RunSpec&,
                                       std::vector<uint64_t>&)>& body) {
            AttackConfig cfg = make_attack_config(o);
            const std::string hash = write_run_config(sub, o.out);
            Dataset ds = ingest_idx(o.dataset_images, o.dataset_labels);
            Model<float> white = load_model(o.checkpoint_dir, o.white);
            if (o.blacks.empty()) o.blacks = default_blacks(o.white);
            std::vector<Model<float>> blacks;
            for (const std::string& b : o.blacks) blacks.push_back(load_model(o.checkpoint_dir, b));
            std::vector<Model<float>*> black_ptrs;
            for (auto& b : blacks) black_ptrs.push_back(&b);
            RunSpec spec = make_run_spec(o, cfg, hash);
            std::vector<uint64_t> seeds = eval_seed_list(o.seed, o.eval_seeds);
            std::vector<ResultRow> rows = body(white, black_ptrs, ds, spec, seeds);
            write_rows(rows, o.out);
            print_rows(rows);
            std::cout << "config hash " << hash << "; results in " << o.out << "\n";
            return 0;
        };

        if (attack->parsed())
            return run_attack_like(attack, at,
                                   [&](Model<float>& white, std::vector<Model<float>*>& blacks, Dataset& ds,
                                       RunSpec& spec, std::vector<uint64_t>& seeds) {
                                       // evaluate on the white box too: its row leads the results
                                       std::vector<Model<float>*> targets = {&white};
                                       for (auto* b : blacks) targets.push_back(b);
                                       std::vector<ResultRow> rows;
                                       for (uint64_t seed : seeds) {
                                           spec.attack.seed = seed;
                                           TransferRun run = run_transfer(white, targets, ds, spec);
                                           rows.insert(rows.end(), run.rows.begin(), run.rows.end());
                                           std::cout << "white-box targeted success rate (seed " << seed
                                                     << "): " << run.rows[0].tsuc << "%\n";
                                       }
                                       return rows;
                                   });

        if (sweep_layers->parsed())
            return run_attack_like(sweep_layers, sl,
                                   [&](Model<float>& white, std::vector<Model<float>*>& blacks, Dataset& ds,
                                       RunSpec& spec, std::vector<uint64_t>& seeds) {
                                       std::vector<int> taps;
                                       if (sl_taps == "all")
                                           for (int t = 0; t < white.tap_count(); ++t) taps.push_back(t);
                                       else
                                           for (auto& s : CLI::detail::split(sl_taps, ','))
                                               taps.push_back(std::stoi(s));
                                       return layer_sweep(white, blacks, ds, spec, taps, seeds).rows;
                                   });

        if (sweep_ranks->parsed())
            return run_attack_like(sweep_ranks, sr,
                                   [&](Model<float>& white, std::vector<Model<float>*>& blacks, Dataset& ds,
                                       RunSpec& spec, std::vector<uint64_t>& seeds) {
                                       std::vector<int> ranks;
                                       for (auto& s : CLI::detail::split(sr_ranks, ','))
                                           ranks.push_back(std::stoi(s));
                                       return rank_sweep(white, blacks, ds, spec, ranks, seeds).rows;
                                   });

        if (sweep_c->parsed())
            return run_attack_like(sweep_c, sc,
                                   [&](Model<float>& white, std::vector<Model<float>*>& blacks, Dataset& ds,
                                       RunSpec& spec, std::vector<uint64_t>& seeds) {
                                       auto parts = CLI::detail::split(sc_grid, ':');
                                       if (parts.size() != 3) throw TensorError("--c-grid must be lo:hi:step");
                                       const double lo = std::stod(parts[0]), hi = std::stod(parts[1]),
                                                    step = std::stod(parts[2]);
                                       if (step <= 0 || lo < 0) throw TensorError("bad --c-grid values");
                                       std::vector<double> cs;
                                       for (double c = lo; c <= hi + 1e-9; c += step)
                                           cs.push_back(std::round(c * 100.0) / 100.0);
                                       return c_sweep(white, blacks, ds, spec, cs, seeds).rows;
                                   });

        if (demo->parsed()) {
            write_run_config(demo, de_out);
            Dataset ds = ingest_idx(de_images, de_labels);
            if (de_index < 0 || de_index >= ds.count) throw TensorError("--image-index out of range");
            Model<float> model = load_model(de_dir, de_white);
            TranslationReport rep = translation_demo(model, ds.image(de_index), de_tap, de_shift);
            nlohmann::json o;
            o["shift"] = rep.shift;
            o["flip"] = {{"euclid", rep.flip_euclid},
                         {"paa_linear", rep.flip_paa_linear},
                         {"paa_poly", rep.flip_paa_poly},
                         {"paa_gauss", rep.flip_paa_gauss},
                         {"gaa", rep.flip_gaa}};
            o["shift_losses"] = {{"euclid", rep.shift_euclid},
                                 {"paa_linear", rep.shift_paa_linear},
                                 {"paa_poly", rep.shift_paa_poly},
                                 {"paa_gauss", rep.shift_paa_gauss},
                                 {"gaa", rep.shift_gaa}};
            std::ofstream((fs::path(de_out) / "translation_report.json")) << o.dump(2) << "\n";
            std::cout << "feature vs horizontal flip:   euclid " << rep.flip_euclid << "  paa_poly "
                      << rep.flip_paa_poly << "  gaa " << rep.flip_gaa << "\n";
            std::cout << "feature vs column shift by " << rep.shift << ": euclid " << rep.shift_euclid
                      << "  paa_poly " << rep.shift_paa_poly << "  gaa " << rep.shift_gaa << "\n";
            std::cout << "statistic losses are shift-invariant; the Euclidean baseline is not\n";
            return 0;
        }

        if (exp->parsed()) {
            std::vector<ResultRow> rows;
            if (ex_in.size() > 4 && ex_in.substr(ex_in.size() - 4) == ".csv")
                rows = import_csv(ex_in);
            else
                rows = import_json(ex_in);
            if (ex_format == "csv")
                export_csv(rows, ex_out);
            else if (ex_format == "json")
                export_json(rows, ex_out);
            else
                throw TensorError("--format must be csv or json");
            std::cout << "wrote " << rows.size() << " rows to " << ex_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
