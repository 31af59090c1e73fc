#include <gtest/gtest.h>

#include <filesystem>

#include "statalign/harness.hpp"
#include "test_util.hpp"

using namespace statalign;
using testutil::trained_micro;

namespace {

TransferRecord rec(bool white, bool black) {
    TransferRecord r;
    r.white_success = white;
    r.black_success = black;
    return r;
}

std::vector<TransferRecord> records(int white_and_black, int white_only, int black_only, int neither) {
    std::vector<TransferRecord> rs;
    for (int i = 0; i < white_and_black; ++i) rs.push_back(rec(true, true));
    for (int i = 0; i < white_only; ++i) rs.push_back(rec(true, false));
    for (int i = 0; i < black_only; ++i) rs.push_back(rec(false, true));
    for (int i = 0; i < neither; ++i) rs.push_back(rec(false, false));
    return rs;
}

}  // namespace

TEST(Metrics, TsucArithmetic) {
    EXPECT_DOUBLE_EQ(eval_tsuc(records(0, 0, 0, 50)), 0.0);
    EXPECT_DOUBLE_EQ(eval_tsuc(records(50, 0, 0, 0)), 100.0);
    EXPECT_DOUBLE_EQ(eval_tsuc(records(19, 0, 0, 31)), 38.0);
    EXPECT_THROW(eval_tsuc({}), TensorError);
}

TEST(Metrics, TtrArithmeticAndDegenerate) {
    // 10 white successes, 5 of them transfer
    EXPECT_DOUBLE_EQ(*eval_ttr(records(5, 5, 0, 40)), 50.0);
    // all white succeed: tTR equals tSuc
    auto rs = records(12, 38, 0, 0);
    EXPECT_DOUBLE_EQ(*eval_ttr(rs), eval_tsuc(rs));
    // zero white successes: not applicable, never 0
    EXPECT_FALSE(eval_ttr(records(0, 0, 3, 7)).has_value());
    // black-box successes confined to white successes imply tTR >= tSuc
    auto covered = records(8, 12, 0, 30);
    EXPECT_GE(*eval_ttr(covered), eval_tsuc(covered));
}

TEST(Export, CsvShapeAndJsonRoundTrip) {
    namespace fs = std::filesystem;
    std::vector<ResultRow> rows;
    ResultRow a;
    a.white_box = "vgg_small";
    a.black_box = "res_small";
    a.loss = LossKind::paa_p;
    a.tap = 2;
    a.rank_or_random = "rank:2";
    a.c = 0.3;
    a.seed = 12345;
    a.n_images = 300;
    a.tsuc = 37.98;
    a.ttr = 44.90;
    a.runtime_s = 12.125;
    ResultRow b = a;
    b.black_box = "mix_small";
    b.loss = LossKind::euclid;
    b.rank_or_random = "random";
    b.ttr = std::nullopt;  // the n/a marker must survive both formats
    rows = {a, b};

    auto csv = fs::temp_directory_path() / "statalign_rows.csv";
    auto json = fs::temp_directory_path() / "statalign_rows.json";
    export_csv(rows, csv.string());
    export_json(rows, json.string());

    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "white_box,black_box,loss,tap,rank_or_random,c,seed,n_images,tsuc,ttr,runtime_s");
    int count = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++count;
    EXPECT_EQ(count, 2);  // row count == record count

    std::vector<ResultRow> back = import_json(json.string());
    ASSERT_EQ(back.size(), rows.size());
    EXPECT_TRUE(back[0] == rows[0]);
    EXPECT_TRUE(back[1] == rows[1]);

    std::vector<ResultRow> from_csv = import_csv(csv.string());
    ASSERT_EQ(from_csv.size(), rows.size());
    EXPECT_EQ(from_csv[1].rank_or_random, "random");
    EXPECT_FALSE(from_csv[1].ttr.has_value());

    export_csv({}, csv.string());
    std::ifstream empty_in(csv);
    std::getline(empty_in, line);
    EXPECT_EQ(line, result_csv_header());
    EXPECT_FALSE(std::getline(empty_in, line));  // header-only
    fs::remove(csv);
    fs::remove(json);
}

TEST(Transfer, RunProducesConsistentRecordsAndRows) {
    auto& tm = trained_micro();
    Model<float> black = build<float>(testutil::micro_arch(), 10, 77);
    TrainOptions opt;
    opt.epochs = 6;
    opt.lr = 0.06;
    opt.batch = 32;
    opt.seed = 9;
    train(black, tm.train_set, nullptr, opt);

    RunSpec spec;
    spec.attack.loss = LossKind::gaa;
    spec.attack.tap = 1;
    spec.attack.seed = 21;
    spec.n_images = 12;
    spec.gallery_k = 3;
    spec.threads = 2;
    spec.config_hash = "deadbeef";
    TransferRun run = run_transfer(tm.model, {&black}, tm.test_set, spec);
    EXPECT_EQ(run.image_indices.size(), 12u);
    EXPECT_EQ(run.attacks.size(), 12u);
    EXPECT_EQ(run.records.size(), 12u);
    ASSERT_EQ(run.rows.size(), 1u);
    EXPECT_GE(run.rows[0].tsuc, 0.0);
    EXPECT_LE(run.rows[0].tsuc, 100.0);
    EXPECT_EQ(run.rows[0].n_images, 12);
    EXPECT_EQ(run.rows[0].runtime_s, 0.0);  // deterministic timing mode
    for (const auto& r : run.records) {
        EXPECT_EQ(r.config_hash, "deadbeef");
        EXPECT_NE(r.y, r.y_tgt);
    }

    // determinism across reruns, including the parallel path
    TransferRun again = run_transfer(tm.model, {&black}, tm.test_set, spec);
    ASSERT_EQ(again.rows.size(), 1u);
    EXPECT_TRUE(again.rows[0] == run.rows[0]);
    for (size_t i = 0; i < run.attacks.size(); ++i)
        EXPECT_EQ(run.attacks[i].x_adv.values(), again.attacks[i].x_adv.values());
}

TEST(Transfer, SingletonLayerSweepEqualsDirectRun) {
    auto& tm = trained_micro();
    Model<float> black = build<float>(testutil::micro_arch(), 10, 78);
    TrainOptions opt;
    opt.epochs = 5;
    opt.lr = 0.06;
    opt.batch = 32;
    opt.seed = 10;
    train(black, tm.train_set, nullptr, opt);

    RunSpec spec;
    spec.attack.loss = LossKind::euclid;
    spec.attack.tap = 0;
    spec.n_images = 8;
    spec.gallery_k = 2;
    SweepResult sweep = layer_sweep(tm.model, {&black}, tm.test_set, spec, {0}, {5});
    RunSpec direct = spec;
    direct.attack.seed = 5;
    TransferRun run = run_transfer(tm.model, {&black}, tm.test_set, direct);
    ASSERT_EQ(sweep.rows.size(), 1u);
    EXPECT_TRUE(sweep.rows[0] == run.rows[0]);

    SweepResult ranks = rank_sweep(tm.model, {&black}, tm.test_set, spec, {2, 4}, {5});
    EXPECT_EQ(ranks.rows.size(), 2u);
    EXPECT_EQ(ranks.rows[0].rank_or_random, "rank:2");

    RunSpec pspec = spec;
    pspec.attack.loss = LossKind::paa_p;
    SweepResult cs = c_sweep(tm.model, {&black}, tm.test_set, pspec, {0.0, 0.1}, {5});
    EXPECT_EQ(cs.rows.size(), 2u);
    EXPECT_DOUBLE_EQ(cs.rows[1].c, 0.1);
    EXPECT_THROW(c_sweep(tm.model, {&black}, tm.test_set, pspec, {-0.1}, {5}), TensorError);
    EXPECT_THROW(c_sweep(tm.model, {&black}, tm.test_set, spec, {0.0}, {5}), TensorError);
}

TEST(TranslationDemo, ShiftInvarianceContrast) {
    auto& tm = trained_micro();
    Tensor<float> img = tm.test_set.image(3);
    TranslationReport rep = translation_demo(tm.model, img, 1, 1);
    EXPECT_LE(std::abs(rep.shift_paa_linear), 1e-9);
    EXPECT_LE(std::abs(rep.shift_paa_poly), 1e-9);
    EXPECT_LE(std::abs(rep.shift_paa_gauss), 1e-9);
    EXPECT_LE(std::abs(rep.shift_gaa), 1e-9);
    EXPECT_GT(rep.shift_euclid, 1e-3);
    EXPECT_GE(rep.flip_euclid, 0.0);

    // shift by 0 and by a full period are identities
    TranslationReport zero = translation_demo(tm.model, img, 1, 0);
    EXPECT_DOUBLE_EQ(zero.shift_euclid, 0.0);
    EXPECT_DOUBLE_EQ(zero.shift_paa_poly, 0.0);
    FeatureMap<float> f = forward_to_tap(tm.model, img, 1);
    TranslationReport full = translation_demo(tm.model, img, 1, f.positions);
    EXPECT_DOUBLE_EQ(full.shift_euclid, 0.0);
    EXPECT_DOUBLE_EQ(full.shift_gaa, 0.0);
}

TEST(ParallelFor, CoversAllIndicesAndPropagatesErrors) {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](int i) { hits[i] = 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 3, [](int i) {
                     if (i == 7) throw TensorError("boom");
                 }),
                 TensorError);
}
