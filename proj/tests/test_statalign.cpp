#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "statalign/grad_check.hpp"
#include "statalign/losses.hpp"
#include "statalign/rng.hpp"

using namespace statalign;

namespace {

FeatureMap<double> random_map(int n, int m, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<size_t>(n) * m);
    for (auto& x : v) x = rng.next_real(lo, hi);
    return FeatureMap<double>(n, m, std::move(v));
}

// Brute-force evaluation of the three double sums, independent of the
// library path: takes the kernel as a plain callable.
double mmd2_oracle(const SampleSet<double>& S, const SampleSet<double>& T,
                   const std::function<double(const double*, const double*, int)>& k) {
    double ss = 0, tt = 0, st = 0;
    for (int i = 0; i < S.count; ++i)
        for (int j = 0; j < S.count; ++j) ss += k(S.vec(i), S.vec(j), S.dim);
    for (int i = 0; i < T.count; ++i)
        for (int j = 0; j < T.count; ++j) tt += k(T.vec(i), T.vec(j), T.dim);
    for (int i = 0; i < S.count; ++i)
        for (int j = 0; j < T.count; ++j) st += k(S.vec(i), T.vec(j), S.dim);
    const double m = S.count, n = T.count;
    return ss / (m * m) + tt / (n * n) - 2.0 * st / (m * n);
}

SampleSet<double> make_set(std::vector<std::vector<double>> vecs) {
    SampleSet<double> s;
    s.count = static_cast<int>(vecs.size());
    s.dim = static_cast<int>(vecs[0].size());
    for (auto& v : vecs) s.data.insert(s.data.end(), v.begin(), v.end());
    return s;
}

std::vector<double> set_mean(const SampleSet<double>& s) {
    std::vector<double> m(s.dim, 0.0);
    for (int i = 0; i < s.count; ++i)
        for (int q = 0; q < s.dim; ++q) m[q] += s.vec(i)[q];
    for (auto& v : m) v /= s.count;
    return m;
}

}  // namespace

TEST(Split, PointWiseAndChannelWiseShapes) {
    FeatureMap<double> fm(2, 3, {1, 2, 3, 4, 5, 6});
    SampleSet<double> pw = split(fm, SplitStrategy::point_wise);
    EXPECT_EQ(pw.count, 3);
    EXPECT_EQ(pw.dim, 2);
    SampleSet<double> cw = split(fm, SplitStrategy::channel_wise);
    EXPECT_EQ(cw.count, 2);
    EXPECT_EQ(cw.dim, 3);
    EXPECT_EQ(cw.data, fm.values);

    // stacking the point-wise vectors back as columns reconstructs the map
    FeatureMap<double> rebuilt(2, 3, std::vector<double>(6, 0.0));
    for (int p = 0; p < 3; ++p)
        for (int c = 0; c < 2; ++c) rebuilt.at(c, p) = pw.vec(p)[c];
    EXPECT_EQ(rebuilt.values, fm.values);
}

TEST(Kernels, TrivialValues) {
    std::vector<double> s = {1, 2}, t = {3, 4};
    EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::linear(), s, t), 11.0);
    EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::polynomial(0.0, 2), s, t), 121.0);
    EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::gaussian(1.0), s, s), 1.0);
    EXPECT_THROW(kernel_eval(KernelSpec::linear(), s, std::vector<double>{1.0}), TensorError);
    KernelSpec bad = KernelSpec::polynomial(0.0, 0);
    EXPECT_THROW(bad.validate(), TensorError);
    KernelSpec badc = KernelSpec::polynomial(-0.5, 2);
    EXPECT_THROW(badc.validate(), TensorError);
    KernelSpec bads = KernelSpec::gaussian(0.0);
    EXPECT_THROW(bads.validate(), TensorError);
}

TEST(Mmd2Biased, ZeroWhenSetsEqual) {
    Rng rng(5);
    FeatureMap<double> fm = random_map(4, 6, rng);
    SampleSet<double> s = split(fm, SplitStrategy::point_wise);
    for (auto k : {KernelSpec::linear(), KernelSpec::polynomial(0.0, 2), KernelSpec::gaussian(0.7)})
        EXPECT_EQ(mmd2_biased(s, s, k), 0.0) << to_string(k.family);
}

TEST(Mmd2Biased, LinearKernelHandValue) {
    SampleSet<double> S = make_set({{1, 0}, {0, 1}});
    SampleSet<double> T = make_set({{2, 2}, {0, 0}});
    double v = mmd2_biased(S, T, KernelSpec::linear());
    EXPECT_NEAR(v, 0.5, 1e-12);
    // equals the squared distance between the set means
    auto ms = set_mean(S), mt = set_mean(T);
    double d2 = 0;
    for (size_t i = 0; i < ms.size(); ++i) d2 += (ms[i] - mt[i]) * (ms[i] - mt[i]);
    EXPECT_NEAR(v, d2, 1e-12);
    // and the independent brute-force sums agree
    double ref = mmd2_oracle(S, T, [](const double* a, const double* b, int dim) {
        double s = 0;
        for (int i = 0; i < dim; ++i) s += a[i] * b[i];
        return s;
    });
    EXPECT_NEAR(v, ref, 1e-12);
}

TEST(Mmd2Biased, GaussianFarClusters) {
    // clusters far apart: cross kernel ~ 0, so MMD^2 approaches the sum of
    // the two within-cluster terms and stays non-negative
    SampleSet<double> S = make_set({{0, 0}, {0.1, 0}});
    SampleSet<double> T = make_set({{100, 100}, {100.1, 100}});
    KernelSpec k = KernelSpec::gaussian(0.5);
    double v = mmd2_biased(S, T, k);
    double ref = mmd2_oracle(S, T, [](const double* a, const double* b, int dim) {
        double d2 = 0;
        for (int i = 0; i < dim; ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
        return std::exp(-d2 / (2.0 * 0.5));
    });
    EXPECT_NEAR(v, ref, 1e-12);
    double within_ss = 0, within_tt = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            within_ss += kernel_eval(k, S.vec(i), S.vec(j), 2) / 4.0;
            within_tt += kernel_eval(k, T.vec(i), T.vec(j), 2) / 4.0;
        }
    EXPECT_NEAR(v, within_ss + within_tt, 1e-10);
    EXPECT_GE(v, 0.0);
}

TEST(Mmd2Biased, NonNegativeForPositiveDefiniteKernels) {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        FeatureMap<double> a = random_map(3, 5, rng);
        FeatureMap<double> b = random_map(3, 7, rng);
        SampleSet<double> S = split(a, SplitStrategy::point_wise);
        SampleSet<double> T = split(b, SplitStrategy::point_wise);
        for (auto k : {KernelSpec::linear(), KernelSpec::polynomial(0.3, 2), KernelSpec::gaussian()})
            EXPECT_GE(mmd2_biased(S, T, k), -1e-12);
    }
}

TEST(Mmd2Biased, LinearClosedFormOnRandomSets) {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        FeatureMap<double> a = random_map(4, 5 + static_cast<int>(rng.next_below(6)), rng);
        FeatureMap<double> b = random_map(4, 5 + static_cast<int>(rng.next_below(6)), rng);
        SampleSet<double> S = split(a, SplitStrategy::point_wise);
        SampleSet<double> T = split(b, SplitStrategy::point_wise);
        auto ms = set_mean(S), mt = set_mean(T);
        double d2 = 0;
        for (size_t i = 0; i < ms.size(); ++i) d2 += (ms[i] - mt[i]) * (ms[i] - mt[i]);
        EXPECT_NEAR(mmd2_biased(S, T, KernelSpec::linear()), d2, 1e-9);
    }
}

TEST(Mmd2Biased, EmptySetRejected) {
    SampleSet<double> empty;
    empty.dim = 2;
    SampleSet<double> S = make_set({{1, 2}});
    EXPECT_THROW(mmd2_biased(empty, S, KernelSpec::linear()), TensorError);
}

TEST(Mmd2LinearTime, IdentityPairingOnEqualSetsIsZero) {
    Rng rng(29);
    FeatureMap<double> fm = random_map(3, 8, rng);
    SampleSet<double> s = split(fm, SplitStrategy::point_wise);
    for (auto k : {KernelSpec::linear(), KernelSpec::polynomial(0.0, 2), KernelSpec::gaussian(1.0)})
        EXPECT_DOUBLE_EQ(mmd2_linear_time(s, s, k), 0.0);
}

TEST(Mmd2LinearTime, SinglePairMatchesHandComputation) {
    SampleSet<double> S = make_set({{1, 0}, {0, 1}});
    SampleSet<double> T = make_set({{2, 1}, {1, 2}});
    // h = k(s1,s2) + k(t1,t2) - k(s1,t2) - k(s2,t1) = 0 + 4 - 1 - 1 = 2
    EXPECT_DOUBLE_EQ(mmd2_linear_time(S, T, KernelSpec::linear()), 2.0);
    EXPECT_THROW(mmd2_linear_time(make_set({{1.0, 0.0}}), T, KernelSpec::linear()), TensorError);
}

TEST(Mmd2LinearTime, ReshuffleMeanMatchesExactPermutationExpectation) {
    // For the linear kernel the expectation of the estimator over random
    // pairings has a closed form on fixed samples:
    //   E[h-bar] = u(S) + u(T) - 2 <mean S, mean T>
    // with u(X) = (|sum x|^2 - sum |x|^2) / (m (m-1)).
    Rng rng(31);
    const int n = 60, dim = 2;
    SampleSet<double> S, T;
    S.count = T.count = n;
    S.dim = T.dim = dim;
    S.data.resize(n * dim);
    T.data.resize(n * dim);
    for (auto& v : S.data) v = rng.next_normal();
    for (size_t i = 0; i < T.data.size(); ++i)
        T.data[i] = rng.next_normal() + (i % 2 == 0 ? 1.0 : 0.5);

    auto u_stat = [&](const SampleSet<double>& X) {
        std::vector<double> total(dim, 0.0);
        double sq = 0;
        for (int i = 0; i < X.count; ++i)
            for (int q = 0; q < dim; ++q) {
                total[q] += X.vec(i)[q];
                sq += X.vec(i)[q] * X.vec(i)[q];
            }
        double t2 = 0;
        for (double v : total) t2 += v * v;
        return (t2 - sq) / (static_cast<double>(X.count) * (X.count - 1));
    };
    auto ms = set_mean(S), mt = set_mean(T);
    double cross = std::inner_product(ms.begin(), ms.end(), mt.begin(), 0.0);
    const double expectation = u_stat(S) + u_stat(T) - 2.0 * cross;

    const int R = 2000;
    std::vector<double> est(R);
    double mean = 0;
    for (int r = 0; r < R; ++r) {
        est[r] = mmd2_linear_time(S, T, KernelSpec::linear(), derive_seed(777, "reshuffle", r));
        mean += est[r];
    }
    mean /= R;
    double var = 0;
    for (double e : est) var += (e - mean) * (e - mean);
    var /= (R - 1);
    const double se_of_mean = std::sqrt(var / R);
    EXPECT_LE(std::abs(mean - expectation), 4.0 * se_of_mean)
        << "mean=" << mean << " expectation=" << expectation << " se=" << se_of_mean;

    // consistency with the biased quadratic estimator up to its O(1/m) gap
    double biased = mmd2_biased(S, T, KernelSpec::linear());
    EXPECT_LE(std::abs(mean - biased), std::abs(u_stat(S) - (cross = 0, 0.0)) + 1.0);  // loose sanity
}

TEST(GaussianBandwidth, HandEnumeratedPairs) {
    SampleSet<double> S = make_set({{0, 0}});
    SampleSet<double> T = make_set({{3, 4}});
    Bandwidth bw = gaussian_bandwidth(S, T);
    EXPECT_FALSE(bw.degenerate);
    EXPECT_NEAR(bw.sigma2, 25.0 / 3.0, 1e-12);

    // identical singletons degenerate to the floor
    Bandwidth deg = gaussian_bandwidth(S, S);
    EXPECT_TRUE(deg.degenerate);
    EXPECT_DOUBLE_EQ(deg.sigma2, 1e-8);

    // scaling all vectors by 2 scales sigma2 by 4
    SampleSet<double> S2 = make_set({{0, 0}});
    SampleSet<double> T2 = make_set({{6, 8}});
    EXPECT_NEAR(gaussian_bandwidth(S2, T2).sigma2, 4.0 * bw.sigma2, 1e-12);
}

TEST(PaaLoss, ZeroAtEqualityAndPermutationInvariance) {
    Rng rng(37);
    FeatureMap<double> S = random_map(4, 6, rng);
    for (auto k : {KernelSpec::linear(), KernelSpec::polynomial(0.0, 2), KernelSpec::gaussian()}) {
        EXPECT_EQ(paa_loss(S, S, k), 0.0);
        std::vector<int> perm(6);
        for (int i = 0; i < 6; ++i) perm[i] = (i + 2) % 6;
        EXPECT_LE(std::abs(paa_loss(S, S.permuted_columns(perm), k)), 1e-9);
    }
}

TEST(PaaLoss, PolynomialMatchesBruteForceOracle) {
    Rng rng(41);
    FeatureMap<double> S = random_map(4, 6, rng);
    FeatureMap<double> T = random_map(4, 6, rng);
    double v = paa_loss(S, T, KernelSpec::polynomial(0.0, 2));
    double ref = mmd2_oracle(split(S, SplitStrategy::point_wise), split(T, SplitStrategy::point_wise),
                             [](const double* a, const double* b, int dim) {
                                 double s = 0;
                                 for (int i = 0; i < dim; ++i) s += a[i] * b[i];
                                 return s * s;
                             });
    EXPECT_NEAR(v, ref, 1e-10);
}

TEST(PaaLoss, PolynomialDegreeOneEqualsLinearExactly) {
    Rng rng(43);
    FeatureMap<double> S = random_map(5, 7, rng);
    FeatureMap<double> T = random_map(5, 7, rng);
    EXPECT_EQ(paa_loss(S, T, KernelSpec::polynomial(0.0, 1)), paa_loss(S, T, KernelSpec::linear()));
}

TEST(PaaLoss, ChannelMismatchRejected) {
    Rng rng(47);
    FeatureMap<double> S = random_map(4, 6, rng);
    FeatureMap<double> T = random_map(3, 6, rng);
    EXPECT_THROW(paa_loss(S, T, KernelSpec::linear()), TensorError);
    EXPECT_NO_THROW(paa_loss(S, T, KernelSpec::linear(), SplitStrategy::channel_wise));
    FeatureMap<double> U = random_map(4, 5, rng);
    EXPECT_THROW(paa_loss(S, U, KernelSpec::linear(), SplitStrategy::channel_wise), TensorError);
}

TEST(GaaMoments, HandValues) {
    FeatureMap<double> fm(2, 2, {1, 3, 2, 2});
    MomentSummary<double> ms = gaa_moments(fm);
    EXPECT_DOUBLE_EQ(ms.means[0], 2.0);
    EXPECT_DOUBLE_EQ(ms.means[1], 2.0);
    EXPECT_DOUBLE_EQ(ms.variances[0], 1.0);
    EXPECT_DOUBLE_EQ(ms.variances[1], 0.0);

    FeatureMap<double> constant(3, 4, std::vector<double>(12, 0.7));
    for (double v : gaa_moments(constant).variances) EXPECT_DOUBLE_EQ(v, 0.0);

    Rng rng(53);
    FeatureMap<double> r = random_map(3, 8, rng);
    MomentSummary<double> a = gaa_moments(r);
    MomentSummary<double> b = gaa_moments(r.shifted_columns(3));
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(a.means[c], b.means[c], 1e-12);
        EXPECT_NEAR(a.variances[c], b.variances[c], 1e-12);
    }
}

TEST(GaaLoss, HandValueAndInvariances) {
    FeatureMap<double> S(2, 2, {1, 3, 2, 2});
    FeatureMap<double> T(2, 2, {0, 0, 0, 0});
    EXPECT_NEAR(gaa_loss(S, T), 4.5, 1e-12);  // mean gap 4, variance gap 0.5
    EXPECT_EQ(gaa_loss(S, S), 0.0);
    Rng rng(59);
    FeatureMap<double> R = random_map(4, 9, rng);
    std::vector<int> perm(9);
    for (int i = 0; i < 9; ++i) perm[i] = (i * 4 + 1) % 9;
    EXPECT_LE(std::abs(gaa_loss(R, R.permuted_columns(perm))), 1e-9);
    FeatureMap<double> bad = random_map(3, 9, rng);
    EXPECT_THROW(gaa_loss(R, bad), TensorError);
}

TEST(EuclidLoss, BasicsAndPermutationSensitivity) {
    Rng rng(61);
    FeatureMap<double> S = random_map(4, 8, rng);
    EXPECT_EQ(euclid_loss(S, S), 0.0);
    FeatureMap<double> T = S;
    T.at(2, 3) += 1.0;
    EXPECT_NEAR(euclid_loss(S, T), 1.0, 1e-12);
    EXPECT_GT(euclid_loss(S, S.shifted_columns(1)), 1e-3);
    FeatureMap<double> bad = random_map(4, 7, rng);
    EXPECT_THROW(euclid_loss(S, bad), TensorError);
}

TEST(ContrastWithEuclid, TranslationInvarianceOfStatisticLosses) {
    Rng rng(67);
    FeatureMap<double> S = random_map(8, 16, rng);
    FeatureMap<double> shifted = S.shifted_columns(1);
    for (auto k : {KernelSpec::linear(), KernelSpec::polynomial(0.0, 2), KernelSpec::gaussian()})
        EXPECT_LE(std::abs(paa_loss(S, shifted, k)), 1e-9);
    EXPECT_LE(std::abs(gaa_loss(S, shifted)), 1e-9);
    EXPECT_GT(euclid_loss(S, shifted), 1e-3);
}

// Analytic gradients of every loss against central finite differences.

TEST(LossGradients, MatchFiniteDifferences) {
    Rng rng(71);
    for (int trial = 0; trial < 3; ++trial) {
        FeatureMap<double> target = random_map(4, 6, rng);
        Tensor<double> x({4, 6});
        for (size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.next_real(-1.0, 1.0);

        const KernelSpec kernels[] = {KernelSpec::linear(), KernelSpec::polynomial(0.0, 2),
                                      KernelSpec::gaussian(0.8)};
        for (const auto& k : kernels) {
            for (auto strat : {SplitStrategy::point_wise, SplitStrategy::channel_wise}) {
                double err = grad_check(
                    [&](Tensor<double>& t, Tape<double>* tape) {
                        return paa_loss_node(t, target, k, strat, tape);
                    },
                    x, 1e-5);
                EXPECT_LE(err, 1e-4) << to_string(k.family) << "/" << to_string(strat);
            }
        }
        EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) {
                      return gaa_loss_node(t, target, tape);
                  }, x, 1e-5),
                  1e-4);
        EXPECT_LE(grad_check([&](Tensor<double>& t, Tape<double>* tape) {
                      return euclid_loss_node(t, target, tape);
                  }, x, 1e-5),
                  1e-4);
    }
}

TEST(LossGradients, GradMatchesNodeBackward) {
    Rng rng(73);
    FeatureMap<double> target = random_map(3, 5, rng);
    Tensor<double> x({3, 5});
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.next_real(-1.0, 1.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> loss = paa_loss_node(x, target, KernelSpec::polynomial(0.0, 2),
                                        SplitStrategy::point_wise, &tape);
    tape.backward(loss);
    std::vector<double> direct;
    paa_loss(FeatureMap<double>::from_tensor(x), target, KernelSpec::polynomial(0.0, 2),
             SplitStrategy::point_wise, &direct);
    for (size_t i = 0; i < direct.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], direct[i]);
}
