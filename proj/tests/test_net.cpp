#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "unida/checkpoint.hpp"
#include "unida/net.hpp"

using namespace unida;

namespace {

NetDims tiny_dims() { return NetDims{4, 6, 5, 4, 3, 3}; }

Image random_image(int side, Rng& rng) {
    Image img(side);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& p : img.pixels) p = u(rng);
    return img;
}

FeatureVector random_feature(int n, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    FeatureVector f(n);
    for (int i = 0; i < n; ++i) f(i) = g(rng);
    return f;
}

}  // namespace

TEST(Extractor, ZeroEverythingGivesZeroFeatures) {
    const ModelParams p = ModelParams::zeros(tiny_dims());
    const FeatureVector f = extract_features(p, Image(4, 0.0));
    EXPECT_EQ(f.size(), 4);
    EXPECT_TRUE(f.isZero(0.0));
}

TEST(Extractor, DeterministicAndPure) {
    const ModelParams p = ModelParams::initialized(NetDims{}, 3);
    const ModelParams copy = p;
    Rng rng(1);
    const Image img = random_image(28, rng);
    const FeatureVector a = extract_features(p, img);
    const FeatureVector b = extract_features(p, img);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 64);
    EXPECT_EQ(flatten_params(p), flatten_params(copy));
}

TEST(Extractor, RejectsWrongCropSize) {
    const ModelParams p = ModelParams::zeros(tiny_dims());
    EXPECT_THROW(extract_features(p, Image(5)), std::invalid_argument);
}

TEST(Extractor, BatchedEqualsPerSampleBitwise) {
    for (const NetDims& d : {tiny_dims(), NetDims{}}) {
        const ModelParams p = ModelParams::initialized(d, 5);
        Rng rng(2);
        std::vector<Image> imgs;
        for (int i = 0; i < 7; ++i) imgs.push_back(random_image(d.input_side, rng));
        const ExtractorTrace t = extract_features(p, stack_images(imgs, d.input_side));
        for (int i = 0; i < 7; ++i)
            EXPECT_EQ(FeatureVector(t.features.col(i)), extract_features(p, imgs[static_cast<std::size_t>(i)]));
    }
}

TEST(Extractor, SingleWeightPerturbationMatchesAnalyticGradient) {
    const NetDims d = tiny_dims();
    const ModelParams p = ModelParams::initialized(d, 17);
    Rng rng(4);
    const Image img = random_image(4, rng);
    const Matrix x = stack_images(std::vector<Image>{img}, 4);
    // Scalar probe: s = sum_i c_i f_i.
    const FeatureVector c = random_feature(d.feature, rng);
    const ExtractorTrace t = extract_features(p, x);
    ModelParams grad = ModelParams::zeros(d);
    extractor_backward(p, t, Matrix(c), grad);
    const double eps = 1e-5;
    for (auto [r, col] : {std::pair{0, 0}, std::pair{3, 7}, std::pair{5, 15}}) {
        ModelParams plus = p, minus = p;
        plus.ext1.weight(r, col) += eps;
        minus.ext1.weight(r, col) -= eps;
        const double fd = (c.dot(extract_features(plus, img)) - c.dot(extract_features(minus, img))) / (2 * eps);
        const double an = grad.ext1.weight(r, col);
        EXPECT_LE(std::abs(fd - an), 1e-4 * std::max(std::abs(an), std::abs(fd)) + 1e-10);
    }
}

TEST(Init, UniformBoundsAndZeroBiases) {
    const ModelParams p = ModelParams::initialized(NetDims{}, 9);
    p.for_each_tensor([](const char*, ParamGroup, bool is_bias, std::span<const double> v, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double x : v) {
            if (is_bias) {
                EXPECT_EQ(x, 0.0);
            } else {
                EXPECT_LE(std::abs(x), bound);
            }
        }
    });
    EXPECT_EQ(flatten_params(ModelParams::initialized(NetDims{}, 9)), flatten_params(p));
    EXPECT_NE(flatten_params(ModelParams::initialized(NetDims{}, 10)), flatten_params(p));
}

TEST(ClosedHead, ZeroParamsGiveZeroLogitsAndClassZero) {
    const ModelParams p = ModelParams::zeros(tiny_dims());
    const Vector z = closed_logits(p, FeatureVector(FeatureVector::Ones(4)));
    EXPECT_TRUE(z.isZero(0.0));
    EXPECT_EQ(argmax(z), 0);
}

TEST(ClosedHead, IdentityRowsPickFeatures) {
    ModelParams p = ModelParams::zeros(tiny_dims());
    for (int k = 0; k < 3; ++k) p.closed_head.weight(k, k) = 1.0;
    FeatureVector f(4);
    f << 0.3, -1.2, 2.5, 9.0;
    const Vector z = closed_logits(p, f);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(z(k), f(k));
    EXPECT_EQ(argmax(z), 2);
}

TEST(ClosedHead, MatchesNaiveDotProducts) {
    const NetDims d = tiny_dims();
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        ModelParams p = ModelParams::initialized(d, static_cast<std::uint64_t>(trial));
        for (int k = 0; k < d.classes; ++k) p.closed_head.bias(k) = std::normal_distribution<double>(0, 1)(rng);
        const FeatureVector f = random_feature(d.feature, rng);
        const Vector z = closed_logits(p, f);
        for (int k = 0; k < d.classes; ++k) {
            double s = p.closed_head.bias(k);
            for (int j = 0; j < d.feature; ++j) s += p.closed_head.weight(k, j) * f(j);
            EXPECT_NEAR(z(k), s, 1e-12);
        }
    }
}

TEST(Argmax, TiesGoToLowestIndex) {
    EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0, 2.0}), 1);
    EXPECT_EQ(argmax(std::vector<double>{0.0, 0.0}), 0);
}

TEST(OpenScores, WorkedPairs) {
    const std::vector<double> zero{0.0, 0.0};
    EXPECT_DOUBLE_EQ(OpenSetScores::from_logits(zero).known_prob[0], 0.5);
    const std::vector<double> ln3{std::log(3.0), 0.0};
    EXPECT_NEAR(OpenSetScores::from_logits(ln3).known_prob[0], 0.75, 1e-15);
}

TEST(OpenScores, LargeLogitIsStable) {
    const std::vector<double> big{40.0, 0.0};
    const OpenSetScores s = OpenSetScores::from_logits(big);
    // 1 / (1 + e^-40) in long double as the high-precision reference.
    const long double ref = 1.0L / (1.0L + std::exp(-40.0L));
    EXPECT_GT(s.known_prob[0], 1.0 - 1e-12);
    EXPECT_LE(s.known_prob[0], 1.0);
    EXPECT_NEAR(static_cast<long double>(s.known_prob[0]), ref, 1e-16L);
    EXPECT_TRUE(std::isfinite(s.log_unknown[0]));
    EXPECT_NEAR(s.log_unknown[0], -40.0, 1e-9);
}

TEST(OpenScores, MonotoneInLogitDifferenceAndComplementary) {
    double prev = 0.0;
    for (double diff = -30.0; diff <= 30.0; diff += 0.5) {
        const std::vector<double> z{diff + 1.7, 1.7};
        const OpenSetScores s = OpenSetScores::from_logits(z);
        EXPECT_GT(s.known_prob[0], 0.0);
        EXPECT_LT(s.known_prob[0], 1.0);
        EXPECT_GT(s.known_prob[0], prev);
        EXPECT_NEAR(std::exp(s.log_known[0]) + std::exp(s.log_unknown[0]), 1.0, 1e-12);
        prev = s.known_prob[0];
    }
}

TEST(OpenScores, HeadRowsArePairedPerClass) {
    ModelParams p = ModelParams::zeros(tiny_dims());
    p.open_head.bias(2) = std::log(3.0);  // class 1 positive
    const OpenSetScores s = open_scores(p, FeatureVector(FeatureVector::Zero(4)));
    EXPECT_DOUBLE_EQ(s.known_prob[0], 0.5);
    EXPECT_NEAR(s.known_prob[1], 0.75, 1e-15);
    EXPECT_DOUBLE_EQ(s.known_prob[2], 0.5);
}

TEST(Discriminator, ZeroWeightsGiveOneHalf) {
    const ModelParams p = ModelParams::zeros(tiny_dims());
    EXPECT_DOUBLE_EQ(discriminate(p, FeatureVector(FeatureVector::Ones(4))), 0.5);
}

TEST(Discriminator, OutputInOpenUnitInterval) {
    const ModelParams p = ModelParams::initialized(tiny_dims(), 1);
    Rng rng(0);
    for (int i = 0; i < 50; ++i) {
        const double d = discriminate(p, random_feature(4, rng));
        EXPECT_GT(d, 0.0);
        EXPECT_LT(d, 1.0);
    }
}

TEST(GradReversal, ScalesFeatureGradientByMinusLambda) {
    const NetDims d = tiny_dims();
    const ModelParams p = ModelParams::initialized(d, 2);
    Rng rng(3);
    Matrix F(d.feature, 5);
    for (int c = 0; c < 5; ++c) F.col(c) = random_feature(d.feature, rng);
    const DiscriminatorTrace t = discriminate(p, F);
    RowVector dl(5);
    for (int c = 0; c < 5; ++c) dl(c) = std::normal_distribution<double>(0, 1)(rng);
    for (double lambda : {0.0, 0.5, 1.0}) {
        ModelParams g1 = ModelParams::zeros(d), g2 = ModelParams::zeros(d);
        const Matrix with = discriminator_backward(p, F, t, dl, GradReversal{lambda}, g1, true);
        const Matrix without = discriminator_backward(p, F, t, dl, GradReversal{lambda}, g2, false);
        for (Eigen::Index i = 0; i < with.size(); ++i) EXPECT_EQ(with(i), -lambda * without(i));
        // Discriminator parameters see the same, unreversed gradient either way.
        EXPECT_EQ(flatten_params(g1), flatten_params(g2));
    }
}

TEST(GradReversal, ValidatesLambda) {
    EXPECT_THROW(GradReversal{-1.0}.validate(), std::invalid_argument);
    EXPECT_THROW(GradReversal{std::nan("")}.validate(), std::invalid_argument);
    EXPECT_NO_THROW(GradReversal{0.0}.validate());
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const ModelParams p = ModelParams::initialized(NetDims{}, 77);
    const auto dir = std::filesystem::temp_directory_path() / "unida_ckpt_roundtrip";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, p, {77, 2, 2600});
    const LoadedCheckpoint ck = load_checkpoint(dir);
    EXPECT_EQ(ck.params.dims, p.dims);
    EXPECT_EQ(flatten_params(ck.params), flatten_params(p));
    EXPECT_EQ(ck.info.seed, 77u);
    EXPECT_EQ(ck.info.stage, 2);
    EXPECT_EQ(ck.info.step, 2600);
    EXPECT_EQ(std::filesystem::file_size(dir / "params.bin"), p.size() * 8);
}

TEST(Checkpoint, FlatOrderIsRowMajorLayerByLayer) {
    ModelParams p = ModelParams::zeros(tiny_dims());
    p.ext1.weight(0, 1) = 1.0;  // second value of the file
    p.ext1.bias(0) = 2.0;       // right after all ext1 weights
    const auto flat = flatten_params(p);
    EXPECT_EQ(flat[1], 1.0);
    EXPECT_EQ(flat[static_cast<std::size_t>(6 * 16)], 2.0);
    const ModelParams back = unflatten_params(p.dims, flat);
    EXPECT_EQ(back.ext1.weight(0, 1), 1.0);
    EXPECT_EQ(back.ext1.bias(0), 2.0);
}

TEST(Checkpoint, WrongLengthIsRejected) {
    std::vector<double> flat(10, 0.0);
    EXPECT_THROW(unflatten_params(tiny_dims(), flat), std::runtime_error);
}
