#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "unida/synth_data.hpp"

using namespace unida;

namespace {

DatasetSpec small_spec(std::uint64_t seed = 7) {
    DatasetSpec s;
    s.samples_per_class_source = 6;
    s.samples_per_class_target = 4;
    s.seed = seed;
    return s;
}

std::set<int> labels_of(const std::vector<int>& v) { return {v.begin(), v.end()}; }

Image random_image(int side, Rng& rng) {
    Image img(side);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& p : img.pixels) p = u(rng);
    return img;
}

}  // namespace

TEST(LabelSets, DefaultPartition) {
    DatasetSpec s;
    const auto src = labels_of(s.source_classes());
    const auto tgt = labels_of(s.target_classes());
    EXPECT_EQ(src.size(), 8u);
    EXPECT_EQ(tgt.size(), 7u);
    std::vector<int> overlap;
    std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(), std::back_inserter(overlap));
    EXPECT_EQ(overlap, (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(LabelSets, ExhaustivePartitionOfSmallSpecs) {
    for (int shared = 0; shared <= 4; ++shared)
        for (int sp = 0; sp <= 4; ++sp)
            for (int tp = 0; tp <= 4; ++tp) {
                DatasetSpec s;
                s.shared_classes = shared;
                s.source_private = sp;
                s.target_private = tp;
                s.total_classes = shared + sp + tp;
                if (shared + sp < 1 || shared + tp < 1) {
                    EXPECT_THROW(s.validate(), std::invalid_argument);
                    continue;
                }
                ASSERT_NO_THROW(s.validate());
                const auto src = labels_of(s.source_classes());
                const auto tgt = labels_of(s.target_classes());
                int in_both = 0, only_src = 0, only_tgt = 0;
                for (int c = 0; c < s.total_classes; ++c) {
                    const bool a = src.count(c), b = tgt.count(c);
                    ASSERT_TRUE(a || b) << "class " << c << " belongs to no domain";
                    in_both += a && b;
                    only_src += a && !b;
                    only_tgt += !a && b;
                    EXPECT_EQ(s.is_target_private(c), !a && b);
                }
                EXPECT_EQ(in_both, shared);
                EXPECT_EQ(only_src, sp);
                EXPECT_EQ(only_tgt, tp);
            }
}

TEST(DatasetSpecValidation, RejectsBadSpecs) {
    DatasetSpec s;
    s.total_classes = 11;
    EXPECT_THROW(generate_dataset(s), std::invalid_argument);
    s = DatasetSpec{};
    s.crop_side = 33;
    EXPECT_THROW(generate_dataset(s), std::invalid_argument);
    s = DatasetSpec{};
    s.shift.intensity_scale = 0.0;
    EXPECT_THROW(generate_dataset(s), std::invalid_argument);
    s = DatasetSpec{};
    s.shift.noise_sigma_target = -0.1;
    EXPECT_THROW(generate_dataset(s), std::invalid_argument);
}

TEST(GenerateDataset, SplitSizesAndLabels) {
    const DatasetSpec s = small_spec();
    const Dataset ds = generate_dataset(s);
    EXPECT_EQ(ds.source.size(), 8u * 6);
    EXPECT_EQ(ds.target_train.size(), 7u * 4);
    EXPECT_EQ(ds.target_test.size(), 7u * 4);
    for (const auto& item : ds.source) {
        EXPECT_EQ(item.domain, Domain::source);
        EXPECT_GE(item.label, 0);
        EXPECT_LT(item.label, 8);
        EXPECT_FALSE(item.is_unknown);
    }
    for (const auto& item : ds.target_train) {
        EXPECT_EQ(item.domain, Domain::target);
        EXPECT_EQ(item.label, kHiddenLabel);
    }
    int unknown = 0;
    for (const auto& item : ds.target_test) {
        EXPECT_EQ(item.domain, Domain::target);
        EXPECT_EQ(item.is_unknown, s.is_target_private(item.label));
        unknown += item.is_unknown;
    }
    EXPECT_EQ(unknown, 2 * 4);
}

TEST(GenerateDataset, PixelsInUnitRange) {
    const Dataset ds = generate_dataset(small_spec());
    for (const auto* split : {&ds.source, &ds.target_train, &ds.target_test})
        for (const auto& item : *split) {
            EXPECT_EQ(item.image.side, 32);
            for (double p : item.image.pixels) {
                ASSERT_GE(p, 0.0);
                ASSERT_LE(p, 1.0);
            }
        }
}

TEST(GenerateDataset, DeterministicForSeed) {
    const Dataset a = generate_dataset(small_spec(11));
    const Dataset b = generate_dataset(small_spec(11));
    ASSERT_EQ(a.source.size(), b.source.size());
    for (std::size_t i = 0; i < a.source.size(); ++i) EXPECT_EQ(a.source[i].image, b.source[i].image);
    for (std::size_t i = 0; i < a.target_test.size(); ++i) EXPECT_EQ(a.target_test[i].image, b.target_test[i].image);
    const Dataset c = generate_dataset(small_spec(12));
    EXPECT_NE(a.source[0].image, c.source[0].image);
}

TEST(RenderImage, IdentityShiftReproducesSourceRendering) {
    DatasetSpec s = small_spec();
    s.shift.noise_sigma_target = 0.0;
    s.shift.intensity_scale = 1.0;
    s.shift.intensity_offset = 0.0;
    s.shift.blob_translation = 0;
    for (int cls : {0, 3, 4})
        for (std::uint64_t draw : {0ull, 5ull, 123ull})
            EXPECT_EQ(render_image(s, cls, draw, Domain::target), render_image(s, cls, draw, Domain::source));
}

TEST(RenderImage, DefaultShiftChangesTargetView) {
    const DatasetSpec s = small_spec();
    EXPECT_NE(render_image(s, 0, 0, Domain::target), render_image(s, 0, 0, Domain::source));
}

TEST(RenderImage, BlobSitsOnTheClassCircle) {
    DatasetSpec s = small_spec();
    s.shift.noise_sigma_source = 0.0;
    const double mid = (s.image_side - 1) / 2.0;
    const double radius = s.image_side / 3.0;
    for (int cls = 0; cls < s.total_classes; ++cls) {
        const Image img = render_image(s, cls, 0, Domain::source);
        double sum = 0.0, cx = 0.0, cy = 0.0;
        for (int r = 0; r < img.side; ++r)
            for (int c = 0; c < img.side; ++c) {
                sum += img.at(r, c);
                cx += c * img.at(r, c);
                cy += r * img.at(r, c);
            }
        cx /= sum;
        cy /= sum;
        const double angle = 2.0 * std::numbers::pi * cls / s.total_classes;
        EXPECT_NEAR(cx, mid + radius * std::cos(angle), 1.6) << "class " << cls;
        EXPECT_NEAR(cy, mid + radius * std::sin(angle), 1.6) << "class " << cls;
    }
}

TEST(Augment, EraseSquareZeroesExactly16Pixels) {
    Image img(10, 1.0);
    erase_square(img, 0, 0, 4);
    EXPECT_EQ(std::count(img.pixels.begin(), img.pixels.end(), 0.0), 16);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) EXPECT_EQ(img.at(r, c), 0.0);
}

TEST(Augment, UnitJitterWithoutEraseIsIdentity) {
    Rng rng(1);
    LabeledImage item{random_image(12, rng), 2, Domain::source, false};
    AugmentParams p;
    p.erase_probability = 0.0;
    p.jitter_probability = 1.0;
    p.jitter_low = p.jitter_high = 1.0;
    const LabeledImage out = augment_source(item, rng, p);
    EXPECT_EQ(out.image, item.image);
    EXPECT_EQ(out.label, 2);
}

TEST(Augment, ZeroImageIsAFixedPoint) {
    LabeledImage item{Image(16, 0.0), 1, Domain::source, false};
    Rng rng(3);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(augment_source(item, rng).image, item.image);
}

TEST(Augment, RejectsTargetImages) {
    LabeledImage item{Image(16, 0.5), kHiddenLabel, Domain::target, false};
    Rng rng(0);
    EXPECT_THROW(augment_source(item, rng), std::logic_error);
}

TEST(Augment, OutputStaysInRangeAndErasesAtMostEightSquared) {
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        LabeledImage item{Image(32, 0.9), 0, Domain::source, false};
        const LabeledImage out = augment_source(item, rng);
        const auto zeros = std::count(out.image.pixels.begin(), out.image.pixels.end(), 0.0);
        EXPECT_TRUE(zeros == 0 || (zeros >= 16 && zeros <= 64)) << zeros;
        for (double p : out.image.pixels) {
            EXPECT_GE(p, 0.0);
            EXPECT_LE(p, 1.0);
        }
    }
}

TEST(FiveCrops, AnchorsAndOrder) {
    const auto a = five_crop_anchors(32, 28);
    EXPECT_EQ(a[0], std::make_pair(0, 0));
    EXPECT_EQ(a[1], std::make_pair(0, 4));
    EXPECT_EQ(a[2], std::make_pair(4, 0));
    EXPECT_EQ(a[3], std::make_pair(4, 4));
    EXPECT_EQ(a[4], std::make_pair(2, 2));
    EXPECT_EQ(five_crop_anchors(9, 4)[4], std::make_pair(2, 2));  // floor((9 - 4) / 2)
}

TEST(FiveCrops, FullSizeCropsAreTheInput) {
    Rng rng(5);
    const Image img = random_image(8, rng);
    for (const auto& c : five_crops(img, 8)) EXPECT_EQ(c, img);
}

TEST(FiveCrops, ConstantImageGivesConstantCrops) {
    const Image img(32, 0.37);
    for (const auto& c : five_crops(img, 28)) EXPECT_EQ(c, Image(28, 0.37));
}

TEST(FiveCrops, MatchIndexSlicingOracle) {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const int side = 5 + trial % 10;
        const int c = 1 + trial % side;
        const Image img = random_image(side, rng);
        const auto crops = five_crops(img, c);
        ASSERT_EQ(crops.size(), 5u);
        const int rows[5] = {0, 0, side - c, side - c, (side - c) / 2};
        const int cols[5] = {0, side - c, 0, side - c, (side - c) / 2};
        for (int k = 0; k < 5; ++k) {
            ASSERT_EQ(crops[k].side, c);
            for (int r = 0; r < c; ++r)
                for (int q = 0; q < c; ++q)
                    ASSERT_EQ(crops[k].pixels[r * c + q], img.pixels[(rows[k] + r) * side + cols[k] + q]);
        }
    }
}

TEST(FiveCrops, RejectsOversizedCrop) { EXPECT_THROW(five_crops(Image(8), 9), std::invalid_argument); }

TEST(MakeBatch, ShapesAndTargetCenterCrop) {
    const DatasetSpec s = small_spec();
    const Dataset ds = generate_dataset(s);
    Rng rng(4);
    const Batch b = make_batch(ds.source, ds.target_train, 16, 28, rng);
    ASSERT_EQ(b.source_images.size(), 16u);
    ASSERT_EQ(b.target_images.size(), 16u);
    for (const auto& item : b.source_images) {
        EXPECT_EQ(item.image.side, 28);
        EXPECT_GE(item.label, 0);
    }
    for (const auto& item : b.target_images) {
        EXPECT_EQ(item.image.side, 28);
        EXPECT_EQ(item.label, kHiddenLabel);
        const bool found = std::any_of(ds.target_train.begin(), ds.target_train.end(),
                                       [&](const LabeledImage& t) { return center_crop(t.image, 28) == item.image; });
        EXPECT_TRUE(found);
    }
}

TEST(MakeBatch, SourceCropsAreSubWindowsWhenNotAugmented) {
    const Dataset ds = generate_dataset(small_spec());
    Rng rng(8);
    BatchOptions opts;
    opts.augment = false;
    const auto items = sample_source(ds.source, 12, 28, rng, opts);
    for (const auto& item : items) {
        bool found = false;
        for (const auto& src : ds.source) {
            if (src.label != item.label) continue;
            for (int r = 0; r <= 4 && !found; ++r)
                for (int c = 0; c <= 4 && !found; ++c) found = crop(src.image, r, c, 28) == item.image;
            if (found) break;
        }
        EXPECT_TRUE(found);
    }
}

TEST(MakeBatch, DeterministicForRngState) {
    const Dataset ds = generate_dataset(small_spec());
    Rng a(99), b(99);
    const Batch x = make_batch(ds.source, ds.target_train, 8, 28, a);
    const Batch y = make_batch(ds.source, ds.target_train, 8, 28, b);
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_EQ(x.source_images[i].image, y.source_images[i].image);
        EXPECT_EQ(x.target_images[i].image, y.target_images[i].image);
    }
}
