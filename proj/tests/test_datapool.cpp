#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "tbu/datapool.hpp"

using namespace tbu;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("tbu_datapool_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

PlantedPoolSpec small_spec() {
    PlantedPoolSpec s;
    s.pool_size = 400;
    s.validation_size = 50;
    s.test_size = 50;
    s.seed = 7;
    return s;
}

}  // namespace

TEST(PlantedPool, DegenerateFractionsGiveOnlyFrontier) {
    auto spec = small_spec();
    spec.core_fraction = 0;
    spec.noise_fraction = 0;
    const auto pool = generate_planted_pool(spec);
    for (auto r : pool.region) EXPECT_EQ(r, Region::frontier);
    EXPECT_EQ(pool.dataset.labels, pool.true_label);
}

TEST(PlantedPool, SameSeedIsBitIdentical) {
    const auto a = generate_planted_pool(small_spec());
    const auto b = generate_planted_pool(small_spec());
    ASSERT_EQ(a.dataset.features.size(), b.dataset.features.size());
    EXPECT_EQ(0, std::memcmp(a.dataset.features.data(), b.dataset.features.data(), sizeof(double) * a.dataset.features.size()));
    EXPECT_EQ(a.dataset.labels, b.dataset.labels);
    EXPECT_EQ(a.region, b.region);

    auto other = small_spec();
    other.seed = 8;
    EXPECT_FALSE(generate_planted_pool(other).dataset.features.isApprox(a.dataset.features));
}

TEST(PlantedPool, ClassesBalancedWithinOne) {
    auto spec = small_spec();
    spec.pool_size = 401;
    spec.num_classes = 3;
    const auto pool = generate_planted_pool(spec);
    std::vector<int> count(3, 0);
    for (int y : pool.true_label) ++count[static_cast<std::size_t>(y)];
    EXPECT_LE(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()), 1);
}

TEST(PlantedPool, OnlyNoiseBandRowsAreFlipped) {
    const auto pool = generate_planted_pool(small_spec());
    std::size_t flips = 0;
    for (std::size_t i = 0; i < pool.region.size(); ++i) {
        if (pool.dataset.labels[i] != pool.true_label[i]) {
            EXPECT_EQ(pool.region[i], Region::noise_band);
            ++flips;
        }
    }
    EXPECT_GT(flips, 0u);
}

TEST(PlantedPool, FlipCountWithinBinomialInterval) {
    // C=2, flip_p=0.4, 1000 noise-band rows.
    const auto [lo, hi] = oracle::binomial_interval(1000, 0.4, 0.99);
    EXPECT_GE(lo, 340);
    EXPECT_LE(hi, 460);
    int inside = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        PlantedPoolSpec spec;
        spec.num_classes = 2;
        spec.core_fraction = 0;
        spec.noise_fraction = 1;
        spec.flip_p = 0.4;
        spec.pool_size = 1000;
        spec.validation_size = 0;
        spec.test_size = 0;
        spec.seed = seed;
        const auto pool = generate_planted_pool(spec);
        int flips = 0;
        for (std::size_t i = 0; i < 1000; ++i) {
            ASSERT_EQ(pool.region[i], Region::noise_band);
            flips += pool.dataset.labels[i] != pool.true_label[i];
        }
        EXPECT_GE(flips, 340) << "seed " << seed;
        EXPECT_LE(flips, 460) << "seed " << seed;
        inside += flips >= lo && flips <= hi;
    }
    // 99% interval: at most a couple of the 20 seeds may fall outside.
    EXPECT_GE(inside, 18);
}

TEST(PlantedPool, InvalidSpecsRejected) {
    auto s = small_spec();
    s.core_fraction = 0.7;
    s.noise_fraction = 0.4;
    EXPECT_THROW(generate_planted_pool(s), ConfigError);
    s = small_spec();
    s.flip_p = 0.6;
    EXPECT_THROW(generate_planted_pool(s), ConfigError);
    s = small_spec();
    s.core_fraction = -0.1;
    EXPECT_THROW(generate_planted_pool(s), ConfigError);
}

TEST(Split, ExhaustionLeavesNoUnlabeled) {
    const auto pool = generate_planted_pool(small_spec());
    const auto n = pool.dataset.size();
    const auto state = split_initial(pool.dataset, n, 0, 0, 1);
    EXPECT_TRUE(state.unlabeled.empty());
    EXPECT_EQ(state.labeled.size(), n);
}

TEST(Split, CountsAndDisjointness) {
    Dataset d;
    d.features = Matrix::Random(1000, 2);
    d.labels.assign(1000, 0);
    const auto s = split_initial(d, 100, 50, 70, 3);
    EXPECT_EQ(s.labeled.size(), 100u);
    EXPECT_EQ(s.unlabeled.size(), 900u - 50u - 70u);
    EXPECT_NO_THROW(s.validate(1000));
    std::set<RowIndex> all;
    for (const auto* l : {&s.labeled, &s.unlabeled, &s.validation, &s.test}) all.insert(l->begin(), l->end());
    EXPECT_EQ(all.size(), 1000u);
}

TEST(Split, DeterministicAndErrors) {
    Dataset d;
    d.features = Matrix::Random(50, 2);
    d.labels.assign(50, 1);
    d.num_classes = 2;
    const auto a = split_initial(d, 10, 5, 5, 9);
    const auto b = split_initial(d, 10, 5, 5, 9);
    EXPECT_EQ(a.labeled, b.labeled);
    EXPECT_EQ(a.unlabeled, b.unlabeled);
    EXPECT_THROW(split_initial(d, 40, 6, 5, 9), ConfigError);
    EXPECT_THROW(split_initial(d, 0, 5, 5, 9), ConfigError);
}

TEST(PoolState, AcquisitionMovesAndRejectsRepeats) {
    PoolState s;
    s.labeled = {0};
    s.unlabeled = {1, 2, 3, 4};
    s.acquire({3, 1});
    EXPECT_EQ(s.labeled, (IndexList{0, 3, 1}));
    EXPECT_EQ(s.unlabeled, (IndexList{2, 4}));
    EXPECT_THROW(s.acquire({3}), IntegrityError);
    EXPECT_THROW(s.acquire({2, 2}), IntegrityError);
    EXPECT_NO_THROW(s.validate(5));
    s.test = {0};
    EXPECT_THROW(s.validate(5), IntegrityError);
}

TEST(Standardizer, UsesOnlyFittedRows) {
    Matrix x(4, 2);
    x << 1, 5, 3, 5, 100, -7, 0, 0;
    const auto s = Standardizer::fit(x, {0, 1});
    EXPECT_DOUBLE_EQ(s.mean()[0], 2.0);
    EXPECT_DOUBLE_EQ(s.scale()[0], 1.0);
    EXPECT_DOUBLE_EQ(s.scale()[1], 1.0);  // zero variance keeps scale 1
    const Matrix y = s.apply(x);
    EXPECT_DOUBLE_EQ(y(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(y(2, 0), 98.0);
}

TEST(Perturbation, ZeroWeakScaleIsIdentity) {
    PerturbationSpec spec;
    spec.weak_noise_scale = 0;
    std::mt19937_64 rng(1);
    const std::vector<double> x{0.3, -1.5, 2.0};
    EXPECT_EQ(apply_perturbation(x, spec, Perturbation::weak(), rng), x);
}

TEST(Perturbation, DropoutOfOneRejected) {
    PerturbationSpec spec;
    spec.dropout_rate = 1.0;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec.dropout_rate = 0.1;
    spec.strong_noise_scale = 0.05;
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Perturbation, ScalingLevelThreeByHand) {
    // Schedule 1 - 0.1 * level: level 3 multiplies by 0.7.
    std::mt19937_64 rng(0);
    const auto out = apply_perturbation(std::vector<double>{1, 2}, PerturbationSpec{},
                                        Perturbation::corrupt(CorruptionKind::scaling, 3), rng);
    EXPECT_DOUBLE_EQ(out[0], 0.7);
    EXPECT_DOUBLE_EQ(out[1], 1.4);
    EXPECT_DOUBLE_EQ(corruption_scale_factor(1), 0.9);
}

TEST(Perturbation, LevelZeroIsIdentityForEveryKind) {
    const std::vector<double> x{0.25, -3.0};
    for (auto kind : {CorruptionKind::additive_noise, CorruptionKind::scaling, CorruptionKind::offset}) {
        std::mt19937_64 rng(5);
        EXPECT_EQ(apply_perturbation(x, PerturbationSpec{}, Perturbation::corrupt(kind, 0), rng), x);
    }
    EXPECT_THROW(corruption_offset(6), ConfigError);
    EXPECT_THROW(parse_corruption("blur"), ConfigError);
}

TEST(Perturbation, MatrixFormMatchesRowCalls) {
    Matrix x = Matrix::Random(5, 3);
    PerturbationSpec spec;
    std::mt19937_64 a(11), b(11);
    const Matrix m = apply_perturbation(x, spec, Perturbation::strong(), a);
    for (Eigen::Index i = 0; i < 5; ++i) {
        const auto row = apply_perturbation(std::span<const double>(x.row(i).data(), 3), spec, Perturbation::strong(), b);
        for (Eigen::Index j = 0; j < 3; ++j) EXPECT_EQ(m(i, j), row[static_cast<std::size_t>(j)]);
    }
}

TEST(Csv, OneRowFile) {
    const auto dir = temp_dir("one_row");
    write(dir / "d.csv", "f0,f1,label\n0.0,1.0,0\n");
    const auto d = load_csv(dir / "d.csv", 2);
    EXPECT_EQ(d.size(), 1u);
    EXPECT_EQ(d.dim(), 2u);
    EXPECT_EQ(d.num_classes, 2);
}

TEST(Csv, ParseErrorsCarryLineNumbers) {
    const auto dir = temp_dir("errors");
    write(dir / "empty.csv", "");
    EXPECT_THROW(load_csv(dir / "empty.csv"), ParseError);

    write(dir / "ragged.csv", "f0,f1,label\n1,2,0\n1,0\n");
    try {
        load_csv(dir / "ragged.csv");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    write(dir / "text.csv", "f0,label\nabc,0\n");
    EXPECT_THROW(load_csv(dir / "text.csv"), ParseError);
    write(dir / "label.csv", "f0,label\n1.5,2\n");
    EXPECT_THROW(load_csv(dir / "label.csv", 2), ParseError);
    EXPECT_THROW(load_csv(dir / "missing.csv"), ConfigError);
}

TEST(Csv, TenThousandRowRoundTripIsExact) {
    const auto dir = temp_dir("round_trip");
    auto spec = small_spec();
    spec.pool_size = 10000;
    spec.validation_size = 0;
    spec.test_size = 0;
    const auto pool = generate_planted_pool(spec);
    save_csv(dir / "pool.csv", pool.dataset);
    const auto back = load_csv(dir / "pool.csv", spec.num_classes);
    ASSERT_EQ(back.size(), 10000u);
    EXPECT_EQ(back.labels, pool.dataset.labels);
    for (Eigen::Index i = 0; i < back.features.size(); ++i) {
        ASSERT_EQ(back.features.data()[i], pool.dataset.features.data()[i]) << "cell " << i;
    }
}

TEST(Csv, AnnotationsAndIndexLists) {
    const auto dir = temp_dir("annotations");
    const auto pool = generate_planted_pool(small_spec());
    save_annotations(dir / "a.csv", pool);
    std::ifstream in(dir / "a.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "index,region,true_label,observed_label");
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, pool.dataset.size());

    save_index_list(dir / "idx.csv", {5, 2, 9});
    EXPECT_EQ(load_index_list(dir / "idx.csv"), (IndexList{5, 2, 9}));
}
