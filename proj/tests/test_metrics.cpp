#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "deshadow/errors.hpp"
#include "deshadow/metrics.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace deshadow;
using namespace deshadow::metrics;

namespace {

torch::Tensor rand64(std::vector<int64_t> shape, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::rand(shape, gen, torch::kFloat64);
}

std::vector<uint8_t> keep_of(const torch::Tensor& sel) {
    auto v = oracle::to_vector(sel);
    return {v.begin(), v.end()};
}

} // namespace

TEST(Lab, ReferencePoints) {
    auto white = rgb_to_lab(torch::ones({3, 1, 1}, torch::kFloat64)).flatten();
    EXPECT_NEAR(white[0].item<double>(), 100.0, 1e-9);
    EXPECT_LT(std::abs(white[1].item<double>()), 0.01);
    EXPECT_LT(std::abs(white[2].item<double>()), 0.01);
    auto black = rgb_to_lab(torch::zeros({3, 1, 1}, torch::kFloat64)).flatten();
    EXPECT_LT(black.abs().max().item<double>(), 1e-9);
    auto gray = rgb_to_lab(torch::full({3, 1, 1}, 0.5, torch::kFloat64)).flatten();
    const auto expected = oracle::srgb_to_lab(0.5, 0.5, 0.5);
    for (int c = 0; c < 3; ++c)
        EXPECT_NEAR(gray[c].item<double>(), expected[c], 1e-9);
    EXPECT_THROW(rgb_to_lab(torch::full({3, 1, 1}, 1.5, torch::kFloat64)), InvalidInput);
}

TEST(Lab, MatchesClosedFormOnRandomPixels) {
    auto rgb = rand64({3, 4, 4}, 1);
    auto lab = rgb_to_lab(rgb);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            auto e = oracle::srgb_to_lab(rgb[0][i][j].item<double>(), rgb[1][i][j].item<double>(), rgb[2][i][j].item<double>());
            for (int c = 0; c < 3; ++c)
                EXPECT_NEAR(lab[c][i][j].item<double>(), e[c], 1e-9);
        }
}

TEST(Lab, LatticeRoundTrip) {
    auto axis = torch::linspace(0, 1, 17, torch::kFloat64);
    auto grid = torch::meshgrid({axis, axis, axis}, "ij");
    auto rgb = torch::stack({grid[0], grid[1], grid[2]}).reshape({3, 17 * 17, 17});
    auto back = lab_to_rgb(rgb_to_lab(rgb));
    EXPECT_LT((back - rgb).abs().max().item<double>(), 1e-4);
}

TEST(Rmse, Examples) {
    auto a = rand64({3, 4, 4}, 2), b = rand64({3, 4, 4}, 3);
    EXPECT_EQ(rmse(a, a), 0.0);
    EXPECT_NEAR(rmse(torch::zeros({3, 4, 4}), torch::full({3, 4, 4}, 10.0)), 10.0, 1e-12);
    EXPECT_NEAR(rmse(a, b), oracle::rmse(oracle::to_vector(a), oracle::to_vector(b)), 1e-12);
    auto empty = torch::zeros({4, 4}, torch::kBool);
    EXPECT_THROW(rmse(a, b, empty), UndefinedRegion);
}

TEST(Psnr, Examples) {
    EXPECT_NEAR(psnr_from_rmse(10.0, 255.0), 20.0 * std::log10(25.5), 1e-12);
    EXPECT_NEAR(psnr_from_rmse(10.0, 255.0), 28.13, 5e-3);
    EXPECT_NEAR(psnr_from_rmse(5.0, 255.0) - psnr_from_rmse(10.0, 255.0), 20.0 * std::log10(2.0), 1e-12);
    auto a = rand64({3, 4, 4}, 4);
    EXPECT_EQ(psnr(a, a, 1.0), 100.0);
    EXPECT_EQ(psnr(a, a, 1.0, std::nullopt, 60.0), 60.0);
}

TEST(Regions, DecompositionIdentity) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto a = rand64({3, 8, 8}, seed), b = rand64({3, 8, 8}, seed + 100);
        auto mask = (rand64({1, 8, 8}, seed + 200) > 0.6).to(torch::kFloat32);
        auto s = region_selection(mask, Region::shadow), f = region_selection(mask, Region::shadow_free);
        const double ns = s.sum().item<double>(), nf = f.sum().item<double>();
        if (ns == 0 || nf == 0)
            continue;
        EXPECT_EQ(ns + nf, 64.0);
        const double all = rmse(a, b), rs = rmse(a, b, s), rf = rmse(a, b, f);
        EXPECT_NEAR(rs, oracle::region_rmse(a, b, keep_of(s)), 1e-12);
        EXPECT_NEAR(all * all, (ns * rs * rs + nf * rf * rf) / (ns + nf), 1e-9);
        EXPECT_GE(all, std::min(rs, rf) - 1e-12);
        EXPECT_LE(all, std::max(rs, rf) + 1e-12);
    }
}

TEST(Regions, Parsing) {
    EXPECT_EQ(parse_regions("all,shadow,shadow_free").size(), 3u);
    EXPECT_EQ(parse_region("shadow"), Region::shadow);
    EXPECT_THROW(parse_region("penumbra"), ConfigError);
}

TEST(HeatmapTest, SinglePixel) {
    auto ref = rand64({3, 6, 6}, 5);
    auto pred = ref.clone();
    pred[1][2][3] += 0.25;
    auto h = error_heatmap(pred, ref);
    EXPECT_NEAR(h.raw[2][3].item<double>(), 0.0625, 1e-12);
    EXPECT_EQ(h.normalized[2][3].item<double>(), 1.0);
    EXPECT_EQ(h.normalized.sum().item<double>(), 1.0);
    EXPECT_EQ(h.render.pixels.sizes(), (std::vector<int64_t>{3, 6, 6}));
    EXPECT_EQ(error_heatmap(ref, ref).normalized.abs().max().item<double>(), 0.0);
    EXPECT_THROW(error_heatmap(ref, rand64({3, 6, 5}, 6)), InvalidInput);
}

TEST(HeatmapTest, MatchesElementwiseOracle) {
    auto a = rand64({3, 8, 8}, 7), b = rand64({3, 8, 8}, 8);
    auto h = error_heatmap(a, b);
    auto va = oracle::to_vector(a), vb = oracle::to_vector(b), raw = oracle::to_vector(h.raw);
    double total = 0.0, mse = 0.0;
    for (int p = 0; p < 64; ++p) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c)
            s += (va[c * 64 + p] - vb[c * 64 + p]) * (va[c * 64 + p] - vb[c * 64 + p]);
        EXPECT_NEAR(raw[p], s, 1e-12);
        total += raw[p];
    }
    for (size_t i = 0; i < va.size(); ++i)
        mse += (va[i] - vb[i]) * (va[i] - vb[i]);
    mse /= static_cast<double>(va.size());
    EXPECT_NEAR(total, 8 * 8 * 3 * mse, 1e-9);
}

TEST(Scorer, BasicProperties) {
    PerceptualScorer scorer(features::make_extractor("vgg16", 8, 0));
    EXPECT_FALSE(scorer.calibrated());
    EXPECT_NE(scorer.name().find("uncalibrated"), std::string::npos);
    auto a = rand64({3, 32, 32}, 9) * 2 - 1, b = rand64({3, 32, 32}, 10) * 2 - 1;
    EXPECT_EQ(scorer.distance(a, a), 0.0);
    EXPECT_NEAR(scorer.distance(a, b), scorer.distance(b, a), 1e-6);
}

TEST(Scorer, MonotoneInNoise) {
    PerceptualScorer scorer(features::make_extractor("vgg16", 8, 0));
    auto samples = data::make_synthetic_fixture(2, 32, 3);
    double small = 0.0, large = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto a = samples[seed % 2].shadow_image.to(ValueSpace::model).pixels.to(torch::kFloat64);
        auto noise = torch::randn(a.sizes(), at::make_generator<at::CPUGeneratorImpl>(seed), torch::kFloat64);
        small += scorer.distance(a, a + 0.01 * noise);
        large += scorer.distance(a, a + 0.1 * noise);
    }
    EXPECT_GT(large, small);
}

TEST(Scorer, CalibrationFile) {
    auto dir = fs::temp_directory_path() / "deshadow_metrics_cal";
    fs::create_directories(dir);
    auto fx = std::make_shared<features::IdentityExtractor>();
    EXPECT_THROW(PerceptualScorer(fx, dir / "absent.txt"), ConfigError);
    {
        std::ofstream(dir / "bad.txt") << "wrong 1 1 1\n";
        EXPECT_THROW(PerceptualScorer(fx, dir / "bad.txt"), ConfigError);
    }
    std::ofstream(dir / "cal.txt") << "# weights\ninput 2 0 0\n";
    PerceptualScorer calibrated(fx, dir / "cal.txt");
    EXPECT_TRUE(calibrated.calibrated());
    PerceptualScorer unit(fx);
    auto a = rand64({3, 4, 4}, 11), b = rand64({3, 4, 4}, 12);
    auto ua = a / a.pow(2).sum(0, true).sqrt(), ub = b / b.pow(2).sum(0, true).sqrt();
    const double expected = 2.0 * (ua[0] - ub[0]).pow(2).mean().item<double>();
    EXPECT_NEAR(calibrated.distance(a, b), expected, 1e-6);
    EXPECT_GT(unit.distance(a, b), 0.0);
}

TEST(Evaluate, IdentityRemoverOnShadowlessData) {
    data::Dataset ds;
    for (auto& s : data::make_synthetic_fixture(3, 32, 4)) {
        s.shadow_image = *s.shadow_free_image;
        ds.samples.push_back(s);
    }
    auto report = evaluate_dataset([](const torch::Tensor& x) { return x; }, ds);
    ASSERT_EQ(report.records.size(), 9u);
    for (const auto& r : report.records) {
        EXPECT_EQ(r.rmse_rgb, 0.0);
        EXPECT_EQ(r.psnr_rgb, 100.0);
        EXPECT_EQ(r.psnr_lab, 100.0);
    }
}

TEST(Evaluate, RecordsAndAggregatesConsistent) {
    data::Dataset ds;
    ds.samples = data::make_synthetic_fixture(4, 32, 5);
    std::reverse(ds.samples.begin(), ds.samples.end());
    auto dir = fs::temp_directory_path() / "deshadow_eval";
    fs::remove_all(dir);
    MetricOptions opt;
    opt.heatmap_dir = dir / "heatmaps";
    PerceptualScorer scorer(std::make_shared<features::IdentityExtractor>());
    auto report = evaluate_dataset([](const torch::Tensor& x) { return x * 0.9 + 0.05; }, ds, opt, &scorer);
    EXPECT_EQ(report.records.front().identifier, "fixture_000");

    std::map<std::string, int64_t> all, parts;
    for (const auto& r : report.records) {
        (r.region == Region::all ? all : parts)[r.identifier] += r.pixels;
        EXPECT_EQ(r.lpips.has_value(), r.region == Region::all);
        if (r.rmse_rgb > 0)
            EXPECT_NEAR(r.psnr_rgb, 20.0 * std::log10(255.0 / r.rmse_rgb), 1e-9);
    }
    EXPECT_EQ(all, parts);

    for (auto region : {Region::all, Region::shadow, Region::shadow_free}) {
        std::vector<double> v;
        for (const auto& r : report.records)
            if (r.region == region)
                v.push_back(r.rmse_lab);
        double mean = 0.0, var = 0.0;
        for (double x : v)
            mean += x / static_cast<double>(v.size());
        for (double x : v)
            var += (x - mean) * (x - mean) / static_cast<double>(v.size());
        const auto* agg = report.find(region, "rmse_lab");
        ASSERT_NE(agg, nullptr);
        EXPECT_NEAR(agg->mean, mean, 1e-12);
        EXPECT_NEAR(agg->stddev, std::sqrt(var), 1e-12);
        EXPECT_EQ(agg->count, v.size());
    }

    report.write(dir);
    EXPECT_TRUE(fs::exists(dir / "eval_summary.csv"));
    EXPECT_TRUE(fs::exists(dir / "heatmaps" / "fixture_002.png"));
    std::ifstream in(dir / "eval_report.json");
    auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j["records"].size(), report.records.size());
}

TEST(Evaluate, UnpairedDatasetIsConfigError) {
    data::Dataset ds;
    ds.samples = data::make_synthetic_fixture(1, 32, 6);
    ds.samples[0].shadow_free_image.reset();
    EXPECT_THROW(evaluate_dataset([](const torch::Tensor& x) { return x; }, ds), ConfigError);
}
