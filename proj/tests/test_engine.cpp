#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "deshadow/config.hpp"
#include "deshadow/engine.hpp"
#include "deshadow/errors.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace deshadow;
using namespace deshadow::engine;

namespace {

Translators identity_translators() {
    return {[](const torch::Tensor& v) { return v.clone(); },
            [](const torch::Tensor& u, const torch::Tensor&) { return u.clone(); }};
}

TrainConfig small_config(Regime regime = Regime::unpaired) {
    std::map<std::string, std::string> kv{{"regime", to_string(regime)},
                                          {"depth", "3"},
                                          {"resolution", "32"},
                                          {"epochs", "4"},
                                          {"decay_start_epoch", "2"},
                                          {"lr", "0.0002"},
                                          {"feature_extractor", "identity"},
                                          {"replay_capacity", "3"},
                                          {"mask_bank_capacity", "4"},
                                          {"seed", "5"}};
    return build_config(kv);
}

data::Dataset fixture_dataset(int count = 4) {
    data::Dataset ds;
    ds.layout = data::Layout::istd;
    ds.samples = data::make_synthetic_fixture(count, 32, 0);
    return ds;
}

std::shared_ptr<features::FeatureExtractor> identity_fx() { return std::make_shared<features::IdentityExtractor>(); }

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters())
        out.push_back(p.detach().clone());
    return out;
}

bool unchanged(const torch::nn::Module& m, const std::vector<torch::Tensor>& before) {
    auto params = m.parameters();
    for (size_t i = 0; i < params.size(); ++i)
        if (!torch::equal(params[i], before[i]))
            return false;
    return true;
}

void set_group_lr(torch::optim::Adam& opt, double lr) {
    for (auto& g : opt.param_groups())
        static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("deshadow_engine_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST(BinarizeCycle, MatchesMedianOracle) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
    auto a = torch::rand({2, 3, 8, 8}, gen, torch::kFloat64) * 2 - 1;
    auto b = torch::rand({2, 3, 8, 8}, gen, torch::kFloat64) * 2 - 1;
    auto mask = binarize_cycle(a, b);
    auto d = (a - b).mean(1) * 0.5;
    for (int n = 0; n < 2; ++n) {
        auto values = oracle::to_vector(d[n]);
        auto expected = oracle::threshold_strict(values, oracle::median(values));
        auto got = oracle::to_vector(mask.value[n]);
        for (size_t i = 0; i < values.size(); ++i)
            EXPECT_EQ(got[i], expected[i]);
    }
    auto soft = oracle::to_vector(mask.soft);
    for (double s : soft)
        EXPECT_TRUE(s >= 0.0 && s <= 1.0);
}

TEST(BinarizeCycle, GradientFlowsThroughSoftPath) {
    auto a = torch::rand({1, 3, 8, 8}, torch::kFloat64).requires_grad_(true);
    auto b = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    auto mask = binarize_cycle(a, b);
    mask.value.sum().backward();
    EXPECT_GT(a.grad().abs().sum().item<double>(), 0.0);
}

TEST(ForwardStep, IdentityGeneratorsGiveEmptyForwardMask) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(2);
    auto u = torch::rand({1, 3, 16, 16}, gen) * 2 - 1, v = torch::rand({1, 3, 16, 16}, gen) * 2 - 1;
    auto m = torch::zeros({1, 1, 16, 16});
    auto tr = identity_translators();
    auto s = forward_step(u, v, m, tr);
    EXPECT_TRUE(torch::equal(s.u_hat, v));
    EXPECT_TRUE(torch::equal(s.v_hat, u));
    EXPECT_EQ(s.mask_f.hard().sum().item<double>(), 0.0);
    reconstruction_step(s, tr);
    EXPECT_TRUE(s.has_reconstruction());
    EXPECT_TRUE(torch::equal(s.u_rec, u));
    EXPECT_TRUE(torch::equal(s.v_rec, v));
    EXPECT_TRUE(s.non_finite_fields().empty());
    EXPECT_THROW(forward_step(u, v, torch::zeros({1, 1, 8, 8}), tr), InvalidInput);
}

TEST(ReconstructionStep, PerfectInversesRecover) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    auto u = torch::rand({1, 3, 16, 16}, gen) * 0.5, shade = torch::rand({1, 1, 16, 16}, gen) > 0.5;
    auto m = shade.to(torch::kFloat32);
    Translators tr{[m](const torch::Tensor& v) { return v + 0.3 * m; },
                   [](const torch::Tensor& u, const torch::Tensor& mask) { return u - 0.3 * mask; }};
    auto v = u - 0.3 * m;
    auto s = forward_step(u, v, m, tr);
    reconstruction_step(s, tr);
    EXPECT_LT((s.u_rec - u).abs().max().item<double>(), 1e-6);
    EXPECT_EQ(s.u_hat.sizes(), u.sizes());
    EXPECT_EQ(s.mask_rec_f.value.sizes(), m.sizes());
}

TEST(ReconstructionStep, LiteralFlagFeedsUHat) {
    auto u = torch::zeros({1, 3, 16, 16}), v = torch::ones({1, 3, 16, 16});
    std::vector<double> seen;
    Translators tr{[&](const torch::Tensor& x) {
                       seen.push_back(x.mean().item<double>());
                       return x.clone();
                   },
                   [](const torch::Tensor& u, const torch::Tensor&) { return u.clone() - 0.5; }};
    auto s = forward_step(u, v, torch::zeros({1, 1, 16, 16}), tr);
    reconstruction_step(s, tr, true);
    EXPECT_DOUBLE_EQ(seen.back(), 1.0);
    auto s2 = forward_step(u, v, torch::zeros({1, 1, 16, 16}), tr);
    reconstruction_step(s2, tr, false);
    EXPECT_DOUBLE_EQ(seen.back(), -0.5);
    CycleState empty;
    EXPECT_THROW(reconstruction_step(empty, tr), ContractViolation);
}

TEST(CycleStateTest, RequireCompleteNamesField) {
    CycleState s;
    try {
        s.require_complete();
        FAIL();
    } catch (const ContractViolation& e) {
        EXPECT_NE(std::string(e.what()).find("u"), std::string::npos);
    }
}

TEST(Replay, ZeroSwapReturnsFreshest) {
    ReplayBuffer buf(2, 0.0, 0);
    for (int i = 0; i < 6; ++i) {
        auto x = torch::full({1, 3, 2, 2}, static_cast<float>(i));
        EXPECT_TRUE(torch::equal(buf.query(x), x));
        EXPECT_EQ(buf.size(), static_cast<size_t>(std::min(i + 1, 2)));
    }
}

TEST(Replay, FullSwapAlwaysReturnsStored) {
    ReplayBuffer a(3, 1.0, 9), b(3, 1.0, 9);
    for (int i = 0; i < 3; ++i) {
        a.query(torch::full({1, 1, 1, 1}, static_cast<float>(i)));
        b.query(torch::full({1, 1, 1, 1}, static_cast<float>(i)));
    }
    for (int i = 3; i < 20; ++i) {
        auto x = torch::full({1, 1, 1, 1}, static_cast<float>(i));
        auto ra = a.query(x), rb = b.query(x);
        EXPECT_LT(ra.item<float>(), static_cast<float>(i));
        EXPECT_TRUE(torch::equal(ra, rb));
    }
    EXPECT_THROW(ReplayBuffer(0, 0.5, 0), ConfigError);
}

TEST(Schedule, PiecewiseLinear) {
    TrainConfig c;
    EXPECT_EQ(lr_schedule(0, c), 0.005);
    EXPECT_EQ(lr_schedule(40, c), 0.005);
    EXPECT_EQ(lr_schedule(70, c), 0.0025);
    EXPECT_EQ(lr_schedule(100, c), 0.0);
    double previous = 1.0;
    for (int e = 0; e <= 100; ++e) {
        EXPECT_LE(lr_schedule(e, c), previous);
        previous = lr_schedule(e, c);
    }
    EXPECT_THROW(lr_schedule(-1, c), InvalidInput);
    EXPECT_THROW(lr_schedule(101, c), InvalidInput);
}

TEST(TrainStep, OptimizersTouchOnlyTheirSubset) {
    TrainingState st(small_config());
    features::IdentityExtractor fx;
    auto samples = data::make_synthetic_fixture(1, 32, 0);
    Batch batch;
    batch.u = samples[0].shadow_free_image->to(ValueSpace::model).pixels.unsqueeze(0);
    batch.v = samples[0].shadow_image.to(ValueSpace::model).pixels.unsqueeze(0);
    batch.m = samples[0].mask->bits.unsqueeze(0).to(torch::kFloat32);

    set_group_lr(*st.opt_critic_f, 0.0);
    set_group_lr(*st.opt_critic_s, 0.0);
    auto gf = snapshot(*st.nets.remover), gs = snapshot(*st.nets.inserter);
    auto df = snapshot(*st.nets.critic_f), ds = snapshot(*st.nets.critic_s);
    auto r = train_step(batch, st, fx);
    EXPECT_TRUE(unchanged(*st.nets.critic_f, df));
    EXPECT_TRUE(unchanged(*st.nets.critic_s, ds));
    EXPECT_FALSE(unchanged(*st.nets.remover, gf));
    EXPECT_FALSE(unchanged(*st.nets.inserter, gs));
    EXPECT_EQ(r.replay_f_size, 1u);
    EXPECT_EQ(r.replay_s_size, 1u);
    EXPECT_EQ(r.mask_bank_size, 1u);
    EXPECT_TRUE(r.components.count("mask_sampled_forward"));

    st.set_lr(0.0);
    set_group_lr(*st.opt_critic_f, 2e-4);
    set_group_lr(*st.opt_critic_s, 2e-4);
    gf = snapshot(*st.nets.remover), gs = snapshot(*st.nets.inserter);
    df = snapshot(*st.nets.critic_f);
    r = train_step(batch, st, fx);
    EXPECT_TRUE(unchanged(*st.nets.remover, gf));
    EXPECT_TRUE(unchanged(*st.nets.inserter, gs));
    EXPECT_FALSE(unchanged(*st.nets.critic_f, df));
    EXPECT_EQ(r.replay_f_size, 2u);
}

TEST(TrainStep, PairedLabelsTruthMask) {
    TrainingState st(small_config(Regime::paired));
    features::IdentityExtractor fx;
    auto samples = data::make_synthetic_fixture(1, 32, 1);
    Batch batch;
    batch.paired = true;
    batch.u = samples[0].shadow_free_image->to(ValueSpace::model).pixels.unsqueeze(0);
    batch.v = samples[0].shadow_image.to(ValueSpace::model).pixels.unsqueeze(0);
    batch.m = samples[0].mask->bits.unsqueeze(0).to(torch::kFloat32);
    auto r = train_step(batch, st, fx);
    EXPECT_TRUE(r.components.count("mask_truth_forward"));
    EXPECT_TRUE(r.components.count("pixel_u_uhat"));
}

TEST(TrainerTest, DeterministicTraces) {
    auto run = [] {
        Trainer t(small_config(), fixture_dataset(), identity_fx());
        std::vector<double> trace;
        for (int i = 0; i < 6; ++i)
            trace.push_back(t.step().generator_total);
        return trace;
    };
    EXPECT_EQ(run(), run());
}

TEST(TrainerTest, ResumeMatchesUninterrupted) {
    auto dir = scratch("resume");
    std::vector<double> full;
    {
        Trainer t(small_config(), fixture_dataset(), identity_fx());
        for (int i = 0; i < 10; ++i)
            full.push_back(t.step().generator_total);
    }
    std::vector<double> split;
    {
        Trainer t(small_config(), fixture_dataset(), identity_fx());
        for (int i = 0; i < 5; ++i)
            split.push_back(t.step().generator_total);
        t.save_checkpoint(dir / "mid.bin");
    }
    {
        Trainer t(small_config(), fixture_dataset(), identity_fx());
        t.load_checkpoint(dir / "mid.bin");
        EXPECT_EQ(t.steps_done(), 5);
        for (int i = 0; i < 5; ++i)
            split.push_back(t.step().generator_total);
    }
    ASSERT_EQ(split.size(), full.size());
    for (size_t i = 0; i < full.size(); ++i)
        EXPECT_NEAR(split[i], full[i], 1e-6 * std::max(1.0, std::abs(full[i]))) << "step " << i;
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
    auto dir = scratch("roundtrip");
    Trainer t(small_config(), fixture_dataset(), identity_fx());
    t.step();
    t.save_checkpoint(dir / "a.bin");
    auto header = read_checkpoint_header(dir / "a.bin");
    EXPECT_EQ(header.step, 1);
    EXPECT_EQ(header.spec_hash, t.networks().spec_hash());
    TrainConfig stored;
    auto nets = load_networks(dir / "a.bin", &stored);
    EXPECT_EQ(stored.depth, 3);
    auto a = t.networks().remover->parameters(), b = nets.remover->parameters();
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i)
        EXPECT_TRUE(torch::equal(a[i], b[i]));
}

TEST(Checkpoint, DepthMismatchIsIncompatible) {
    auto dir = scratch("mismatch");
    Trainer t(small_config(), fixture_dataset(), identity_fx());
    t.save_checkpoint(dir / "a.bin");
    auto other = small_config();
    other.depth = 4;
    Trainer u(other, fixture_dataset(), identity_fx());
    EXPECT_THROW(u.load_checkpoint(dir / "a.bin"), IncompatibleCheckpoint);
}

TEST(Checkpoint, TruncatedOrMissingIsCorrupt) {
    auto dir = scratch("truncated");
    Trainer t(small_config(), fixture_dataset(), identity_fx());
    t.save_checkpoint(dir / "a.bin");
    const auto size = fs::file_size(dir / "a.bin");
    fs::resize_file(dir / "a.bin", size / 2);
    EXPECT_THROW(t.load_checkpoint(dir / "a.bin"), CorruptCheckpoint);
    EXPECT_THROW(read_checkpoint_header(dir / "absent.bin"), CorruptCheckpoint);
}

TEST(TrainerTest, PairedNeedsReferences) {
    auto ds = fixture_dataset();
    ds.samples[1].mask.reset();
    EXPECT_THROW(Trainer(small_config(Regime::paired), ds, identity_fx()), ConfigError);
}

TEST(Log, HeaderAndRows) {
    auto dir = scratch("log");
    Trainer t(small_config(), fixture_dataset(), identity_fx());
    {
        TrainLog log(dir / "train_log.csv");
        log.write(t.step());
        log.write(t.step());
    }
    {
        TrainLog log(dir / "train_log.csv", true);
        log.write(t.step());
    }
    std::ifstream in(dir / "train_log.csv");
    std::string header, line;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("step,epoch,lr,generator_total", 0), 0u);
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty())
            ++rows;
    EXPECT_EQ(rows, 3);
}

TEST(Config, ParseAndRoundTrip) {
    auto kv = parse_config_text("# comment\nregime = paired\nepochs = 7 # trailing\ndecay_start_epoch = 3\ngamma5 = 0\n");
    auto c = build_config(kv);
    EXPECT_EQ(c.regime, Regime::paired);
    EXPECT_EQ(c.epochs, 7);
    EXPECT_EQ(c.weights.gamma5, 0.0);
    EXPECT_EQ(c.weights.gamma2, 20.0);
    EXPECT_EQ(c.weights.beta1, 10.0);
    auto again = build_config(parse_config_text(config_to_text(c)));
    EXPECT_EQ(config_to_text(again), config_to_text(c));
    EXPECT_EQ(again.weights.alpha2, 0.1);
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_config_text("gamma9 = 1\n"), ConfigError);
    EXPECT_THROW(build_config({{"epochs", "ten"}}), ConfigError);
    EXPECT_THROW(build_config({{"depth", "4"}, {"resolution", "40"}}), ConfigError);
    EXPECT_THROW(build_config({{"regime", "semi"}}), ConfigError);
    try {
        parse_config_text("bogus = 1\n");
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("gamma1"), std::string::npos);
    }
}
