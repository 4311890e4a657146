#include <gtest/gtest.h>

#include "deshadow/errors.hpp"
#include "deshadow/nets.hpp"

using namespace deshadow;
using namespace deshadow::nets;

namespace {

const std::vector<int64_t> kChannelsIn{3, 64, 128, 256, 512, 512, 512, 512, 512, 1024, 1024, 1024, 1024, 512, 256, 64};
const std::vector<int64_t> kChannelsOut{64, 128, 256, 512, 512, 512, 512, 512, 512, 512, 512, 512, 256, 128, 64, 3};
const std::vector<bool> kNorm{false, true, true, true, true, true, true, false, true, true, true, true, true, true, true, false};

} // namespace

TEST(GeneratorSpecTest, FullTable) {
    auto spec = GeneratorSpec::make(3);
    ASSERT_EQ(spec.layers.size(), 16u);
    for (size_t i = 0; i < 16; ++i) {
        const auto& l = spec.layers[i];
        EXPECT_EQ(l.index, static_cast<int>(i + 1));
        EXPECT_EQ(l.channels_in, kChannelsIn[i]) << "layer " << i + 1;
        EXPECT_EQ(l.channels_out, kChannelsOut[i]) << "layer " << i + 1;
        EXPECT_EQ(l.normalize, kNorm[i]) << "layer " << i + 1;
        EXPECT_EQ(l.dropout, (i + 1 >= 4 && i + 1 <= 12) ? 0.5 : 0.0);
        const auto op = i < 8 ? Operation::down : (i < 15 ? Operation::up : Operation::final_up);
        EXPECT_EQ(l.op, op);
    }
    EXPECT_EQ(GeneratorSpec::make(4).layers[0].channels_in, 4);
}

TEST(GeneratorSpecTest, DepthOverrideIsSymmetric) {
    for (int depth = 2; depth <= 8; ++depth) {
        auto spec = GeneratorSpec::make(3, depth);
        ASSERT_EQ(spec.layers.size(), static_cast<size_t>(2 * depth));
        EXPECT_EQ(spec.required_multiple(), int64_t{1} << depth);
        EXPECT_EQ(spec.layers.back().channels_out, 3);
        for (int i = 0; i < depth; ++i)
            EXPECT_EQ(spec.layers[i].index + spec.layers[2 * depth - 1 - i].index, 17);
    }
    EXPECT_THROW(GeneratorSpec::make(3, 1), InvalidInput);
    EXPECT_THROW(GeneratorSpec::make(5), InvalidInput);
}

TEST(GeneratorTest, TracedWidthsAt256) {
    torch::NoGradGuard no_grad;
    auto rng = at::make_generator<at::CPUGeneratorImpl>(0);
    auto g = build_generator(3, rng);
    g->eval();
    std::vector<LayerTrace> trace;
    auto out = g->forward_traced(torch::rand({1, 3, 256, 256}) * 2 - 1, trace);
    ASSERT_EQ(trace.size(), 16u);
    for (size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(trace[i].output_shape[1], kChannelsOut[i]);
        const int64_t side = i < 8 ? (256 >> (i + 1)) : (1 << (i - 7));
        EXPECT_EQ(trace[i].output_shape[2], side) << "layer " << i + 1;
    }
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 3, 256, 256}));
    EXPECT_LT(out.abs().max().item<double>(), 1.0);
}

TEST(GeneratorTest, InputSizeErrorNamesMultiple) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(0);
    auto g = build_generator(3, rng, 4);
    try {
        g->forward(torch::zeros({1, 3, 40, 40}));
        FAIL();
    } catch (const InvalidInput& e) {
        EXPECT_NE(std::string(e.what()).find("multiple of 16"), std::string::npos);
    }
    EXPECT_THROW(g->forward(torch::zeros({1, 4, 32, 32})), InvalidInput);
}

TEST(GeneratorTest, InsertionHasExtraInputChannel) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(0);
    auto gf = build_generator(3, rng, 4);
    auto gs = build_generator(4, rng, 4);
    EXPECT_EQ(parameter_count(*gs) - parameter_count(*gf), 64 * 4 * 4);
    auto out = gs->forward(torch::zeros({2, 3, 32, 32}), torch::ones({2, 1, 32, 32}));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, 3, 32, 32}));
}

TEST(GeneratorTest, GradientReachesEveryParameter) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(1);
    auto g = build_generator(3, rng, 4);
    g->eval();
    auto out = g->forward(torch::rand({1, 3, 64, 64}) * 2 - 1);
    out.square().sum().backward();
    for (const auto& p : g->named_parameters()) {
        ASSERT_TRUE(p.value().grad().defined()) << p.key();
        EXPECT_GT(p.value().grad().abs().sum().item<double>(), 0.0) << p.key();
    }
}

TEST(GeneratorTest, IdentityPassThrough) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(1);
    auto g = build_generator(4, rng, 3);
    g->set_identity(true);
    auto x = torch::rand({1, 3, 16, 16});
    EXPECT_TRUE(torch::equal(g->forward(x, torch::zeros({1, 1, 16, 16})), x));
}

TEST(GeneratorTest, DropoutOnlyInTraining) {
    torch::NoGradGuard no_grad;
    auto rng = at::make_generator<at::CPUGeneratorImpl>(2);
    auto g = build_generator(3, rng, 5);
    auto x = torch::rand({1, 3, 32, 32});
    g->eval();
    EXPECT_TRUE(torch::equal(g->forward(x), g->forward(x)));
    g->train();
    EXPECT_FALSE(torch::equal(g->forward(x), g->forward(x)));
}

TEST(Initialization, Statistics) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(3);
    auto g = build_generator(3, rng);
    std::vector<torch::Tensor> weights, scales;
    for (const auto& p : g->named_parameters()) {
        if (p.key().find("bias") != std::string::npos)
            EXPECT_EQ(p.value().abs().max().item<double>(), 0.0) << p.key();
        else if (p.key().find("norm") != std::string::npos)
            scales.push_back(p.value().flatten());
        else
            weights.push_back(p.value().flatten());
    }
    auto w = torch::cat(weights);
    EXPECT_NEAR(w.mean().item<double>(), 0.0, 1e-4);
    EXPECT_NEAR(w.std().item<double>(), 0.02, 2e-4);
    if (!scales.empty()) {
        auto s = torch::cat(scales);
        EXPECT_NEAR(s.mean().item<double>(), 1.0, 5e-3);
    }
}

TEST(Initialization, ZeroStdAndDeterminism) {
    auto r0 = at::make_generator<at::CPUGeneratorImpl>(4);
    auto d0 = build_discriminator(r0, 0.0);
    for (const auto& p : d0->named_parameters())
        if (p.key().find("norm") == std::string::npos)
            EXPECT_EQ(p.value().abs().max().item<double>(), 0.0) << p.key();

    auto ra = at::make_generator<at::CPUGeneratorImpl>(5);
    auto rb = at::make_generator<at::CPUGeneratorImpl>(5);
    auto a = build_generator(3, ra, 4);
    auto b = build_generator(3, rb, 4);
    auto pa = a->parameters(), pb = b->parameters();
    for (size_t i = 0; i < pa.size(); ++i)
        EXPECT_TRUE(torch::equal(pa[i], pb[i]));
    EXPECT_EQ(a->spec().hash(), b->spec().hash());
    EXPECT_NE(a->spec().hash(), GeneratorSpec::make(3, 5).hash());
}

TEST(DiscriminatorTest, PatchSize) {
    torch::NoGradGuard no_grad;
    auto rng = at::make_generator<at::CPUGeneratorImpl>(6);
    auto d = build_discriminator(rng);
    EXPECT_EQ(d->forward(torch::zeros({1, 3, 256, 256}), torch::zeros({1, 3, 256, 256})).sizes(),
              (std::vector<int64_t>{1, 1, 16, 16}));
    EXPECT_EQ(d->forward(torch::zeros({2, 6, 64, 64})).sizes(), (std::vector<int64_t>{2, 1, 4, 4}));
    EXPECT_THROW(d->forward(torch::zeros({1, 5, 64, 64})), InvalidInput);
    EXPECT_THROW(d->forward(torch::zeros({1, 6, 8, 8})), InvalidInput);
}

TEST(Hashing, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
}
