#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "d2nn/commands.hpp"
#include "d2nn/hybrid.hpp"
#include "test_support.hpp"

using namespace d2nn;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

D2NNModel front_model(std::size_t n, std::uint64_t seed, ModulationMode mode = ModulationMode::phase_only) {
    auto m = D2NNModel::initialized(GridSpec::square(n, 0.53), 2, 4.0, mode, Parameterization::relu_norm);
    randomize_latents(m, seed);
    return m;
}

std::vector<ComplexField> inputs_for(const GridSpec& g, std::size_t count, std::vector<std::size_t>& labels) {
    const auto set = test::synthetic_set(count, 4, g.n_x / 2);
    const InputEncoder enc{g, InputEncoding::amplitude, 0};
    std::vector<ComplexField> out;
    labels.clear();
    for (std::size_t i = 0; i < set.size(); ++i) {
        out.push_back(enc(set.image(i)));
        labels.push_back(set.label(i));
    }
    return out;
}

SampleView view(const LabeledImageSet& s) {
    SampleView v{&s, {}};
    for (std::size_t i = 0; i < s.size(); ++i) v.indices.push_back(i);
    return v;
}

}  // namespace

TEST(SensorSpec, StandardDeskScale) {
    const auto s = SensorSpec::standard(GridSpec::square(64, 0.53), 10);
    EXPECT_EQ(s.p, 10u);
    EXPECT_EQ(s.block, 3u);
    EXPECT_EQ(s.region(), 30u);
    EXPECT_EQ(s.offset_x(), 17u);
    const auto ref = SensorSpec::standard(GridSpec::square(200, 0.53), 10);
    EXPECT_EQ(ref.region(), 100u);  // 53.3 wavelengths is 100.6 samples
    EXPECT_EQ(SensorSpec::standard(GridSpec::square(200, 0.53), 25).region(), 100u);
    EXPECT_EQ(SensorSpec::standard(GridSpec::square(200, 0.53), 50).block, 2u);
}

TEST(SensorSpec, RejectsIndivisibleOrOversized) {
    const GridSpec g = GridSpec::square(32, 0.53);
    EXPECT_THROW(SensorSpec::covering(g, 10, 25), ValidationError);
    EXPECT_THROW(SensorSpec::covering(g, 10, 40), ValidationError);
    EXPECT_THROW(SensorSpec::covering(g, 0, 10), ValidationError);
    EXPECT_NO_THROW(SensorSpec::covering(g, 8, 32));
    EXPECT_THROW(SensorSpec::standard(GridSpec::square(16, 0.53), 10), ValidationError);
}

TEST(SensorSpec, JsonRoundTrip) {
    const GridSpec g = GridSpec::square(64, 0.53);
    const auto s = SensorSpec::standard(g, 10);
    const auto b = SensorSpec::from_json(g, s.to_json());
    EXPECT_EQ(b.p, s.p);
    EXPECT_EQ(b.block, s.block);
}

TEST(SensorReadout, Examples) {
    const GridSpec g = GridSpec::square(12, 0.53);
    const auto s = SensorSpec::covering(g, 2, 8);
    for (double v : sensor_readout(std::vector<double>(g.size(), 0.7), s)) EXPECT_DOUBLE_EQ(v, 0.7);

    const auto r = random_values(g.size(), 1);
    const auto px = sensor_readout(r, s);
    double covered = 0.0, pixel_sum = 0.0;
    for (std::size_t iy = s.offset_y(); iy < s.offset_y() + 8; ++iy)
        for (std::size_t ix = s.offset_x(); ix < s.offset_x() + 8; ++ix) covered += r[iy * 12 + ix];
    for (double v : px) pixel_sum += v;
    EXPECT_NEAR(pixel_sum * 16.0, covered, 1e-12);

    std::vector<double> one(g.size(), 0.0);
    one[(s.offset_y() + 5) * 12 + s.offset_x() + 1] = 3.2;  // pixel (row 1, col 0)
    const auto p1 = sensor_readout(one, s);
    EXPECT_DOUBLE_EQ(p1[2], 3.2 / 16.0);
    EXPECT_EQ(p1[0] + p1[1] + p1[3], 0.0);
}

TEST(SensorReadout, RejectsNegativeAndWrongSize) {
    const GridSpec g = GridSpec::square(8, 0.53);
    const auto s = SensorSpec::covering(g, 2, 4);
    std::vector<double> neg(g.size(), 0.0);
    neg[0] = -1e-3;  // outside the covered region: never read
    EXPECT_NO_THROW(sensor_readout(neg, s));
    neg[(s.offset_y() + 1) * 8 + s.offset_x() + 2] = -1e-3;
    EXPECT_THROW(sensor_readout(neg, s), ValidationError);
    EXPECT_THROW(sensor_readout(std::vector<double>(5, 0.0), s), ValidationError);
}

TEST(SensorReadout, LinearAndOrderPreserving) {
    const GridSpec g = GridSpec::square(16, 0.53);
    const auto s = SensorSpec::covering(g, 4, 12);
    const auto a = random_values(g.size(), 2), b = random_values(g.size(), 3);
    std::vector<double> mix(g.size()), bigger(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
        mix[i] = 2.0 * a[i] + 0.5 * b[i];
        bigger[i] += b[i];
    }
    const auto pa = sensor_readout(a, s), pb = sensor_readout(b, s), pm = sensor_readout(mix, s),
               pg = sensor_readout(bigger, s);
    for (std::size_t k = 0; k < pa.size(); ++k) {
        EXPECT_NEAR(pm[k], 2.0 * pa[k] + 0.5 * pb[k], 1e-14);
        EXPECT_GE(pg[k], pa[k]);
    }
}

TEST(SensorReadout, BackwardIsTranspose) {
    const GridSpec g = GridSpec::square(16, 0.53);
    const auto s = SensorSpec::covering(g, 4, 12);
    const auto x = random_values(g.size(), 4), w = random_values(16, 5, -1.0, 1.0);
    const auto px = sensor_readout(x, s);
    const auto bx = sensor_readout_backward(w, s);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t k = 0; k < 16; ++k) lhs += w[k] * px[k];
    for (std::size_t i = 0; i < g.size(); ++i) rhs += bx[i] * x[i];
    EXPECT_NEAR(lhs, rhs, 1e-13);
}

TEST(SensorReadout, PhaseInvariance) {
    const GridSpec g = GridSpec::square(16, 0.53);
    const auto s = SensorSpec::covering(g, 4, 16);
    auto f = test::random_field(g, 6);
    const auto before = sensor_readout(f.intensity(), s);
    const auto phases = random_values(g.size(), 7, 0.0, 6.3);
    for (std::size_t i = 0; i < g.size(); ++i) f.values[i] *= std::polar(1.0, phases[i]);
    const auto after = sensor_readout(f.intensity(), s);
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(after[k], before[k], 1e-14);
}

TEST(VirtualRelaunch, Examples) {
    const GridSpec g = GridSpec::square(10, 0.53);
    const auto s = SensorSpec::covering(g, 2, 6);
    const auto ones = virtual_relaunch(std::vector<double>(4, 1.0), s);
    for (std::size_t iy = 0; iy < 10; ++iy)
        for (std::size_t ix = 0; ix < 10; ++ix) {
            const bool in = ix >= 2 && ix < 8 && iy >= 2 && iy < 8;
            EXPECT_EQ(ones.at(ix, iy), Complex(in ? 1.0 : 0.0, 0.0));
        }
    const auto four = virtual_relaunch(std::vector<double>{0.0, 4.0, 0.0, 0.0}, s);
    EXPECT_EQ(four.at(5, 2), Complex(2.0, 0.0));
    EXPECT_EQ(four.at(7, 4), Complex(2.0, 0.0));
    EXPECT_EQ(four.at(4, 4), Complex(0.0, 0.0));
    EXPECT_THROW(virtual_relaunch(std::vector<double>{1.0, -1.0, 0.0, 0.0}, s), ValidationError);
}

TEST(VirtualRelaunch, PoolUpsampleRoundTrip) {
    const GridSpec g = GridSpec::square(64, 0.53);
    const auto s = SensorSpec::standard(g, 10);
    const auto ia = random_values(100, 8);
    const auto back = sensor_readout(virtual_relaunch(ia, s).intensity(), s);
    for (std::size_t k = 0; k < ia.size(); ++k) EXPECT_NEAR(back[k], ia[k], 1e-15 * ia[k]);  // sqrt^2 and block-mean rounding only
}

TEST(VirtualRelaunch, BackwardMatchesCentralDifference) {
    const GridSpec g = GridSpec::square(8, 0.53);
    const auto s = SensorSpec::covering(g, 2, 8);
    auto ia = random_values(4, 9, 0.2, 1.0);
    const auto adj = test::random_field(g, 10);
    auto objective = [&](const std::vector<double>& x) {
        const auto f = virtual_relaunch(x, s);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i)
            acc += adj.values[i].real() * f.values[i].real() + adj.values[i].imag() * f.values[i].imag();
        return acc;
    };
    const auto grad = virtual_relaunch_backward(adj, ia, s);
    for (std::size_t k = 0; k < 4; ++k) {
        const double keep = ia[k], h = 1e-7;
        ia[k] = keep + h;
        const double up = objective(ia);
        ia[k] = keep - h;
        const double down = objective(ia);
        ia[k] = keep;
        EXPECT_NEAR(grad[k], (up - down) / (2.0 * h), 1e-6);
    }
    // dark pixel: clamped derivative stays finite
    const auto dark = virtual_relaunch_backward(adj, std::vector<double>{0.0, 0.0, 0.0, 0.0}, s);
    for (double v : dark) EXPECT_TRUE(std::isfinite(v));
}

TEST(Stage1, DegenerateSensorMatchesManualChain) {
    const GridSpec g = GridSpec::square(16, 0.53);
    const auto front = front_model(16, 1);
    const auto s = SensorSpec::covering(g, 16, 16);
    const auto layout = DetectorLayout::standard(g);
    Stage1System sys(front, s, layout);
    randomize_latents(sys.virtual_model(), 2);
    std::vector<std::size_t> labels;
    const auto in = inputs_for(g, 3, labels);
    double manual = 0.0;
    for (std::size_t b = 0; b < in.size(); ++b) {
        const auto out = model_forward(in[b], front).intensity;
        ComplexField relaunched(g);
        for (std::size_t i = 0; i < g.size(); ++i) relaunched.values[i] = std::sqrt(out[i]);
        const auto final_i = model_forward(relaunched, sys.virtual_model()).intensity;
        manual += evaluate_loss(LossKind::sce, final_i, labels[b], layout).loss;
    }
    manual /= static_cast<double>(in.size());
    EXPECT_NEAR(sys.batch_loss(in, labels, nullptr), manual, 1e-12);
    EXPECT_EQ(sys.virtual_model().layers.size(), 1u);
    EXPECT_EQ(sys.virtual_model().z_in, front.delta_z);
}

TEST(Stage1, GradientMatchesFiniteDifference) {
    const GridSpec g = GridSpec::square(16, 0.53);
    Stage1System sys(front_model(16, 3, ModulationMode::complex), SensorSpec::covering(g, 4, 12),
                     DetectorLayout::standard(g));
    randomize_latents(sys.virtual_model(), 4);
    std::vector<std::size_t> labels;
    const auto in = inputs_for(g, 3, labels);
    const auto report = grad_check(sys, in, labels, 20, 1e-5, 5);
    EXPECT_LE(report.max_relative_error, 1e-4);
    bool saw_optical = false, saw_virtual = false;
    for (const auto& p : report.details) {
        saw_optical |= p.array.rfind("optical.", 0) == 0;
        saw_virtual |= p.array.rfind("virtual.", 0) == 0;
    }
    EXPECT_TRUE(saw_optical);
    EXPECT_TRUE(saw_virtual);
}

TEST(Stage1, CheckpointDropsVirtualLayerOnReload) {
    const GridSpec g = GridSpec::square(16, 0.53);
    Stage1System sys(front_model(16, 3), SensorSpec::covering(g, 4, 12), DetectorLayout::standard(g));
    const auto ck = deserialize_checkpoint(serialize_checkpoint(sys.checkpoint({})));
    EXPECT_EQ(ck.model.layers.size(), 3u);
    EXPECT_EQ(ck.metadata.at("virtual_layers"), 1);
    const auto front = stage1_front(ck);
    ASSERT_EQ(front.layers.size(), 2u);
    for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(front.layers[l].beta, sys.front().layers[l].beta);
    EXPECT_EQ(front.z_out, sys.front().z_out);
}

class HybridGradient : public ::testing::TestWithParam<ElectronicKind> {};

TEST_P(HybridGradient, EndToEndMatchesFiniteDifference) {
    const GridSpec g = GridSpec::square(32, 0.53);
    const auto s = SensorSpec::covering(g, 10, 30);
    HybridSystem sys(front_model(32, 6, ModulationMode::complex), s, ElectronicNet(GetParam(), 10, 10, 7));
    // move batch-norm away from the identity so its gradients are exercised
    auto& bn = sys.electronic().batchnorm();
    bn.scale = random_values(bn.scale.size(), 8, 0.5, 1.5);
    bn.shift = random_values(bn.shift.size(), 9, -0.5, 0.5);
    if (GetParam() == ElectronicKind::conv2f1) {
        auto& c = sys.electronic().conv();
        c.conv1.bias = {0.1};
        c.conv2.bias = {0.05};
        c.fc1.biases = random_values(c.fc1.biases.size(), 10, 0.05, 0.3);
    }
    std::vector<std::size_t> labels;
    const auto in = inputs_for(g, 4, labels);
    const auto report = grad_check(sys, in, labels, 20, 1e-5, 11);
    EXPECT_LE(report.max_relative_error, 1e-4);
    bool saw_optical = false;
    for (const auto& p : report.details) saw_optical |= p.array.rfind(kOpticalPrefix, 0) == 0;
    EXPECT_TRUE(saw_optical);
}

INSTANTIATE_TEST_SUITE_P(Nets, HybridGradient, ::testing::Values(ElectronicKind::fc, ElectronicKind::conv2f1));

TEST(Hybrid, PerfectImagerReadsObjectIntensity) {
    const GridSpec g = GridSpec::square(20, 0.53);
    const auto s = SensorSpec::covering(g, 10, 20);
    HybridSystem sys(std::nullopt, s, ElectronicNet(ElectronicKind::fc, 10, 10, 1));
    EXPECT_FALSE(sys.has_optics());
    const auto f = test::random_field(g, 3);
    EXPECT_EQ(sys.sensor_image(f), sensor_readout(f.intensity(), s));
    for (const auto& n : sys.parameter_names()) EXPECT_EQ(n.rfind("electronic.", 0), 0u) << n;
}

TEST(Hybrid, CheckpointRoundTrip) {
    const GridSpec g = GridSpec::square(32, 0.53);
    HybridSystem sys(front_model(32, 2), SensorSpec::covering(g, 10, 30), ElectronicNet(ElectronicKind::conv2f1, 10, 10, 3));
    sys.electronic().batchnorm().running_mean = random_values(100, 4);
    const auto bytes = serialize_checkpoint(sys.checkpoint({{"note", "x"}}));
    auto back = HybridSystem::from_checkpoint(deserialize_checkpoint(bytes));
    EXPECT_EQ(serialize_checkpoint(back.checkpoint({{"note", "x"}})), bytes);
    EXPECT_EQ(back.electronic().batchnorm().running_mean, sys.electronic().batchnorm().running_mean);
    const auto f = test::random_field(g, 5);
    EXPECT_EQ(back.predict(f).scores, sys.predict(f).scores);
}

TEST(Hybrid, TrainingWithFrozenOpticsOnlyMovesElectronics) {
    const GridSpec g = GridSpec::square(32, 0.53);
    const auto tr = test::synthetic_set(40, 1, 16), va = test::synthetic_set(20, 2, 16);
    const auto front = front_model(32, 5);
    HybridSystem sys(front, SensorSpec::covering(g, 10, 30), ElectronicNet(ElectronicKind::fc, 10, 10, 3));
    const auto fc_before = sys.electronic().fc().weights;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 10;
    cfg.frozen_prefixes = {kOpticalPrefix};
    train(sys, InputEncoder{g, InputEncoding::amplitude, 0}, view(tr), view(va), cfg);
    for (std::size_t l = 0; l < front.layers.size(); ++l) EXPECT_EQ(sys.front()->layers[l].beta, front.layers[l].beta);
    EXPECT_NE(sys.electronic().fc().weights, fc_before);
}

TEST(Hybrid, Stage2StartsBitExactFromStage1) {
    const GridSpec g = GridSpec::square(32, 0.53);
    const auto tr = test::synthetic_set(30, 1, 16), va = test::synthetic_set(20, 2, 16);
    const InputEncoder enc{g, InputEncoding::amplitude, 0};
    const auto s = SensorSpec::covering(g, 10, 30);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 10;
    const auto st1 = train_stage1(front_model(32, 8), s, DetectorLayout::standard(g), enc, view(tr), view(va), cfg);
    const auto front = stage1_front(st1.checkpoint);

    // zero epochs of stage 2 is not allowed, so compare the initial state with a frozen, zero-lr run
    TrainConfig frozen = cfg;
    frozen.frozen_prefixes = {kOpticalPrefix};
    const auto st2 = train_stage2(st1.checkpoint, ElectronicNet(ElectronicKind::fc, 10, 10, 1), s, enc, view(tr),
                                  view(va), frozen);
    const auto h = HybridSystem::from_checkpoint(st2.checkpoint);
    for (std::size_t l = 0; l < front.layers.size(); ++l) EXPECT_EQ(h.front()->layers[l].beta, front.layers[l].beta);
    EXPECT_EQ(st1.training.history.size(), 1u);
}

TEST(Hybrid, DirectTrainingRuns) {
    const GridSpec g = GridSpec::square(32, 0.53);
    const auto tr = test::synthetic_set(30, 1, 16), va = test::synthetic_set(20, 2, 16);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    const auto r = train_direct(front_model(32, 9), ElectronicNet(ElectronicKind::fc, 10, 10, 1),
                                SensorSpec::covering(g, 10, 30), InputEncoder{g, InputEncoding::amplitude, 0},
                                view(tr), view(va), cfg);
    EXPECT_EQ(r.training.history.size(), 2u);
    EXPECT_NO_THROW(HybridSystem::from_checkpoint(r.checkpoint));
}
