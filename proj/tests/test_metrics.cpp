#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "d2nn/metrics.hpp"
#include "test_support.hpp"

using namespace d2nn;

namespace {

SampleRecord rec(std::size_t label, std::vector<double> signals, double e) {
    SampleRecord r;
    r.label = label;
    r.prediction = classify(signals);
    r.signals = std::move(signals);
    r.output_power = e;
    return r;
}

/// Scores are read from the first pixel of the input: class = round(10 * |u_0|^2).
class FakeSystem : public TrainableSystem {
public:
    std::vector<std::vector<double>*> parameters() override { return {}; }
    std::vector<std::string> parameter_names() const override { return {}; }
    double batch_loss(const std::vector<ComplexField>&, const std::vector<std::size_t>&, ArrayList*) override {
        return 0.0;
    }
    Prediction predict(const ComplexField& input) override {
        Prediction p;
        p.scores.assign(10, 0.1);
        const auto k = static_cast<std::size_t>(std::lround(std::norm(input.values[0]) * 10.0)) % 10;
        p.scores[k] = 0.5;
        p.output_power = 1.0;
        return p;
    }
};

}  // namespace

TEST(Efficiency, Examples) {
    EXPECT_DOUBLE_EQ(*power_efficiency({rec(0, {1.0, 0.0}, 1.0)}), 1.0);
    EXPECT_DOUBLE_EQ(*power_efficiency({rec(1, {0.0, 0.5}, 1.0)}), 0.5);
    EXPECT_FALSE(power_efficiency({rec(1, {0.7, 0.5}, 1.0)}).has_value());
    EXPECT_FALSE(power_efficiency({}).has_value());
}

TEST(Efficiency, RatioOfMeansOverCorrectSamples) {
    const std::vector<SampleRecord> s{rec(0, {0.2, 0.1}, 1.0), rec(1, {0.1, 0.6}, 3.0), rec(0, {0.1, 0.9}, 2.0)};
    // correct: samples 0 and 1 -> (0.2 + 0.6) / (1 + 3)
    EXPECT_DOUBLE_EQ(*power_efficiency(s), 0.8 / 4.0);
    EXPECT_DOUBLE_EQ(*signal_contrast(s), ((0.2 - 0.1) + (0.6 - 0.1)) / 4.0);
}

TEST(Contrast, Examples) {
    EXPECT_DOUBLE_EQ(*signal_contrast({rec(0, {0.4, 0.4, 0.1}, 1.0)}), 0.0);
    const std::vector<SampleRecord> all_in{rec(2, {0.0, 0.0, 0.7}, 1.0)};
    EXPECT_DOUBLE_EQ(*signal_contrast(all_in), *power_efficiency(all_in));
    const std::vector<SampleRecord> mixed{rec(1, {0.1, 0.3, 0.2}, 1.0), rec(0, {0.5, 0.2, 0.1}, 2.0)};
    const double c = *signal_contrast(mixed);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, *power_efficiency(mixed));
}

TEST(Confusion, Examples) {
    std::vector<SampleRecord> perfect, constant;
    for (std::size_t k = 0; k < 4; ++k) {
        perfect.push_back(rec(k, std::vector<double>(4, 0.0), 1.0));
        perfect.back().prediction = k;
        constant.push_back(perfect.back());
        constant.back().prediction = 2;
    }
    const auto p = confusion_matrix(perfect, 4), c = confusion_matrix(constant, 4);
    std::size_t total = 0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(p[i][j], i == j ? 1u : 0u);
            EXPECT_EQ(c[i][j], j == 2 ? 1u : 0u);
            total += c[i][j];
        }
    EXPECT_EQ(total, 4u);
}

TEST(Evaluate, AccuracyIsTraceOverTotal) {
    LabeledImageSet set;
    set.rows = set.cols = 1;
    // pixel value v -> intensity (v/255)^2 -> class round(10 * that)
    set.pixels = {0, 101, 143, 255, 0, 101};
    set.labels = {0, 4, 8, 9, 3, 4};
    SampleView view{&set, {0, 1, 2, 3, 4, 5}};
    FakeSystem sys;
    const auto r = evaluate(sys, InputEncoder{GridSpec::square(1, 0.53), InputEncoding::amplitude, 1}, view, 10);
    std::size_t trace = 0, total = 0;
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j) {
            total += r.confusion[i][j];
            if (i == j) trace += r.confusion[i][j];
        }
    EXPECT_EQ(total, 6u);
    EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(trace) / 6.0);
    EXPECT_EQ(r.samples.size(), 6u);
    ASSERT_TRUE(r.mean_efficiency.has_value());
    EXPECT_DOUBLE_EQ(*r.mean_efficiency, 0.5);
}

TEST(EvalCsv, Layout) {
    EvalReport r;
    r.classes = 2;
    r.samples = {rec(0, {0.75, 0.25}, 2.0)};
    r.samples[0].index = 7;
    r.accuracy = 1.0;
    r.confusion = {{1, 0}, {0, 0}};
    r.mean_efficiency = 0.375;
    r.mean_contrast = 0.25;
    const auto csv = eval_report_csv(r, "h");
    std::istringstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "index,label,prediction,I_0,I_1,E");
    EXPECT_EQ(row, "7,0,0,0.75,0.25,2");
    EXPECT_NE(csv.find("# summary"), std::string::npos);
    EXPECT_NE(csv.find("accuracy"), std::string::npos);
    EXPECT_NE(csv.find("0.375"), std::string::npos);
}

TEST(Complexity, FullyConnectedRows) {
    struct Row {
        std::size_t side, params, flops;
        double energy;
    };
    for (const Row& row : {Row{10, 1000, 2000, 1.5e-9}, Row{25, 6250, 12500, 9.375e-9}, Row{50, 25000, 50000, 3.75e-8}}) {
        const auto r = complexity_report(ElectronicKind::fc, row.side);
        EXPECT_EQ(r.params_weights_only, row.params);
        EXPECT_EQ(r.params_with_biases, row.params + 10);
        EXPECT_EQ(r.flops, row.flops);
        EXPECT_DOUBLE_EQ(r.energy_joules_per_image, row.energy);
        EXPECT_EQ(*r.table_params, row.params);
        EXPECT_EQ(*r.table_flops, row.flops);
        EXPECT_FALSE(r.diverges_from_table);
    }
}

TEST(Complexity, PublishedEnergyDigits) {
    // The table prints energies to two significant digits; 1.5e-9 and 3.8e-8 agree at that precision.
    auto two_digits = [](double v) {
        const double scale = std::pow(10.0, std::floor(std::log10(v)) - 1.0);
        return std::round(v / scale) * scale;
    };
    EXPECT_DOUBLE_EQ(two_digits(complexity_report(ElectronicKind::fc, 10).energy_joules_per_image), 1.5e-9);
    EXPECT_NEAR(two_digits(complexity_report(ElectronicKind::fc, 50).energy_joules_per_image), 3.8e-8, 1e-20);
    // 6250 MACs at 1.5 pJ is 9.375 nJ, which rounds to 9.4 nJ rather than the printed 9.5 nJ.
    EXPECT_NEAR(two_digits(complexity_report(ElectronicKind::fc, 25).energy_joules_per_image), 9.4e-9, 1e-20);
}

TEST(Complexity, Conv2F1ValidPadding) {
    const auto r10 = complexity_report(ElectronicKind::conv2f1, 10);
    EXPECT_EQ(r10.params_weights_only, 615u);
    EXPECT_EQ(r10.flops, 3102u);
    EXPECT_FALSE(r10.diverges_from_table);
    const auto r25 = complexity_report(ElectronicKind::conv2f1, 25);
    EXPECT_EQ(r25.params_weights_only, 825u);
    EXPECT_EQ(r25.flops, 9048u);
    const auto r50 = complexity_report(ElectronicKind::conv2f1, 50);
    EXPECT_EQ(r50.params_weights_only, 3975u);
    EXPECT_EQ(r50.flops, 48126u);
    EXPECT_TRUE(r50.diverges_from_table);
    EXPECT_EQ(*r50.table_params, 3345u);
}

TEST(Complexity, FromNetAndRejections) {
    const ElectronicNet net(ElectronicKind::fc, 10, 10, 1);
    EXPECT_EQ(complexity_report(net).macs, 1000u);
    EXPECT_THROW(complexity_report(ElectronicKind::fc, 0), ValidationError);
    EXPECT_FALSE(complexity_report(ElectronicKind::fc, 12).table_params.has_value());
}
