#include "d2nn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace d2nn {
namespace {

struct TableRow {
    ElectronicKind kind;
    std::size_t side;
    std::size_t params;
    std::size_t flops;
};

// Reference accounting for the two small back-ends (10 classes).
constexpr TableRow kTable[] = {
    {ElectronicKind::fc, 10, 1000, 2000},     {ElectronicKind::fc, 25, 6250, 12500},
    {ElectronicKind::fc, 50, 25000, 50000},   {ElectronicKind::conv2f1, 10, 615, 3102},
    {ElectronicKind::conv2f1, 25, 825, 9048}, {ElectronicKind::conv2f1, 50, 3345, 43248},
};

struct Correct {
    double sum_target = 0.0;
    double sum_competitor = 0.0;
    double sum_power = 0.0;
    std::size_t n = 0;
};

Correct correct_sums(const std::vector<SampleRecord>& samples) {
    Correct c;
    for (const auto& s : samples) {
        if (s.prediction != s.label) continue;
        double competitor = 0.0;
        for (std::size_t k = 0; k < s.signals.size(); ++k)
            if (k != s.label) competitor = std::max(competitor, s.signals[k]);
        c.sum_target += s.signals.at(s.label);
        c.sum_competitor += competitor;
        c.sum_power += s.output_power;
        ++c.n;
    }
    return c;
}

}  // namespace

std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<SampleRecord>& samples, std::size_t classes) {
    std::vector<std::vector<std::size_t>> m(classes, std::vector<std::size_t>(classes, 0));
    for (const auto& s : samples) {
        if (s.label >= classes || s.prediction >= classes)
            throw ValidationError("confusion_matrix: label or prediction out of range");
        ++m[s.label][s.prediction];
    }
    return m;
}

std::optional<double> power_efficiency(const std::vector<SampleRecord>& samples) {
    const Correct c = correct_sums(samples);
    if (c.n == 0 || !(c.sum_power > 0.0)) return std::nullopt;
    return c.sum_target / c.sum_power;
}

std::optional<double> signal_contrast(const std::vector<SampleRecord>& samples) {
    const Correct c = correct_sums(samples);
    if (c.n == 0 || !(c.sum_power > 0.0)) return std::nullopt;
    return (c.sum_target - c.sum_competitor) / c.sum_power;
}

EvalReport evaluate(TrainableSystem& system, const InputEncoder& encoder, const SampleView& samples,
                    std::size_t classes) {
    if (samples.size() == 0) throw ValidationError("evaluate: empty sample set");
    EvalReport r;
    r.classes = classes;
    std::size_t correct = 0;
    for (std::size_t i : samples.indices) {
        const Prediction p = system.predict(encoder(samples.set->image(i)));
        if (p.scores.size() != classes) throw ValidationError("evaluate: class count mismatch");
        SampleRecord s{i, samples.set->label(i), p.label(), p.scores, p.output_power};
        if (s.prediction == s.label) ++correct;
        r.samples.push_back(std::move(s));
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    r.confusion = confusion_matrix(r.samples, classes);
    const bool optical = std::all_of(r.samples.begin(), r.samples.end(),
                                     [](const SampleRecord& s) { return std::isfinite(s.output_power); });
    if (optical) {
        r.mean_efficiency = power_efficiency(r.samples);
        r.mean_contrast = signal_contrast(r.samples);
    }
    return r;
}

std::string eval_report_csv(const EvalReport& report, const std::string& config_hash) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17);
    os << "index,label,prediction";
    for (std::size_t k = 0; k < report.classes; ++k) os << ",I_" << k;
    os << ",E\n";
    for (const auto& s : report.samples) {
        os << s.index << ',' << s.label << ',' << s.prediction;
        for (double v : s.signals) os << ',' << v;
        os << ',';
        if (std::isfinite(s.output_power)) os << s.output_power;
        os << '\n';
    }
    auto opt = [](const std::optional<double>& v) {
        std::ostringstream o;
        o.imbue(std::locale::classic());
        o << std::setprecision(17);
        if (v)
            o << *v;
        else
            o << "absent";
        return o.str();
    };
    os << "# summary\n";
    os << "# config_hash," << config_hash << '\n';
    os << "# samples," << report.samples.size() << '\n';
    os << "# accuracy," << report.accuracy << '\n';
    os << "# mean_efficiency," << opt(report.mean_efficiency) << '\n';
    os << "# mean_contrast," << opt(report.mean_contrast) << '\n';
    for (std::size_t r = 0; r < report.confusion.size(); ++r) {
        os << "# confusion_" << r;
        for (std::size_t c : report.confusion[r]) os << ',' << c;
        os << '\n';
    }
    return os.str();
}

ComplexityReport complexity_report(ElectronicKind kind, std::size_t side, std::size_t classes) {
    if (side == 0 || classes == 0) throw ValidationError("complexity_report: empty network");
    ComplexityReport r;
    if (kind == ElectronicKind::fc) {
        r.macs = side * side * classes;
        r.params_weights_only = r.macs;
        r.params_with_biases = r.macs + classes;
    } else {
        const Conv2F1Net net(side, classes);
        const std::size_t o1 = net.conv1.output_side(side);
        const std::size_t o2 = net.conv2.output_side(o1);
        const std::size_t k1 = net.conv1.kernel * net.conv1.kernel, k2 = net.conv2.kernel * net.conv2.kernel;
        const std::size_t hidden = net.fc1.outputs;
        r.macs = o1 * o1 * k1 + o2 * o2 * k2 + o2 * o2 * hidden + hidden * classes;
        r.params_weights_only = k1 + k2 + o2 * o2 * hidden + hidden * classes;
        r.params_with_biases = r.params_weights_only + 2 + hidden + classes;
    }
    r.flops = 2 * r.macs;
    r.energy_joules_per_image = static_cast<double>(r.macs) * kJoulesPerMac;
    if (classes == 10)
        for (const auto& row : kTable)
            if (row.kind == kind && row.side == side) {
                r.table_params = row.params;
                r.table_flops = row.flops;
                r.diverges_from_table = row.params != r.params_weights_only || row.flops != r.flops;
            }
    return r;
}

ComplexityReport complexity_report(const ElectronicNet& net) {
    return complexity_report(net.kind(), net.sensor_side(), net.classes());
}

}  // namespace d2nn
