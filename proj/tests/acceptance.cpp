// Acceptance run: one PASS/FAIL line per criterion.
// Criteria 6-8 train on MNIST at desk scale (D2NN_MNIST_DIR, default /root/data/mnist) and take about an hour.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "d2nn/commands.hpp"
#include "test_support.hpp"

using namespace d2nn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Criteria expected to fail; see the README.
const std::map<int, std::string> kKnownFailures = {
    {5, "25x25 energy: 6250 MACs at 1.5 pJ is 9.375e-9 J, the table prints 9.5e-9"},
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const GridSpec g = GridSpec::square(16, 0.53);
    const auto set = test::synthetic_set(3, 6, 8);
    const InputEncoder enc{g, InputEncoding::amplitude, 0};
    std::vector<ComplexField> inputs;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < set.size(); ++i) {
        inputs.push_back(enc(set.image(i)));
        labels.push_back(set.label(i));
    }
    double worst = 0.0;
    std::size_t min_probes = 1000, combos = 0;
    std::uint64_t seed = 1;
    for (LossKind loss : {LossKind::mse, LossKind::sce})
        for (ModulationMode mode : {ModulationMode::phase_only, ModulationMode::complex})
            for (Parameterization p : {Parameterization::sigmoid, Parameterization::relu_norm}) {
                auto m = D2NNModel::initialized(g, 2, 4.0, mode, p);
                randomize_latents(m, ++seed);
                AllOpticalSystem sys(m, DetectorLayout::standard(g), loss);
                const auto r = grad_check(sys, inputs, labels, 20, 1e-5, seed + 100);
                worst = std::max(worst, r.max_relative_error);
                min_probes = std::min(min_probes, r.probes);
                ++combos;
            }
    const double t = seconds_since(t0);
    return {combos == 8 && min_probes >= 20 && worst <= 1e-4 && t < 120.0,
            "8 combos, " + std::to_string(min_probes) + " probes each, max rel err " + fmt(worst, 3) + ", " +
                fmt(t, 3) + " s"};
}

Outcome propagators() {
    const auto t0 = std::chrono::steady_clock::now();
    std::istringstream in(cmd_compare_propagators(16, {4.0, 40.0}, 16, 0));
    std::string line, detail;
    double worst = 0.0;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const double err = std::stod(line.substr(line.find(',') + 1));
        worst = std::max(worst, err);
        detail += "z=" + line.substr(0, line.find(',')) + " err " + fmt(err, 3) + "; ";
    }
    const double t = seconds_since(t0);
    return {worst <= 0.02 && t < 60.0, detail + fmt(t, 3) + " s"};
}

Outcome conservation() {
    const GridSpec g48 = GridSpec::square(48, 0.53);
    const auto beam = test::gaussian_beam(g48, 3.0);
    const double asm_ratio = total_power(asm_propagate(beam, PropagationPlan{g48, 4.0})) / total_power(beam);

    // smooth masks keep the field band limited and inside the window
    const GridSpec g = GridSpec::square(64, 0.53);
    auto m = D2NNModel::initialized(g, 3, 4.0, ModulationMode::phase_only, Parameterization::relu_norm);
    for (std::size_t l = 0; l < m.layers.size(); ++l)
        for (std::size_t iy = 0; iy < g.n_y; ++iy)
            for (std::size_t ix = 0; ix < g.n_x; ++ix)
                m.layers[l].beta[iy * g.n_x + ix] =
                    0.05 * static_cast<double>(l + 1) * std::cos(0.2 * g.x_at(ix)) * std::sin(0.15 * g.y_at(iy));
    const auto in = test::gaussian_beam(g, 3.0);
    const double fwd_ratio = integrated_intensity(model_forward(in, m).intensity, g.dx) / total_power(in);
    const double e1 = std::abs(asm_ratio - 1.0), e2 = std::abs(fwd_ratio - 1.0);
    return {e1 <= 1e-6 && e2 <= 1e-6, "asm |dP/P| " + fmt(e1, 3) + ", model_forward |dP/P| " + fmt(e2, 3)};
}

Outcome loss_exactness() {
    const auto n = normalize_detectors(std::vector<double>{2.0, 4.0});
    const bool norm_ok = n.size() == 2 && n[0] == 5.0 && n[1] == 10.0;
    const double sce = sce_loss(std::vector<double>(10, 1.0), 3);
    const bool sce_ok = std::abs(sce - std::log(10.0)) <= 1e-12;
    const auto layout = DetectorLayout::standard(GridSpec::square(32, 0.53));
    const auto t = target_map(4, layout);
    const bool mse_ok = mse_loss(t.values, t) == 0.0;
    const std::vector<double> s{0.3, 1.7, 0.2, 1.69, 0.0, 0.5, 1.1, 0.9, 1.2, 0.01};
    bool scale_ok = true;
    for (double k : {1e-9, 0.37, 1.0, 2.5, 1e6}) {
        std::vector<double> scaled(s);
        for (double& v : scaled) v *= k;
        scale_ok = scale_ok && classify(scaled) == classify(s);
    }
    return {norm_ok && sce_ok && mse_ok && scale_ok,
            std::string("normalize ") + (norm_ok ? "ok" : "bad") + ", sce-ln10 " + fmt(sce - std::log(10.0), 3) +
                ", mse(S,S) " + (mse_ok ? "0" : "nonzero") + ", classify scale " + (scale_ok ? "ok" : "bad")};
}

/// The table prints energies with two significant digits.
double two_digits(double v) {
    const double scale = std::pow(10.0, std::floor(std::log10(v)) - 1.0);
    return std::round(v / scale) * scale;
}

Outcome table_rows() {
    struct Row {
        std::size_t side, params, flops;
        double energy;
    };
    bool ok = true;
    std::string detail;
    for (const Row& r : {Row{10, 1000, 2000, 1.5e-9}, Row{25, 6250, 12500, 9.5e-9}, Row{50, 25000, 50000, 3.8e-8}}) {
        const auto c = complexity_report(ElectronicKind::fc, r.side);
        const bool row_ok = c.params_weights_only == r.params && c.flops == r.flops &&
                            std::abs(two_digits(c.energy_joules_per_image) - r.energy) <= 1e-3 * r.energy;
        ok = ok && row_ok;
        detail += std::to_string(r.side) + ": (" + std::to_string(c.params_weights_only) + ", " +
                  std::to_string(c.flops) + ", " + fmt(c.energy_joules_per_image, 4) + ")" + (row_ok ? "" : " MISMATCH") +
                  "; ";
    }
    return {ok, detail};
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct Run {
    TrainOutcome train;
    EvalReport test;
    double seconds = 0.0;
};

class DeskSuite {
public:
    DeskSuite(const fs::path& work, const fs::path& mnist) : work_(work) {
        base_ = RunConfig::load(D2NN_SOURCE_DIR "/tools/configs/desk_mnist.json");
        base_.dataset.train_images = (mnist / "train-images-idx3-ubyte").string();
        base_.dataset.train_labels = (mnist / "train-labels-idx1-ubyte").string();
        base_.dataset.test_images = (mnist / "t10k-images-idx3-ubyte").string();
        base_.dataset.test_labels = (mnist / "t10k-labels-idx1-ubyte").string();
    }

    const RunConfig& base() const { return base_; }

    /// Trains and evaluates on the test subset; results are cached by name.
    const Run& run(const std::string& name, const std::function<void(RunConfig&)>& tweak = {}) {
        if (auto it = runs_.find(name); it != runs_.end()) return it->second;
        RunConfig c = base_;
        if (tweak) tweak(c);
        c.output_dir = (work_ / name).string();
        std::cerr << "[" << name << "] training\n";
        const auto t0 = std::chrono::steady_clock::now();
        Run r;
        r.train = cmd_train(c, [&](const EpochRecord& e) {
            std::cerr << "[" << name << "] epoch " << e.epoch << " loss " << e.train_loss << " val "
                      << e.validation_accuracy << '\n';
        });
        r.test = cmd_eval(c, r.train.checkpoint_path, EvalSplit::test);
        r.seconds = seconds_since(t0);
        std::cerr << "[" << name << "] test accuracy " << r.test.accuracy << " efficiency "
                  << r.test.mean_efficiency.value_or(NAN) << " (" << r.seconds << " s)\n";
        return runs_.emplace(name, std::move(r)).first->second;
    }

    RunConfig config(const std::string& name) const {
        RunConfig c = base_;
        c.output_dir = (work_ / name).string();
        return c;
    }

private:
    fs::path work_;
    RunConfig base_;
    std::map<std::string, Run> runs_;
};

std::string acc(const Run& r) { return fmt(r.test.accuracy, 4); }

Outcome trends(DeskSuite& suite, char which) {
    const Run& a = suite.run("l5_sce");
    switch (which) {
        case 'a':
            return {a.test.accuracy >= 0.90, "5-layer SCE accuracy " + acc(a)};
        case 'b': {
            const Run& one = suite.run("l1_sce", [](RunConfig& c) { c.layers = 1; });
            return {a.test.accuracy > one.test.accuracy, "5-layer " + acc(a) + " vs 1-layer " + acc(one)};
        }
        case 'c': {
            const Run& mse = suite.run("l5_mse", [](RunConfig& c) { c.loss = LossKind::mse; });
            const double e_sce = a.test.mean_efficiency.value_or(NAN), e_mse = mse.test.mean_efficiency.value_or(NAN);
            return {a.test.accuracy >= mse.test.accuracy && e_mse >= 5.0 * e_sce,
                    "accuracy SCE " + acc(a) + " vs MSE " + acc(mse) + "; efficiency MSE " + fmt(e_mse, 4) +
                        " vs SCE " + fmt(e_sce, 4) + " (ratio " + fmt(e_mse / e_sce, 3) + ")"};
        }
        case 'd': {
            // the configured spacing is the 40-wavelength equivalent; a tenth of it the 4-wavelength one
            const double near = suite.base().delta_z / 10.0;
            const Run& p4 = suite.run("l5_phase_near", [&](RunConfig& c) { c.delta_z = near; });
            const Run& c4 = suite.run("l5_complex_near", [&](RunConfig& c) {
                c.delta_z = near;
                c.modulation = ModulationMode::complex;
            });
            const double gap_phase = a.test.accuracy - p4.test.accuracy;
            const double gap_complex = a.test.accuracy - c4.test.accuracy;
            return {gap_phase > 0.0 && gap_complex < gap_phase,
                    "phase far " + acc(a) + ", phase near " + acc(p4) + ", complex near " + acc(c4) +
                        "; gap " + fmt(gap_phase, 4) + " -> " + fmt(gap_complex, 4)};
        }
        case 'e': {
            const Run& h = suite.run("hybrid_fc10", [](RunConfig& c) {
                c.mode = SystemMode::stage2;
                c.electronic = ElectronicKind::fc;
                c.sensor = SensorConfig{10, 0};
            });
            return {h.test.accuracy >= a.test.accuracy, "stage1+stage2 FC " + acc(h) + " vs all-optical " + acc(a)};
        }
    }
    return {};
}

Outcome determinism(DeskSuite& suite) {
    const Run& first = suite.run("l5_sce");
    const Run& second = suite.run("l5_sce_repeat");
    const std::string a = read_file(first.train.curve_path), b = read_file(second.train.curve_path);
    return {!a.empty() && a == b, "training curves " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                                      " bytes, " + (a == b ? "identical" : "different")};
}

Outcome checkpoint_round_trip(DeskSuite& suite) {
    const Run& r = suite.run("l5_sce");
    const std::string original = read_file(r.train.checkpoint_path);
    const Checkpoint loaded = load_checkpoint(r.train.checkpoint_path);
    const fs::path resaved = fs::path(r.train.checkpoint_path).parent_path() / "resaved.bin";
    save_checkpoint(loaded, resaved.string());
    const bool bytes_ok = !original.empty() && original == read_file(resaved);
    const double recorded = loaded.metadata.at("validation_accuracy").get<double>();
    const EvalReport v = cmd_eval(suite.config("l5_sce_reload"), resaved.string(), EvalSplit::validation);
    return {bytes_ok && v.accuracy == recorded, std::string("resave ") + (bytes_ok ? "identical" : "differs") +
                                                    ", validation accuracy " + fmt(v.accuracy, 17) + " vs recorded " +
                                                    fmt(recorded, 17)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string only;
    std::string work = (fs::temp_directory_path() / "d2nn_acceptance").string();
    app.add_option("--only", only, "Comma-separated criteria to run, e.g. 1,2,6");
    app.add_option("--work-dir", work, "Where desk-scale runs write their outputs");
    CLI11_PARSE(app, argc, argv);

    std::set<int> selected;
    if (only.empty()) {
        for (int i = 1; i <= 8; ++i) selected.insert(i);
    } else {
        std::istringstream in(only);
        for (std::string tok; std::getline(in, tok, ',');) selected.insert(std::stoi(tok));
    }

    const fs::path mnist = test::mnist_dir();
    const bool have_mnist = test::have_mnist();
    std::optional<DeskSuite> suite;
    if (have_mnist) suite.emplace(fs::path(work), mnist);

    std::vector<int> unexpected;
    auto report = [&](const std::string& label, int criterion, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::string note;
        if (!o.pass) {
            if (kKnownFailures.count(criterion))
                note = " [known: " + kKnownFailures.at(criterion) + "]";
            else
                unexpected.push_back(criterion);
        }
        std::cout << "criterion " << label << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << note
                  << std::endl;
    };
    auto needs_mnist = [&](const std::function<Outcome()>& f) {
        return [&, f] {
            if (!suite) return Outcome{false, "MNIST not found at " + mnist.string()};
            return f();
        };
    };

    if (selected.count(1)) report("1", 1, gradients);
    if (selected.count(2)) report("2", 2, propagators);
    if (selected.count(3)) report("3", 3, conservation);
    if (selected.count(4)) report("4", 4, loss_exactness);
    if (selected.count(5)) report("5", 5, table_rows);
    if (selected.count(6))
        for (char c : std::string("abcde"))
            report(std::string("6") + c, 6, needs_mnist([&, c] { return trends(*suite, c); }));
    if (selected.count(7)) report("7", 7, needs_mnist([&] { return determinism(*suite); }));
    if (selected.count(8)) report("8", 8, needs_mnist([&] { return checkpoint_round_trip(*suite); }));

    std::cout << (unexpected.empty() ? "acceptance: no unexpected failures" : "acceptance: unexpected failures")
              << std::endl;
    return unexpected.empty() ? 0 : 1;
}
