#include "d2nn/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace d2nn {

void adam_step(const std::vector<std::vector<double>*>& params, const ArrayList& grads, AdamState& state) {
    if (params.size() != grads.size()) throw ValidationError("adam_step: parameter/gradient count mismatch");
    if (state.first_moment.empty()) {
        for (const auto* p : params) {
            state.first_moment.emplace_back(p->size(), 0.0);
            state.second_moment.emplace_back(p->size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) throw ValidationError("adam_step: state shape mismatch");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t a = 0; a < params.size(); ++a) {
        auto& p = *params[a];
        const auto& g = grads[a];
        auto& m = state.first_moment[a];
        auto& v = state.second_moment[a];
        if (g.size() != p.size() || m.size() != p.size()) throw ValidationError("adam_step: array shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            p[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

std::vector<std::vector<double>*> optical_parameters(D2NNModel& model) {
    std::vector<std::vector<double>*> out;
    for (auto& l : model.layers) {
        out.push_back(&l.beta);
        if (l.modulation == ModulationMode::complex) out.push_back(&l.alpha);
    }
    return out;
}

std::vector<std::string> optical_parameter_names(const D2NNModel& model) {
    std::vector<std::string> out;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        out.push_back("optical." + std::to_string(l) + ".beta");
        if (model.layers[l].modulation == ModulationMode::complex) out.push_back("optical." + std::to_string(l) + ".alpha");
    }
    return out;
}

void append_optical_gradients(const D2NNModel& model, std::vector<LayerGradients>& layer_grads, ArrayList& out) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        out.push_back(std::move(layer_grads[l].beta));
        if (model.layers[l].modulation == ModulationMode::complex) out.push_back(std::move(layer_grads[l].alpha));
    }
}

void check_finite_gradients(const std::vector<LayerGradients>& grads, const std::string& context) {
    for (std::size_t l = 0; l < grads.size(); ++l) {
        for (double v : grads[l].beta)
            if (!std::isfinite(v))
                throw NumericError("non-finite gradient in " + context + " layer " + std::to_string(l) + " (beta)");
        for (double v : grads[l].alpha)
            if (!std::isfinite(v))
                throw NumericError("non-finite gradient in " + context + " layer " + std::to_string(l) + " (alpha)");
    }
}

AllOpticalSystem::AllOpticalSystem(D2NNModel model, DetectorLayout layout, LossKind loss)
    : model_(std::move(model)), layout_(std::move(layout)), loss_(loss), stack_(model_) {
    if (layout_.grid() != model_.grid) throw ValidationError("detector layout grid differs from the model grid");
}

double AllOpticalSystem::batch_loss(const std::vector<ComplexField>& inputs, const std::vector<std::size_t>& labels,
                                    ArrayList* grads) {
    if (inputs.size() != labels.size() || inputs.empty()) throw ValidationError("batch_loss: empty or mismatched batch");
    const double inv_b = 1.0 / static_cast<double>(inputs.size());
    auto layer_grads = zero_gradients(model_);
    double total = 0.0;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        ForwardTrace trace = stack_.forward(inputs[b], model_);
        const auto intensity = trace.output.intensity();
        const LossEvaluation e = evaluate_loss(loss_, intensity, labels[b], layout_);
        total += e.loss;
        if (!grads) continue;
        // d/dRe u + j d/dIm u of L(|u|^2) is 2 u dL/dS
        ComplexField adj(model_.grid);
        for (std::size_t i = 0; i < adj.values.size(); ++i)
            adj.values[i] = 2.0 * inv_b * e.intensity_gradient[i] * trace.output.values[i];
        stack_.backward(trace, model_, adj, layer_grads);
    }
    if (grads) {
        check_finite_gradients(layer_grads);
        grads->clear();
        append_optical_gradients(model_, layer_grads, *grads);
    }
    return total * inv_b;
}

Prediction AllOpticalSystem::predict(const ComplexField& input) {
    const ForwardTrace trace = stack_.forward(input, model_);
    const auto intensity = trace.output.intensity();
    Prediction p;
    p.scores = detector_signals(intensity, layout_);
    p.output_power = integrated_intensity(intensity, model_.grid.dx);
    return p;
}

std::vector<LayerGradients> backward(const D2NNModel& model, const std::vector<ComplexField>& inputs,
                                     const std::vector<std::size_t>& labels, LossKind loss,
                                     const DetectorLayout& layout, double* mean_loss) {
    AllOpticalSystem sys(model, layout, loss);
    ArrayList flat;
    const double l = sys.batch_loss(inputs, labels, &flat);
    if (mean_loss) *mean_loss = l;
    auto out = zero_gradients(model);
    std::size_t k = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        out[i].beta = std::move(flat[k++]);
        if (model.layers[i].modulation == ModulationMode::complex) out[i].alpha = std::move(flat[k++]);
    }
    return out;
}

namespace {

std::vector<std::size_t> trainable_positions(const std::vector<std::string>& names, const TrainConfig& config) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const bool frozen = std::any_of(config.frozen_prefixes.begin(), config.frozen_prefixes.end(),
                                        [&](const std::string& p) { return names[i].rfind(p, 0) == 0; });
        if (!frozen) keep.push_back(i);
    }
    return keep;
}

ArrayList snapshot(TrainableSystem& system) {
    ArrayList out;
    for (const auto* a : system.state()) out.push_back(*a);
    return out;
}

void restore(TrainableSystem& system, const ArrayList& snap) {
    auto st = system.state();
    for (std::size_t i = 0; i < st.size(); ++i) *st[i] = snap[i];
}

}  // namespace

double accuracy(TrainableSystem& system, const InputEncoder& encoder, const SampleView& samples) {
    if (samples.size() == 0) throw ValidationError("accuracy: empty sample set");
    std::size_t correct = 0;
    for (std::size_t i : samples.indices) {
        const Prediction p = system.predict(encoder(samples.set->image(i)));
        if (p.label() == samples.set->label(i)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainResult train(TrainableSystem& system, const InputEncoder& encoder, const SampleView& train_set,
                  const SampleView& validation_set, const TrainConfig& config, const EpochCallback& on_epoch) {
    if (train_set.size() == 0 || validation_set.size() == 0) throw ValidationError("train: empty train or validation split");
    if (config.epochs == 0 || config.batch_size == 0) throw ValidationError("train: epochs and batch_size must be >= 1");

    const auto names = system.parameter_names();
    const auto active = trainable_positions(names, config);
    AdamState adam;
    adam.lr = config.lr;
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    adam.eps = config.eps;

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order = train_set.indices;
    TrainResult result;
    ArrayList best;
    result.best_validation_accuracy = -1.0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            // a trailing batch of one cannot be batch-normalized; it is skipped for every system
            if (end - start < 2 && order.size() > 1) break;
            std::vector<ComplexField> inputs;
            std::vector<std::size_t> labels;
            for (std::size_t k = start; k < end; ++k) {
                inputs.push_back(encoder(train_set.set->image(order[k])));
                labels.push_back(train_set.set->label(order[k]));
            }
            ArrayList grads;
            const double loss = system.batch_loss(inputs, labels, &grads);
            if (!std::isfinite(loss)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
            loss_sum += loss * static_cast<double>(end - start);
            seen += end - start;

            auto params = system.parameters();
            std::vector<std::vector<double>*> p_active;
            ArrayList g_active;
            for (std::size_t i : active) {
                p_active.push_back(params[i]);
                g_active.push_back(std::move(grads[i]));
            }
            if (!p_active.empty()) adam_step(p_active, g_active, adam);
        }
        EpochRecord rec{epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0,
                        accuracy(system, encoder, validation_set)};
        result.history.push_back(rec);
        if (rec.validation_accuracy > result.best_validation_accuracy) {
            result.best_validation_accuracy = rec.validation_accuracy;
            result.best_epoch = epoch;
            best = snapshot(system);
        }
        if (on_epoch) on_epoch(rec);
    }
    restore(system, best);
    return result;
}

std::string training_curve_csv(const TrainResult& result, const std::string& config_hash) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << "epoch,train_loss,validation_accuracy\n";
    os << std::setprecision(17);
    for (const auto& r : result.history) os << r.epoch << ',' << r.train_loss << ',' << r.validation_accuracy << '\n';
    os << "# best_epoch=" << result.best_epoch << " best_validation_accuracy=" << result.best_validation_accuracy
       << " config_hash=" << config_hash << '\n';
    return os.str();
}

GradCheckReport grad_check(TrainableSystem& system, const std::vector<ComplexField>& inputs,
                           const std::vector<std::size_t>& labels, std::size_t n_probes, double h,
                           std::uint64_t seed) {
    ArrayList grads;
    system.batch_loss(inputs, labels, &grads);
    auto params = system.parameters();
    const auto names = system.parameter_names();
    std::size_t total = 0;
    for (const auto* p : params) total += p->size();
    if (total == 0) throw ValidationError("grad_check: system has no trainable parameters");

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    GradCheckReport report;
    for (std::size_t k = 0; k < n_probes; ++k) {
        std::size_t flat = pick(rng), a = 0;
        while (flat >= params[a]->size()) flat -= params[a++]->size();
        double& x = (*params[a])[flat];
        const double x0 = x;
        x = x0 + h;
        const double lp = system.batch_loss(inputs, labels, nullptr);
        x = x0 - h;
        const double lm = system.batch_loss(inputs, labels, nullptr);
        x = x0;
        const double fd = (lp - lm) / (2.0 * h);
        const double adj = grads[a][flat];
        const double rel = std::abs(adj - fd) / std::max({std::abs(adj), std::abs(fd), kGradCheckFloor});
        report.details.push_back({names[a], flat, adj, fd, rel});
        report.max_relative_error = std::max(report.max_relative_error, rel);
    }
    report.probes = n_probes;
    return report;
}

// ---------------------------------------------------------------------------------------------
// checkpoint I/O

namespace {

constexpr char kMagic[8] = {'D', '2', 'N', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_array(std::string& out, const std::vector<double>& a) {
    out.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(double));
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}
    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, s_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::vector<double> array(std::size_t n, const char* what) {
        if (n > (s_.size() - pos_) / sizeof(double)) throw CheckpointError(std::string("truncated checkpoint: ") + what);
        std::vector<double> a(n);
        std::memcpy(a.data(), s_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return a;
    }
    bool at_end() const { return pos_ == s_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (s_.size() - pos_ < n) throw CheckpointError(std::string("truncated checkpoint: ") + what);
    }
    const std::string& s_;
    std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json model_geometry_json(const D2NNModel& model) {
    return {{"n_x", model.grid.n_x},
            {"n_y", model.grid.n_y},
            {"dx", model.grid.dx},
            {"z_in", model.z_in},
            {"delta_z", model.delta_z},
            {"z_out", model.z_out},
            {"padding_factor", model.padding_factor},
            {"layers", model.layers.size()},
            {"modulation", to_string(model.layers.empty() ? ModulationMode::phase_only : model.layers.front().modulation)},
            {"parameterization",
             to_string(model.layers.empty() ? Parameterization::relu_norm : model.layers.front().parameterization)}};
}

D2NNModel model_from_geometry_json(const nlohmann::json& g) {
    D2NNModel m;
    m.grid = GridSpec{g.at("n_x").get<std::size_t>(), g.at("n_y").get<std::size_t>(), g.at("dx").get<double>()};
    m.z_in = g.at("z_in").get<double>();
    m.delta_z = g.at("delta_z").get<double>();
    m.z_out = g.at("z_out").get<double>();
    m.padding_factor = g.at("padding_factor").get<int>();
    const auto mod = modulation_from_string(g.at("modulation").get<std::string>());
    const auto par = parameterization_from_string(g.at("parameterization").get<std::string>());
    const auto n = g.at("layers").get<std::size_t>();
    for (std::size_t l = 0; l < n; ++l) m.layers.push_back(LayerParams::initial(m.grid.size(), mod, par));
    return m;
}

namespace {

// A model without layers is allowed in checkpoints (sensor reading the object directly).
void validate_for_checkpoint(const D2NNModel& model) {
    if (model.layers.empty())
        model.grid.validate();
    else
        model.validate();
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    validate_for_checkpoint(ckpt.model);
    for (const auto& l : ckpt.model.layers)
        if (l.modulation != ckpt.model.layers.front().modulation ||
            l.parameterization != ckpt.model.layers.front().parameterization)
            throw ValidationError("checkpoint: all layers must share modulation mode and parameterization");
    if (ckpt.extra_names.size() != ckpt.extra_arrays.size())
        throw ValidationError("checkpoint: extra section names/arrays mismatch");

    nlohmann::json meta = ckpt.metadata;
    meta["geometry"] = model_geometry_json(ckpt.model);
    const std::string meta_text = meta.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, meta_text.size());
    out += meta_text;
    for (const auto& l : ckpt.model.layers) put_array(out, l.alpha);
    for (const auto& l : ckpt.model.layers) put_array(out, l.beta);
    if (!ckpt.extra_names.empty()) {
        nlohmann::json dir = nlohmann::json::array();
        for (std::size_t i = 0; i < ckpt.extra_names.size(); ++i)
            dir.push_back({{"name", ckpt.extra_names[i]}, {"size", ckpt.extra_arrays[i].size()}});
        const std::string dir_text = dir.dump();
        put_le<std::uint64_t>(out, dir_text.size());
        out += dir_text;
        for (const auto& a : ckpt.extra_arrays) put_array(out, a);
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic)))
        throw CheckpointError("not a checkpoint: bad magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto meta_len = r.get<std::uint64_t>("metadata length");
    Checkpoint ckpt;
    try {
        ckpt.metadata = nlohmann::json::parse(r.bytes(meta_len, "metadata"));
        ckpt.model = model_from_geometry_json(ckpt.metadata.at("geometry"));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint metadata: ") + e.what());
    }
    ckpt.metadata.erase("geometry");
    const std::size_t n = ckpt.model.grid.size();
    for (auto& l : ckpt.model.layers) l.alpha = r.array(n, "alpha arrays");
    for (auto& l : ckpt.model.layers) l.beta = r.array(n, "beta arrays");
    if (!r.at_end()) {
        const auto dir_len = r.get<std::uint64_t>("extra section length");
        nlohmann::json dir;
        try {
            dir = nlohmann::json::parse(r.bytes(dir_len, "extra section directory"));
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(std::string("malformed extra section directory: ") + e.what());
        }
        for (const auto& e : dir) {
            ckpt.extra_names.push_back(e.at("name").get<std::string>());
            ckpt.extra_arrays.push_back(r.array(e.at("size").get<std::size_t>(), "extra section arrays"));
        }
        if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint payload");
    }
    validate_for_checkpoint(ckpt.model);
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write '" + path + "'");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw CheckpointError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize_checkpoint(ss.str());
}

std::string config_hash(const nlohmann::json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace d2nn
