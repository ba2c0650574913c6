#pragma once

#include <optional>
#include <string>
#include <vector>

#include "d2nn/electronic.hpp"
#include "d2nn/training.hpp"

namespace d2nn {

struct SampleRecord {
    std::size_t index = 0;  ///< index into the evaluated set
    std::size_t label = 0;
    std::size_t prediction = 0;
    std::vector<double> signals;  ///< I_0 .. I_{D-1} (or logits for electronic read-outs)
    double output_power = 0.0;    ///< E; NaN when the read-out is not optical
};

struct EvalReport {
    std::size_t classes = 0;
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  ///< rows = truth, columns = prediction
    std::optional<double> mean_efficiency;           ///< absent when nothing is classified correctly
    std::optional<double> mean_contrast;
    std::vector<SampleRecord> samples;
};

/// Confusion counts from (label, prediction) pairs.
std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<SampleRecord>& samples, std::size_t classes);

/// mean(I_L) / mean(E) over correctly classified samples.
std::optional<double> power_efficiency(const std::vector<SampleRecord>& samples);
/// mean(I_L - I_SC) / mean(E) over correctly classified samples; I_SC is the strongest other detector.
std::optional<double> signal_contrast(const std::vector<SampleRecord>& samples);

EvalReport evaluate(TrainableSystem& system, const InputEncoder& encoder, const SampleView& samples,
                    std::size_t classes);

/// One row per sample (index,label,prediction,I_0..I_{D-1},E) followed by a commented summary block.
std::string eval_report_csv(const EvalReport& report, const std::string& config_hash);

struct ComplexityReport {
    std::size_t macs = 0;
    std::size_t params_weights_only = 0;
    std::size_t params_with_biases = 0;
    std::size_t flops = 0;
    double energy_joules_per_image = 0.0;
    /// Reference table values where they exist, and whether the computed counts differ.
    std::optional<std::size_t> table_params;
    std::optional<std::size_t> table_flops;
    bool diverges_from_table = false;
};

inline constexpr double kJoulesPerMac = 1.5e-12;

ComplexityReport complexity_report(ElectronicKind kind, std::size_t sensor_side, std::size_t classes = 10);
ComplexityReport complexity_report(const ElectronicNet& net);

}  // namespace d2nn
