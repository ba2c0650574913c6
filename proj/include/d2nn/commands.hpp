#pragma once

#include <memory>
#include <string>
#include <vector>

#include "d2nn/config.hpp"
#include "d2nn/metrics.hpp"

namespace d2nn {

/// Loaded images with the configured split and subsets applied.
struct DataSplits {
    LabeledImageSet pool;
    LabeledImageSet test_set;
    SampleView train;
    SampleView validation;
    SampleView test;
};

DataSplits load_data(const RunConfig& config);

/// Random latents for gradient checks: beta uniform in [0, 1), alpha uniform in [0.2, 1.5)
/// for relu_norm and standard normal for sigmoid.
void randomize_latents(D2NNModel& model, std::uint64_t seed);

/// Rebuilds the system a checkpoint was trained as; rejects geometry that conflicts with `config`.
std::unique_ptr<TrainableSystem> system_from_checkpoint(const Checkpoint& ckpt, const RunConfig& config);

struct TrainOutcome {
    TrainResult result;
    Checkpoint checkpoint;
    std::string checkpoint_path;
    std::string curve_path;
    std::string curve_csv;
};

/// Trains per the config mode; writes checkpoint.bin and training_curve.csv into the output
/// directory (stage2 additionally writes stage1_checkpoint.bin and stage1_curve.csv).
TrainOutcome cmd_train(const RunConfig& config, const EpochCallback& on_epoch = {});

enum class EvalSplit { validation, test };

/// Writes eval_report.csv into the output directory.
EvalReport cmd_eval(const RunConfig& config, const std::string& checkpoint_path, EvalSplit split = EvalSplit::test);

struct SweepAxes {
    std::vector<std::size_t> layers{1, 3, 5};
    std::vector<LossKind> losses{LossKind::mse, LossKind::sce};
    std::vector<double> delta_z;               ///< empty: the config value
    std::vector<ModulationMode> modulations;  ///< empty: the config value
};

/// All-optical runs over the axes; returns and writes sweep.csv.
std::string cmd_sweep(const RunConfig& config, const SweepAxes& axes);

GradCheckReport cmd_gradcheck(const RunConfig& config, std::size_t probes = 20, double h = 1e-5,
                              std::size_t batch = 4);

/// ASM versus the direct Rayleigh-Sommerfeld sum for a random field on an n x n grid.
std::string cmd_compare_propagators(std::size_t n, const std::vector<double>& z_list, int padding_factor = 16,
                                    std::uint64_t seed = 0, double dx = 0.53);

/// 16-bit binary PGM per layer (phase, and amplitude in complex mode) plus masks.json.
std::vector<std::string> cmd_export_masks(const std::string& checkpoint_path, const std::string& out_dir);

}  // namespace d2nn
