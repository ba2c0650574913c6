#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d2nn/optics.hpp"

namespace d2nn {

/// Grayscale images with integer labels. Pixels are stored as the raw bytes and exposed in [0,1].
struct LabeledImageSet {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels;  ///< N * rows * cols
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    Image image(std::size_t i) const;
    std::size_t label(std::size_t i) const { return labels.at(i); }
    void validate() const;
};

class IdxError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads big-endian IDX image (magic 0x00000803) and label (0x00000801) files,
/// optionally gzip-compressed.
LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path);

/// Serializes a set back to (uncompressed) IDX files.
void save_idx(const LabeledImageSet& set, const std::string& images_path, const std::string& labels_path);

/// Index views into a training pool and a separate test set.
struct Split {
    std::vector<std::size_t> train;       ///< indices into the pool
    std::vector<std::size_t> validation;  ///< indices into the pool
    std::vector<std::size_t> test;        ///< indices into the test set
};

/// Seeded shuffle of the pool into train/validation; the test set is used in full.
Split split(const LabeledImageSet& pool, const LabeledImageSet& test, std::uint64_t seed,
            std::size_t validation_size = 5000);

/// Class-stratified subsample of `indices` of exactly `count` elements (largest-remainder
/// allocation per class), deterministic for a seed. Preserves nothing about input order.
std::vector<std::size_t> stratified_subset(const LabeledImageSet& set, const std::vector<std::size_t>& indices,
                                           std::size_t count, std::uint64_t seed);

}  // namespace d2nn
