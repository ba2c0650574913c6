#include "d2nn/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>

namespace d2nn {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

// gzread passes uncompressed files through unchanged.
std::vector<std::uint8_t> read_all(const std::string& path) {
    std::unique_ptr<gzFile_s, int (*)(gzFile)> f(gzopen(path.c_str(), "rb"), gzclose);
    if (!f) throw IdxError("cannot open '" + path + "'");
    std::vector<std::uint8_t> out;
    std::array<std::uint8_t, 1 << 16> chunk{};
    for (;;) {
        const int n = gzread(f.get(), chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) throw IdxError("read error in '" + path + "'");
        if (n == 0) break;
        out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    os.write(b, 4);
}

}  // namespace

Image LabeledImageSet::image(std::size_t i) const {
    if (i >= size()) throw ValidationError("image index out of range");
    Image img{rows, cols, std::vector<double>(rows * cols)};
    const std::uint8_t* p = pixels.data() + i * rows * cols;
    for (std::size_t k = 0; k < rows * cols; ++k) img.pixels[k] = static_cast<double>(p[k]) / 255.0;
    return img;
}

void LabeledImageSet::validate() const {
    if (pixels.size() != labels.size() * rows * cols) throw ValidationError("image set: pixel/label count mismatch");
}

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_all(images_path);
    const auto lab = read_all(labels_path);
    if (img.size() < 16) throw IdxError("'" + images_path + "': truncated header");
    if (lab.size() < 8) throw IdxError("'" + labels_path + "': truncated header");
    if (be32(img, 0) != kImageMagic) throw IdxError("'" + images_path + "': wrong magic (expected 0x00000803)");
    if (be32(lab, 0) != kLabelMagic) throw IdxError("'" + labels_path + "': wrong magic (expected 0x00000801)");

    const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    const std::size_t n_labels = be32(lab, 4);
    if (n != n_labels)
        throw IdxError("dimension mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                       " labels");
    if (img.size() != 16 + n * rows * cols)
        throw IdxError("'" + images_path + "': payload is " + std::to_string(img.size() - 16) + " bytes, expected " +
                       std::to_string(n * rows * cols));
    if (lab.size() != 8 + n) throw IdxError("'" + labels_path + "': payload length does not match header");
    for (std::size_t i = 8; i < lab.size(); ++i)
        if (lab[i] > 9)
            throw IdxError("'" + labels_path + "': label " + std::to_string(lab[i]) + " at index " +
                           std::to_string(i - 8) + " is outside 0..9");

    LabeledImageSet set;
    set.rows = rows;
    set.cols = cols;
    set.pixels.assign(img.begin() + 16, img.end());
    set.labels.assign(lab.begin() + 8, lab.end());
    return set;
}

void save_idx(const LabeledImageSet& set, const std::string& images_path, const std::string& labels_path) {
    set.validate();
    std::ofstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
    if (!im || !lb) throw IdxError("cannot write IDX files");
    put_be32(im, kImageMagic);
    put_be32(im, static_cast<std::uint32_t>(set.size()));
    put_be32(im, static_cast<std::uint32_t>(set.rows));
    put_be32(im, static_cast<std::uint32_t>(set.cols));
    im.write(reinterpret_cast<const char*>(set.pixels.data()), static_cast<std::streamsize>(set.pixels.size()));
    put_be32(lb, kLabelMagic);
    put_be32(lb, static_cast<std::uint32_t>(set.size()));
    lb.write(reinterpret_cast<const char*>(set.labels.data()), static_cast<std::streamsize>(set.labels.size()));
}

Split split(const LabeledImageSet& pool, const LabeledImageSet& test, std::uint64_t seed,
            std::size_t validation_size) {
    if (pool.size() <= validation_size) throw ValidationError("split: pool has too few samples for validation");
    if (test.size() == 0) throw ValidationError("split: empty test set");
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    Split s;
    s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(validation_size));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(validation_size), idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    s.test.resize(test.size());
    std::iota(s.test.begin(), s.test.end(), std::size_t{0});
    return s;
}

std::vector<std::size_t> stratified_subset(const LabeledImageSet& set, const std::vector<std::size_t>& indices,
                                           std::size_t count, std::uint64_t seed) {
    if (count > indices.size()) throw ValidationError("stratified_subset: requested more samples than available");
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i : indices) by_class[set.label(i)].push_back(i);

    // Largest-remainder allocation of `count` across classes.
    std::vector<std::pair<std::size_t, std::size_t>> quota;  // (class, n)
    std::vector<std::pair<double, std::size_t>> remainders;  // (fraction, position)
    std::size_t assigned = 0;
    for (const auto& [cls, members] : by_class) {
        const double exact = static_cast<double>(count) * static_cast<double>(members.size()) /
                             static_cast<double>(indices.size());
        const auto base = static_cast<std::size_t>(exact);
        quota.emplace_back(cls, base);
        remainders.emplace_back(exact - static_cast<double>(base), quota.size() - 1);
        assigned += base;
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++quota[remainders[k % remainders.size()].second].second;

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> out;
    out.reserve(count);
    for (const auto& [cls, n] : quota) {
        auto members = by_class[cls];
        std::shuffle(members.begin(), members.end(), rng);
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace d2nn
