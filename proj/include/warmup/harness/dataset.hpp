#pragma once

/// \file dataset.hpp
///
/// Synthetic classification / regression data and the CIFAR-10 binary
/// loader, with per-feature standardization and optional flip+crop
/// augmentation.

#include "../model.hpp"
#include "../numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace warmup {

enum class DatasetKind { SYNTH_CLASS, SYNTH_REG, CIFAR10_BIN };
enum class Augmentation { NONE, FLIP_CROP };

inline std::string_view to_string(DatasetKind k)
{
    switch (k) {
    case DatasetKind::SYNTH_CLASS: return "synth-class";
    case DatasetKind::SYNTH_REG: return "synth-reg";
    case DatasetKind::CIFAR10_BIN: return "cifar10-bin";
    }
    return "?";
}

inline std::string_view to_string(Augmentation a) { return a == Augmentation::NONE ? "none" : "flip-crop"; }

inline Augmentation augmentation_from_string(std::string_view s)
{
    if (s == "none") return Augmentation::NONE;
    if (s == "flip-crop" || s == "flip_crop") return Augmentation::FLIP_CROP;
    throw std::invalid_argument{"unknown augmentation: " + std::string{s}};
}

inline DatasetKind dataset_from_string(std::string_view s)
{
    if (s == "synth-class" || s == "synth_class") return DatasetKind::SYNTH_CLASS;
    if (s == "synth-reg" || s == "synth_reg") return DatasetKind::SYNTH_REG;
    if (s == "cifar10-bin" || s == "cifar10_bin") return DatasetKind::CIFAR10_BIN;
    throw std::invalid_argument{"unknown dataset kind: " + std::string{s}};
}

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;
inline constexpr int kCifarSide = 32;
inline constexpr int kCifarClasses = 10;

struct DatasetSpec {
    DatasetKind kind = DatasetKind::SYNTH_CLASS;
    std::size_t n_train = 1000;
    std::size_t n_test = 500;
    int classes = 10;
    int in_dim = 32;
    int out_dim = 1;               ///< regression targets only
    double class_separation = 1.0;  ///< scale of the class means (synthetic)
    double noise = 1.0;
    std::size_t subset = 0;         ///< CIFAR: use a seeded subset of the train split; 0 = all
    bool normalize = true;
    Augmentation augmentation = Augmentation::NONE;
    std::string path;               ///< CIFAR: directory holding the .bin batches
    std::uint64_t seed = 0;         ///< data generation / subset selection
};

struct Dataset {
    Batch train;
    Batch test;
    int classes = 0;  ///< 0 for regression
};

// ----------------------------------------------------------------------------
// Normalization
// ----------------------------------------------------------------------------

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;
};

inline FeatureStats feature_stats(const Eigen::MatrixXd& x)
{
    const double n = static_cast<double>(x.cols());
    FeatureStats s;
    s.mean = x.rowwise().mean();
    s.stddev = ((x.colwise() - s.mean).array().square().rowwise().sum() / n).sqrt().matrix();
    return s;
}

/// Standardizes train and test with the train statistics. Constant features
/// are centred only.
inline void standardize(Batch& train, Batch& test)
{
    const auto s = feature_stats(train.inputs);
    Eigen::VectorXd inv = s.stddev.unaryExpr([](double v) { return v > 0.0 ? 1.0 / v : 1.0; });
    auto apply = [&](Eigen::MatrixXd& x) {
        x.colwise() -= s.mean;
        x = inv.asDiagonal() * x;
    };
    apply(train.inputs);
    if (test.inputs.size() > 0) apply(test.inputs);
}

inline Eigen::MatrixXd one_hot(std::span<const int> labels, int classes)
{
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(classes, static_cast<Eigen::Index>(labels.size()));
    for (std::size_t j = 0; j < labels.size(); ++j) t(labels[j], static_cast<Eigen::Index>(j)) = 1.0;
    return t;
}

// ----------------------------------------------------------------------------
// Synthetic data
// ----------------------------------------------------------------------------

namespace detail {

/// Gaussian mixture with one isotropic component per class. Labels are
/// assigned round-robin then shuffled, so classes are balanced to within one
/// sample. With two classes the means are +mu and -mu.
inline Batch synth_class_split(const std::vector<Eigen::VectorXd>& means, std::size_t n, double noise,
                               RngStream& rng)
{
    const auto classes = static_cast<int>(means.size());
    const auto dim = means.front().size();
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    rng.shuffle(labels);
    Batch b;
    b.inputs.resize(dim, static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < dim; ++i)
            b.inputs(i, static_cast<Eigen::Index>(j)) = means[static_cast<std::size_t>(labels[j])](i) + noise * rng.normal();
    b.targets = one_hot(labels, classes);
    b.labels = std::move(labels);
    return b;
}

inline Dataset synth_class(const DatasetSpec& spec)
{
    if (spec.classes < 2) throw std::invalid_argument{"synthetic classification needs >= 2 classes"};
    RngStream rng{spec.seed};
    std::vector<Eigen::VectorXd> means;
    const double per_coord = spec.class_separation / std::sqrt(static_cast<double>(spec.in_dim));
    if (spec.classes == 2) {
        Eigen::VectorXd mu(spec.in_dim);
        for (auto& v : mu) v = per_coord * rng.normal();
        means = {mu, -mu};
    } else {
        for (int c = 0; c < spec.classes; ++c) {
            Eigen::VectorXd mu(spec.in_dim);
            for (auto& v : mu) v = per_coord * rng.normal();
            means.push_back(std::move(mu));
        }
    }
    auto train_rng = rng.split(1);
    auto test_rng = rng.split(2);
    Dataset d;
    d.train = synth_class_split(means, spec.n_train, spec.noise, train_rng);
    d.test = synth_class_split(means, spec.n_test, spec.noise, test_rng);
    d.classes = spec.classes;
    return d;
}

/// Targets from a fixed random two-layer tanh teacher plus noise.
inline Dataset synth_reg(const DatasetSpec& spec)
{
    RngStream rng{spec.seed};
    const int hidden = 16;
    Eigen::MatrixXd w1(hidden, spec.in_dim), w2(spec.out_dim, hidden);
    for (auto& v : w1.reshaped()) v = rng.normal() / std::sqrt(static_cast<double>(spec.in_dim));
    for (auto& v : w2.reshaped()) v = rng.normal() / std::sqrt(static_cast<double>(hidden));
    auto make = [&](std::size_t n, RngStream r) {
        Batch b;
        b.inputs.resize(spec.in_dim, static_cast<Eigen::Index>(n));
        for (auto& v : b.inputs.reshaped()) v = r.normal();
        b.targets = w2 * (w1 * b.inputs).array().tanh().matrix();
        for (auto& v : b.targets.reshaped()) v += spec.noise * 0.1 * r.normal();
        return b;
    };
    Dataset d;
    d.train = make(spec.n_train, rng.split(1));
    d.test = make(spec.n_test, rng.split(2));
    d.classes = 0;
    return d;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// CIFAR-10 binary format
// ----------------------------------------------------------------------------

struct CifarRecords {
    std::vector<int> labels;
    std::vector<std::uint8_t> pixels;  ///< 3072 bytes per record: 1024 R, 1024 G, 1024 B
};

/// Parses a buffer of 3073-byte records (label byte, then channel-major
/// pixels). Throws naming the byte offset of a truncated record or of an out
/// of range label.
inline CifarRecords parse_cifar_records(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() % kCifarRecordBytes != 0) {
        const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
        throw std::runtime_error{"CIFAR-10 binary: truncated record at byte offset " + std::to_string(offset) + " (" +
                                 std::to_string(bytes.size() % kCifarRecordBytes) + " of " +
                                 std::to_string(kCifarRecordBytes) + " bytes)"};
    }
    CifarRecords r;
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    r.labels.reserve(n);
    r.pixels.reserve(n * kCifarImageBytes);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t offset = k * kCifarRecordBytes;
        if (bytes[offset] >= kCifarClasses)
            throw std::runtime_error{"CIFAR-10 binary: label " + std::to_string(bytes[offset]) +
                                     " out of range at byte offset " + std::to_string(offset)};
        r.labels.push_back(bytes[offset]);
        r.pixels.insert(r.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(offset + 1),
                        bytes.begin() + static_cast<std::ptrdiff_t>(offset + kCifarRecordBytes));
    }
    return r;
}

inline CifarRecords read_cifar_file(const std::filesystem::path& file)
{
    std::ifstream in{file, std::ios::binary};
    if (!in) throw std::runtime_error{"cannot open " + file.string()};
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>{in}, {}};
    try {
        return parse_cifar_records(bytes);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error{file.string() + ": " + e.what()};
    }
}

inline void write_cifar_file(const std::filesystem::path& file, const CifarRecords& r)
{
    std::ofstream out{file, std::ios::binary};
    if (!out) throw std::runtime_error{"cannot write " + file.string()};
    for (std::size_t k = 0; k < r.labels.size(); ++k) {
        out.put(static_cast<char>(r.labels[k]));
        out.write(reinterpret_cast<const char*>(r.pixels.data() + k * kCifarImageBytes),
                  static_cast<std::streamsize>(kCifarImageBytes));
    }
}

/// Synthetic records in the CIFAR-10 layout: one random template image per
/// class plus per-pixel Gaussian noise, clamped to bytes.
inline CifarRecords synth_cifar_records(std::size_t n, std::uint64_t seed, double noise = 40.0)
{
    RngStream rng{seed};
    std::vector<std::vector<double>> templates(kCifarClasses, std::vector<double>(kCifarImageBytes));
    for (auto& t : templates)
        for (auto& px : t) px = 255.0 * rng.uniform();
    CifarRecords r;
    r.labels.resize(n);
    r.pixels.resize(n * kCifarImageBytes);
    for (std::size_t k = 0; k < n; ++k) {
        const int label = static_cast<int>(rng.below(kCifarClasses));
        r.labels[k] = label;
        for (std::size_t i = 0; i < kCifarImageBytes; ++i) {
            const double v = templates[static_cast<std::size_t>(label)][i] + noise * rng.normal();
            r.pixels[k * kCifarImageBytes + i] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
        }
    }
    return r;
}

namespace detail {

inline Batch cifar_batch(const CifarRecords& r, std::span<const std::size_t> index)
{
    Batch b;
    b.inputs.resize(static_cast<Eigen::Index>(kCifarImageBytes), static_cast<Eigen::Index>(index.size()));
    b.labels.resize(index.size());
    for (std::size_t j = 0; j < index.size(); ++j) {
        const std::uint8_t* px = r.pixels.data() + index[j] * kCifarImageBytes;
        for (std::size_t i = 0; i < kCifarImageBytes; ++i)
            b.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px[i] / 255.0;
        b.labels[j] = r.labels[index[j]];
    }
    b.targets = one_hot(b.labels, kCifarClasses);
    return b;
}

inline Dataset cifar(const DatasetSpec& spec)
{
    const std::filesystem::path dir{spec.path};
    CifarRecords train;
    for (int i = 1; i <= 5; ++i) {
        const auto file = dir / ("data_batch_" + std::to_string(i) + ".bin");
        if (!std::filesystem::exists(file)) continue;
        auto part = read_cifar_file(file);
        train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
        train.pixels.insert(train.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
    if (train.labels.empty()) throw std::runtime_error{"no data_batch_*.bin files under " + dir.string()};
    const auto test = read_cifar_file(dir / "test_batch.bin");

    RngStream rng{spec.seed};
    std::vector<std::size_t> train_idx(train.labels.size());
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    const std::size_t want = spec.subset > 0 ? spec.subset : (spec.n_train > 0 ? spec.n_train : train_idx.size());
    if (want < train_idx.size()) {
        rng.shuffle(train_idx);
        train_idx.resize(want);
    }
    std::vector<std::size_t> test_idx(test.labels.size());
    std::iota(test_idx.begin(), test_idx.end(), std::size_t{0});
    if (spec.n_test > 0 && spec.n_test < test_idx.size()) test_idx.resize(spec.n_test);

    Dataset d;
    d.train = cifar_batch(train, train_idx);
    d.test = cifar_batch(test, test_idx);
    d.classes = kCifarClasses;
    return d;
}

}  // namespace detail

/// Random horizontal flips and 4-pixel zero-pad random crops, per sample.
/// Inputs must be 3x32x32 channel-major images.
inline void augment_flip_crop(Eigen::MatrixXd& images, RngStream& rng)
{
    if (images.rows() != static_cast<Eigen::Index>(kCifarImageBytes))
        throw std::invalid_argument{"flip_crop augmentation needs 3x32x32 inputs"};
    constexpr int pad = 4;
    Eigen::VectorXd src;
    for (Eigen::Index j = 0; j < images.cols(); ++j) {
        src = images.col(j);
        const bool flip = rng.uniform() < 0.5;
        const int dx = static_cast<int>(rng.below(2 * pad + 1)) - pad;
        const int dy = static_cast<int>(rng.below(2 * pad + 1)) - pad;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < kCifarSide; ++y)
                for (int x = 0; x < kCifarSide; ++x) {
                    const int sx0 = x + dx, sy = y + dy;
                    const int sx = flip ? kCifarSide - 1 - sx0 : sx0;
                    const bool inside = sx0 >= 0 && sx0 < kCifarSide && sy >= 0 && sy < kCifarSide;
                    images(c * 1024 + y * kCifarSide + x, j) = inside ? src(c * 1024 + sy * kCifarSide + sx) : 0.0;
                }
    }
}

/// Loads (or generates) the splits, standardizes inputs with train
/// statistics when requested. Targets are one-hot for classification.
inline Dataset load_dataset(const DatasetSpec& spec)
{
    Dataset d;
    switch (spec.kind) {
    case DatasetKind::SYNTH_CLASS: d = detail::synth_class(spec); break;
    case DatasetKind::SYNTH_REG: d = detail::synth_reg(spec); break;
    case DatasetKind::CIFAR10_BIN: d = detail::cifar(spec); break;
    }
    if (spec.normalize) standardize(d.train, d.test);
    return d;
}

}  // namespace warmup
