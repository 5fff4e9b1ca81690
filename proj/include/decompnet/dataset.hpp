#pragma once

#include "decompnet/matrix.hpp"
#include "decompnet/model.hpp"
#include "decompnet/rng.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace decompnet {

struct Dataset {
    DenseMatrix features;    // one sample per row, flattened [c][h][w]
    std::vector<int> labels;
    std::size_t num_classes = 0;
    InputShape shape;

    std::size_t size() const { return features.rows(); }
};

// Two interleaved half-circles, classic binary toy problem. With dim > 2 the
// plane is embedded through a seeded random orthonormal map so the intrinsic
// structure survives in a higher-dimensional ambient space.
Dataset make_two_moons(std::size_t n, double noise, std::size_t dim, std::uint64_t seed);

// Isotropic Gaussian clusters, one per class, centers on a seeded random
// sphere of the given radius.
Dataset make_blobs(std::size_t n, std::size_t num_classes, std::size_t dim, double spread,
                   std::uint64_t seed);

// IDX image/label file pair (magic 0x00000803 / 0x00000801, big-endian dims,
// unsigned byte payload). Malformed input raises ParseError with the byte
// offset of the problem.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CSV rows "label, feature, feature, ...". Column-count mismatches and bad
// numbers raise ParseError naming the line.
Dataset load_csv(const std::string& path);

struct Standardization {
    std::vector<double> mean;  // per channel
    std::vector<double> stddev;
};

// In-place per-channel standardization; returns the statistics used so the
// same transform can be replayed onto held-out data.
Standardization standardize(Dataset& data);
void apply_standardization(Dataset& data, const Standardization& stats);

} // namespace decompnet
