#include "decompnet/dataset.hpp"

#include "decompnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>

namespace decompnet {

namespace {

// Orthonormal dim x 2 embedding via Gram-Schmidt on Gaussian columns.
std::vector<std::array<double, 2>> random_plane_embedding(std::size_t dim, Rng& rng) {
    std::vector<std::array<double, 2>> basis(dim);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < dim; ++i) basis[i][k] = rng.normal();
        for (std::size_t j = 0; j < k; ++j) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += basis[i][k] * basis[i][j];
            for (std::size_t i = 0; i < dim; ++i) basis[i][k] -= dot * basis[i][j];
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < dim; ++i) norm += basis[i][k] * basis[i][k];
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < dim; ++i) basis[i][k] /= norm;
    }
    return basis;
}

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in)
        throw ParseError(path + ": truncated at byte offset " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

} // namespace

Dataset make_two_moons(std::size_t n, double noise, std::size_t dim, std::uint64_t seed) {
    if (n < 2) throw InvalidInputError("two moons: need at least 2 samples");
    if (dim < 2) throw InvalidInputError("two moons: dim must be >= 2");
    if (noise < 0.0) throw InvalidInputError("two moons: noise must be >= 0");

    Rng rng(seed, 0);
    const auto basis = random_plane_embedding(dim, rng);

    Dataset d;
    d.num_classes = 2;
    d.shape = InputShape{dim, 1, 1};
    d.features = DenseMatrix(n, dim);
    d.labels.resize(n);
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const bool outer = i < half;
        const double t = std::numbers::pi *
                         (outer ? static_cast<double>(i) / std::max<std::size_t>(half - 1, 1)
                                : static_cast<double>(i - half) /
                                      std::max<std::size_t>(n - half - 1, 1));
        double px, py;
        if (outer) {
            px = std::cos(t);
            py = std::sin(t);
        } else {
            px = 1.0 - std::cos(t);
            py = 0.5 - std::sin(t);
        }
        px += noise * rng.normal();
        py += noise * rng.normal();
        for (std::size_t k = 0; k < dim; ++k)
            d.features(i, k) = px * basis[k][0] + py * basis[k][1];
        d.labels[i] = outer ? 0 : 1;
    }
    return d;
}

Dataset make_blobs(std::size_t n, std::size_t num_classes, std::size_t dim, double spread,
                   std::uint64_t seed) {
    if (num_classes < 2) throw InvalidInputError("blobs: need at least 2 classes");
    if (n < num_classes) throw InvalidInputError("blobs: need at least one sample per class");
    if (dim == 0) throw InvalidInputError("blobs: dim must be >= 1");

    Rng rng(seed, 0);
    DenseMatrix centers(num_classes, dim);
    for (std::size_t c = 0; c < num_classes; ++c) {
        double norm = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            centers(c, k) = rng.normal();
            norm += centers(c, k) * centers(c, k);
        }
        norm = std::sqrt(norm);
        const double radius = 3.0;
        for (std::size_t k = 0; k < dim; ++k) centers(c, k) *= radius / norm;
    }

    Dataset d;
    d.num_classes = num_classes;
    d.shape = InputShape{dim, 1, 1};
    d.features = DenseMatrix(n, dim);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % num_classes;
        for (std::size_t k = 0; k < dim; ++k)
            d.features(i, k) = centers(c, k) + spread * rng.normal();
        d.labels[i] = static_cast<int>(c);
    }
    return d;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ParseError(images_path + ": cannot open");
    const std::uint32_t img_magic = read_be_u32(img, images_path, 0);
    if (img_magic != 0x00000803u)
        throw ParseError(images_path + ": bad magic 0x" + [&] {
            std::ostringstream os;
            os << std::hex << img_magic;
            return os.str();
        }() + " at byte offset 0 (expected 0x803)");
    const std::uint32_t count = read_be_u32(img, images_path, 4);
    const std::uint32_t rows = read_be_u32(img, images_path, 8);
    const std::uint32_t cols = read_be_u32(img, images_path, 12);
    if (count == 0 || rows == 0 || cols == 0)
        throw ParseError(images_path + ": zero dimension in header at byte offset 4");

    Dataset d;
    d.shape = InputShape{1, rows, cols};
    d.features = DenseMatrix(count, static_cast<std::size_t>(rows) * cols);
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img)
            throw ParseError(images_path + ": truncated pixel data at byte offset " +
                             std::to_string(16 + static_cast<std::size_t>(i) * buf.size()));
        for (std::size_t j = 0; j < buf.size(); ++j)
            d.features(i, j) = static_cast<double>(buf[j]);
    }

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ParseError(labels_path + ": cannot open");
    const std::uint32_t lab_magic = read_be_u32(lab, labels_path, 0);
    if (lab_magic != 0x00000801u)
        throw ParseError(labels_path + ": bad magic at byte offset 0 (expected 0x801)");
    const std::uint32_t lab_count = read_be_u32(lab, labels_path, 4);
    if (lab_count != count)
        throw ParseError(labels_path + ": label count " + std::to_string(lab_count) +
                         " does not match image count " + std::to_string(count));
    d.labels.resize(count);
    int max_label = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        char b;
        lab.read(&b, 1);
        if (!lab)
            throw ParseError(labels_path + ": truncated labels at byte offset " +
                             std::to_string(8 + i));
        d.labels[i] = static_cast<unsigned char>(b);
        max_label = std::max(max_label, d.labels[i]);
    }
    d.num_classes = static_cast<std::size_t>(max_label) + 1;
    return d;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");

    Dataset d;
    std::vector<double> values;
    std::size_t feature_count = 0, line_no = 0, samples = 0;
    int max_label = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<double> fields;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t pos = 0;
                fields.push_back(std::stod(cell, &pos));
                while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos])))
                    ++pos;
                if (pos != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ParseError(path + ": line " + std::to_string(line_no) +
                                 ": bad number '" + cell + "'");
            }
        }
        if (fields.size() < 2)
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": expected label plus at least one feature");
        if (feature_count == 0) {
            feature_count = fields.size() - 1;
        } else if (fields.size() - 1 != feature_count) {
            throw ParseError(path + ": line " + std::to_string(line_no) + ": expected " +
                             std::to_string(feature_count + 1) + " columns, found " +
                             std::to_string(fields.size()));
        }
        const double lab = fields[0];
        if (lab < 0 || lab != std::floor(lab))
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": label must be a non-negative integer");
        d.labels.push_back(static_cast<int>(lab));
        max_label = std::max(max_label, d.labels.back());
        values.insert(values.end(), fields.begin() + 1, fields.end());
        ++samples;
    }
    if (samples == 0) throw ParseError(path + ": no data rows");
    d.features = DenseMatrix(samples, feature_count);
    std::copy(values.begin(), values.end(), d.features.data());
    d.shape = InputShape{feature_count, 1, 1};
    d.num_classes = static_cast<std::size_t>(max_label) + 1;
    return d;
}

Standardization standardize(Dataset& data) {
    const std::size_t channels = data.shape.channels;
    const std::size_t group = data.shape.height * data.shape.width;
    Standardization stats;
    stats.mean.assign(channels, 0.0);
    stats.stddev.assign(channels, 0.0);

    const double count = static_cast<double>(data.size() * group);
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = 0; j < data.features.cols(); ++j)
            stats.mean[j / group] += data.features(i, j);
    for (double& m : stats.mean) m /= count;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = 0; j < data.features.cols(); ++j) {
            const double dv = data.features(i, j) - stats.mean[j / group];
            stats.stddev[j / group] += dv * dv;
        }
    for (double& s : stats.stddev) s = std::max(std::sqrt(s / count), 1e-12);

    apply_standardization(data, stats);
    return stats;
}

void apply_standardization(Dataset& data, const Standardization& stats) {
    if (stats.mean.size() != data.shape.channels)
        throw InvalidInputError("standardization: channel count mismatch");
    const std::size_t group = data.shape.height * data.shape.width;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = 0; j < data.features.cols(); ++j) {
            const std::size_t c = j / group;
            data.features(i, j) = (data.features(i, j) - stats.mean[c]) / stats.stddev[c];
        }
}

} // namespace decompnet
