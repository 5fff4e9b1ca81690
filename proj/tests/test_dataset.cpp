#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "decompnet/dataset.hpp"
#include "test_util.hpp"

using namespace decompnet;
namespace fs = std::filesystem;

namespace {

void write_be_u32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& name) : path(fs::temp_directory_path() / name) {}
    ~TempFile() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

} // namespace

TEST_CASE("two moons: shapes, labels, determinism and separation") {
    const Dataset a = make_two_moons(200, 0.05, 12, 77);
    CHECK(a.size() == 200);
    CHECK(a.features.cols() == 12);
    CHECK(a.num_classes == 2);
    std::size_t zeros = 0;
    for (int l : a.labels) zeros += l == 0 ? 1 : 0;
    CHECK(zeros == 100);

    const Dataset b = make_two_moons(200, 0.05, 12, 77);
    CHECK(a.features == b.features);
    const Dataset c = make_two_moons(200, 0.05, 12, 78);
    CHECK(a.features != c.features);

    // The embedding is orthonormal, so planar distances are preserved and the
    // noiseless moons stay in a ball of radius ~2.
    const Dataset clean = make_two_moons(100, 0.0, 6, 3);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        double n = 0.0;
        for (std::size_t j = 0; j < 6; ++j) n += clean.features(i, j) * clean.features(i, j);
        CHECK(std::sqrt(n) < 2.1);
    }
}

TEST_CASE("two moons pinned first sample") {
    // Record-and-pin: seed 0, noiseless. First sample is t=0 on the outer
    // moon, i.e. the planar point (1, 0) pushed through the seeded embedding.
    const Dataset d = make_two_moons(10, 0.0, 2, 0);
    CHECK(d.features(0, 0) == 0.71376545434031125);
    CHECK(d.features(0, 1) == -0.70038480579633444);
    // planar norm of (1, 0) is preserved by the orthonormal embedding
    CHECK(std::hypot(d.features(0, 0), d.features(0, 1)) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.labels[0] == 0);
}

TEST_CASE("blobs cover every class and separate at low spread") {
    const Dataset d = make_blobs(90, 3, 5, 0.1, 5);
    CHECK(d.num_classes == 3);
    std::size_t counts[3] = {0, 0, 0};
    for (int l : d.labels) ++counts[l];
    CHECK(counts[0] == 30);
    CHECK(counts[1] == 30);
    CHECK(counts[2] == 30);
    CHECK_THROWS_AS(make_blobs(1, 3, 5, 0.1, 5), InvalidInputError);
}

TEST_CASE("IDX loader handles the documented header") {
    TempFile images("decompnet_test_images.idx");
    TempFile labels("decompnet_test_labels.idx");
    {
        std::ofstream img(images.path, std::ios::binary);
        write_be_u32(img, 0x00000803u);
        write_be_u32(img, 3);   // samples
        write_be_u32(img, 4);   // rows
        write_be_u32(img, 5);   // cols
        for (int i = 0; i < 3 * 4 * 5; ++i) {
            const char b = static_cast<char>(i % 251);
            img.write(&b, 1);
        }
        std::ofstream lab(labels.path, std::ios::binary);
        write_be_u32(lab, 0x00000801u);
        write_be_u32(lab, 3);
        const char raw[3] = {2, 0, 1};
        lab.write(raw, 3);
    }
    const Dataset d = load_idx(images.path.string(), labels.path.string());
    CHECK(d.size() == 3);
    CHECK(d.features.cols() == 20);
    CHECK(d.shape.height == 4);
    CHECK(d.shape.width == 5);
    CHECK(d.num_classes == 3);
    CHECK(d.features(0, 0) == 0.0);
    CHECK(d.features(1, 0) == 20.0);  // first pixel of second image
    CHECK(d.labels == std::vector<int>{2, 0, 1});
}

TEST_CASE("IDX loader rejects bad magic and truncation with byte offsets") {
    TempFile images("decompnet_bad_images.idx");
    TempFile labels("decompnet_bad_labels.idx");
    {
        std::ofstream img(images.path, std::ios::binary);
        write_be_u32(img, 0x00000802u);
    }
    CHECK_THROWS_WITH_AS(load_idx(images.path.string(), labels.path.string()),
                         doctest::Contains("byte offset 0"), ParseError);
    {
        std::ofstream img(images.path, std::ios::binary);
        write_be_u32(img, 0x00000803u);
        write_be_u32(img, 2);
        write_be_u32(img, 2);
        write_be_u32(img, 2);
        const char raw[4] = {1, 2, 3, 4};  // only one of two samples
        img.write(raw, 4);
    }
    CHECK_THROWS_WITH_AS(load_idx(images.path.string(), labels.path.string()),
                         doctest::Contains("byte offset 20"), ParseError);
}

TEST_CASE("CSV loader parses label-first rows") {
    TempFile file("decompnet_data.csv");
    {
        std::ofstream out(file.path);
        out << "0, 1.5, -2.0\n";
        out << "1, 0.25, 3.5\n";
        out << "\n";
        out << "2, -1.0, 0.0\n";
    }
    const Dataset d = load_csv(file.path.string());
    CHECK(d.size() == 3);
    CHECK(d.num_classes == 3);
    CHECK(d.features(0, 0) == 1.5);
    CHECK(d.features(2, 1) == 0.0);
    CHECK(d.labels == std::vector<int>{0, 1, 2});
}

TEST_CASE("CSV loader names the offending line") {
    TempFile file("decompnet_bad.csv");
    {
        std::ofstream out(file.path);
        out << "0, 1.0, 2.0\n";
        out << "1, 3.0\n";
    }
    CHECK_THROWS_WITH_AS(load_csv(file.path.string()), doctest::Contains("line 2"),
                         ParseError);
    {
        std::ofstream out(file.path);
        out << "0, 1.0, oops\n";
    }
    CHECK_THROWS_WITH_AS(load_csv(file.path.string()), doctest::Contains("line 1"),
                         ParseError);
}

TEST_CASE("standardization records and reapplies per-channel stats") {
    Dataset d;
    d.shape = InputShape{2, 1, 2};  // 2 channels of 2 values each
    d.features = DenseMatrix(2, 4);
    d.features(0, 0) = 1.0;
    d.features(0, 1) = 3.0;
    d.features(0, 2) = 10.0;
    d.features(0, 3) = 10.0;
    d.features(1, 0) = 5.0;
    d.features(1, 1) = 7.0;
    d.features(1, 2) = 10.0;
    d.features(1, 3) = 10.0;
    d.labels = {0, 1};
    d.num_classes = 2;

    Dataset copy = d;
    const Standardization stats = standardize(d);
    CHECK(stats.mean[0] == doctest::Approx(4.0));
    CHECK(stats.mean[1] == doctest::Approx(10.0));
    // channel 0 variance: mean of (9,1,1,9) = 5
    CHECK(stats.stddev[0] == doctest::Approx(std::sqrt(5.0)));
    // constant channel gets the floor, not a division blow-up
    CHECK(stats.stddev[1] == doctest::Approx(1e-12));
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::isfinite(d.features(0, j)));

    apply_standardization(copy, stats);
    CHECK(copy.features == d.features);
}
