#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "clce/data.hpp"
#include "clce/errors.hpp"

using namespace clce;

namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
    return fs::temp_directory_path() / ("clce_data_" + name);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("generate_blobs is deterministic per seed") {
    const Dataset a = generate_blobs(4, 10, 8, 0.2, 42);
    const Dataset b = generate_blobs(4, 10, 8, 0.2, 42);
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);
    const Dataset c = generate_blobs(4, 10, 8, 0.2, 43);
    CHECK(a.features.data != c.features.data);
}

TEST_CASE("generate_blobs with zero spread collapses classes to their centers") {
    const Dataset data = generate_blobs(3, 5, 6, 0.0, 7);
    for (int c = 0; c < 3; ++c) {
        const auto first = data.features.row(c * 5);
        for (int s = 1; s < 5; ++s) {
            const auto row = data.features.row(c * 5 + s);
            for (std::size_t k = 0; k < 6; ++k) CHECK(row[k] == first[k]);
        }
        CHECK(std::abs(l2_norm(first) - 1.0) < 1e-12);  // centers on unit sphere
    }
}

TEST_CASE("generate_blobs shapes and label counts") {
    const Dataset data = generate_blobs(10, 50, 16, 0.3, 1);
    CHECK(data.features.rows == 500);
    CHECK(data.features.cols == 16);
    CHECK(data.class_count == 10);
    std::vector<int> counts(10, 0);
    for (int label : data.labels) counts[label]++;
    for (int c : counts) CHECK(c == 50);
}

TEST_CASE("generate_blobs validates arguments") {
    CHECK_THROWS_AS(generate_blobs(1, 5, 4, 0.1, 1), ConfigError);
    CHECK_THROWS_AS(generate_blobs(3, 0, 4, 0.1, 1), ConfigError);
    CHECK_THROWS_AS(generate_blobs(3, 5, 1, 0.1, 1), ConfigError);
}

TEST_CASE("load_csv re-indexes labels by first appearance") {
    const fs::path path = temp_path("pets.csv");
    write_file(path, "w,h,label\n1.0,2.0,cat\n3.5,4.5,dog\n5.0,6.0,cat\n");
    const Dataset data = load_csv(path, "label");
    CHECK(data.features.rows == 3);
    CHECK(data.features.cols == 2);
    CHECK(data.labels == std::vector<int>{0, 1, 0});
    CHECK(data.class_count == 2);
    CHECK(data.class_names == std::vector<std::string>{"cat", "dog"});
    CHECK(data.features(1, 1) == 4.5);
    fs::remove(path);
}

TEST_CASE("load_csv error paths") {
    const fs::path path = temp_path("bad.csv");
    SUBCASE("missing label column") {
        write_file(path, "a,b\n1,2\n");
        CHECK_THROWS_AS(load_csv(path, "label"), ConfigError);
    }
    SUBCASE("ragged row names the line") {
        write_file(path, "a,b,label\n1,2,x\n1,2\n");
        CHECK_THROWS_WITH_AS(load_csv(path, "label"),
                             doctest::Contains("line 3"), ParseError);
    }
    SUBCASE("non-numeric feature") {
        write_file(path, "a,b,label\n1,oops,x\n");
        CHECK_THROWS_AS(load_csv(path, "label"), ParseError);
    }
    SUBCASE("no data rows") {
        write_file(path, "a,b,label\n");
        CHECK_THROWS_AS(load_csv(path, "label"), ParseError);
    }
    fs::remove(path);
}

TEST_CASE("load_csv on an iris-shaped fixture matches an independent row count") {
    const fs::path path = temp_path("iris.csv");
    std::string text = "f0,f1,f2,f3,species\n";
    const char* names[3] = {"setosa", "versicolor", "virginica"};
    int expected_rows = 0;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 50; ++i) {
            text += std::to_string(c + 0.1 * i) + "," + std::to_string(1.0 + i) + "," +
                    std::to_string(2.0 + c) + "," + std::to_string(0.5 * i) + "," +
                    names[c] + "\n";
            ++expected_rows;
        }
    write_file(path, text);

    // independent oracle: count newline-terminated data lines in the file
    std::ifstream in(path);
    std::string line;
    int line_count = 0;
    while (std::getline(in, line)) ++line_count;
    CHECK(line_count - 1 == expected_rows);

    const Dataset data = load_csv(path, "species");
    CHECK(data.features.rows == static_cast<std::size_t>(line_count - 1));
    CHECK(data.features.rows == 150);
    CHECK(data.features.cols == 4);
    CHECK(data.class_count == 3);
    fs::remove(path);
}

TEST_CASE("load_cifar10_binary parses a hand-built two-record fixture") {
    const fs::path dir = temp_path("cifar_fixture");
    fs::create_directories(dir);
    std::string record_a(3073, '\0');
    record_a[0] = 3;  // label
    record_a[1] = static_cast<char>(255);
    record_a[2] = static_cast<char>(128);
    std::string record_b(3073, '\0');
    record_b[0] = 7;
    record_b[3072] = static_cast<char>(51);  // last pixel of the blue plane
    write_file(dir / "batch.bin", record_a + record_b);

    const Dataset data = load_cifar10_binary(dir);
    CHECK(data.features.rows == 2);
    CHECK(data.features.cols == 3072);
    CHECK(data.class_count == 10);
    CHECK(data.labels == std::vector<int>{3, 7});
    CHECK(data.features(0, 0) == 1.0);
    CHECK(data.features(0, 1) == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
    CHECK(data.features(0, 2) == 0.0);
    CHECK(data.features(1, 3071) == doctest::Approx(51.0 / 255.0).epsilon(1e-15));
    fs::remove_all(dir);
}

TEST_CASE("load_cifar10_binary rejects malformed files") {
    const fs::path dir = temp_path("cifar_bad");
    fs::create_directories(dir);
    SUBCASE("empty file") {
        write_file(dir / "empty.bin", "");
        CHECK_THROWS_AS(load_cifar10_binary(dir), FormatError);
    }
    SUBCASE("length not a multiple of 3073") {
        write_file(dir / "short.bin", std::string(3072, '\0'));
        CHECK_THROWS_AS(load_cifar10_binary(dir), FormatError);
    }
    SUBCASE("no bin files") {
        CHECK_THROWS_AS(load_cifar10_binary(dir), FormatError);
    }
    fs::remove_all(dir);
}

TEST_CASE("load_cifar10_binary handles a standard-size batch file") {
    const fs::path dir = temp_path("cifar_full");
    fs::create_directories(dir);
    const std::size_t records = 10000;
    {
        std::ofstream out(dir / "data_batch_1.bin", std::ios::binary);
        const std::string record(3073, '\0');
        for (std::size_t r = 0; r < records; ++r) out << record;
    }
    // oracle: record count is file size divided by 3073
    CHECK(fs::file_size(dir / "data_batch_1.bin") / 3073 == records);
    const Dataset data = load_cifar10_binary(dir);
    CHECK(data.features.rows == records);
    fs::remove_all(dir);
}

TEST_CASE("make_two_view_batch with an identity policy copies the sample") {
    const Dataset data = generate_blobs(3, 4, 5, 0.2, 11);
    AugmentationPolicy identity;
    identity.noise_sigma = 0.0;
    identity.dropout_prob = 0.0;
    const std::vector<std::size_t> idx{1, 5, 9};
    const TwoViewBatch batch = make_two_view_batch(data, idx, identity, 3);
    REQUIRE(batch.inputs.rows == 6);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto src = data.features.row(idx[b]);
        for (std::size_t view = 0; view < 2; ++view) {
            const auto row = batch.inputs.row(2 * b + view);
            for (std::size_t k = 0; k < src.size(); ++k) CHECK(row[k] == src[k]);
            CHECK(batch.labels[2 * b + view] == data.labels[idx[b]]);
            CHECK(batch.sample_ids[2 * b + view] == static_cast<int>(idx[b]));
        }
    }
}

TEST_CASE("make_two_view_batch counts and pairing") {
    const Dataset data = generate_blobs(2, 8, 4, 0.1, 2);
    AugmentationPolicy policy;  // compose defaults
    const std::vector<std::size_t> idx{0, 3, 8, 12};
    const TwoViewBatch batch = make_two_view_batch(data, idx, policy, 9);
    CHECK(batch.inputs.rows == 8);
    std::set<int> seen;
    for (std::size_t i = 0; i + 1 < batch.sample_ids.size(); i += 2) {
        CHECK(batch.sample_ids[i] == batch.sample_ids[i + 1]);
        CHECK(batch.labels[i] == batch.labels[i + 1]);
        seen.insert(batch.sample_ids[i]);
    }
    CHECK(seen.size() == 4);
}

TEST_CASE("make_two_view_batch is deterministic per seed and views differ") {
    const Dataset data = generate_blobs(2, 6, 4, 0.1, 2);
    AugmentationPolicy policy;
    policy.kind = AugmentationKind::GaussianNoise;
    policy.noise_sigma = 0.1;
    const std::vector<std::size_t> idx{0, 1, 2};
    const TwoViewBatch a = make_two_view_batch(data, idx, policy, 5);
    const TwoViewBatch b = make_two_view_batch(data, idx, policy, 5);
    CHECK(a.inputs.data == b.inputs.data);
    const TwoViewBatch c = make_two_view_batch(data, idx, policy, 6);
    CHECK(a.inputs.data != c.inputs.data);
    // the two views of one sample are independent draws
    CHECK(std::vector<double>(a.inputs.row(0).begin(), a.inputs.row(0).end()) !=
          std::vector<double>(a.inputs.row(1).begin(), a.inputs.row(1).end()));
}

TEST_CASE("make_two_view_batch rejects out-of-range indices") {
    const Dataset data = generate_blobs(2, 3, 4, 0.1, 2);
    AugmentationPolicy policy;
    const std::vector<std::size_t> idx{99};
    CHECK_THROWS_AS(make_two_view_batch(data, idx, policy, 1), IndexError);
    CHECK_THROWS_AS(
        make_two_view_batch(data, std::vector<std::size_t>{}, policy, 1), IndexError);
}

TEST_CASE("coordinate dropout zeroes with the configured probability") {
    Dataset data;
    data.features = Matrix(1, 2000, 1.0);
    data.labels = {0};
    data.class_count = 1;
    AugmentationPolicy policy;
    policy.kind = AugmentationKind::CoordinateDropout;
    policy.dropout_prob = 0.25;
    const TwoViewBatch batch =
        make_two_view_batch(data, std::vector<std::size_t>{0}, policy, 21);
    std::size_t zeros = 0;
    for (double v : batch.inputs.row(0))
        if (v == 0.0) ++zeros;
    CHECK(zeros > 2000 * 0.25 - 60);
    CHECK(zeros < 2000 * 0.25 + 60);
}

TEST_CASE("image crop-flip augmentation keeps shape and is deterministic") {
    Dataset data;
    data.features = Matrix(1, 3072);
    for (std::size_t k = 0; k < 3072; ++k)
        data.features(0, k) = static_cast<double>(k % 255) / 255.0;
    data.labels = {0};
    data.class_count = 1;
    AugmentationPolicy policy;
    policy.kind = AugmentationKind::ImageCropFlip;
    const TwoViewBatch a =
        make_two_view_batch(data, std::vector<std::size_t>{0}, policy, 8);
    const TwoViewBatch b =
        make_two_view_batch(data, std::vector<std::size_t>{0}, policy, 8);
    CHECK(a.inputs.data == b.inputs.data);
    CHECK(a.inputs.cols == 3072);
    // crops only rearrange pixels: values must come from the source image
    std::set<double> source(data.features.row(0).begin(), data.features.row(0).end());
    for (double v : a.inputs.row(0)) CHECK(source.count(v) == 1);

    Dataset tiny;
    tiny.features = Matrix(1, 10, 0.5);
    tiny.labels = {0};
    tiny.class_count = 1;
    CHECK_THROWS_AS(
        make_two_view_batch(tiny, std::vector<std::size_t>{0}, policy, 8), ShapeError);
}
