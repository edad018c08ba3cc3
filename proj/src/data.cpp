#include "clce/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "clce/errors.hpp"
#include "clce/loss.hpp"
#include "clce/rng.hpp"

namespace clce {

namespace {

constexpr std::size_t kCifarRecordBytes = 3073;
constexpr std::size_t kCifarImageBytes = 3072;
constexpr std::size_t kCifarSide = 32;

const char* kCifarNames[10] = {"airplane", "automobile", "bird",  "cat",  "deer",
                               "dog",      "frog",       "horse", "ship", "truck"};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_feature(const std::string& text, std::size_t line_number) {
    const char* begin = text.data();
    const char* end = begin + text.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
    double value = 0.0;
    const auto result = std::from_chars(begin, end, value);
    if (result.ec != std::errc{} || result.ptr != end)
        throw ParseError("line " + std::to_string(line_number) +
                         ": non-numeric feature value '" + text + "'");
    return value;
}

// reflect an out-of-range coordinate back into [0, size), mirroring about
// the edge pixel (index -1 maps to 1, size maps to size - 2)
std::size_t reflect_index(long idx, long size) {
    while (idx < 0 || idx >= size) {
        if (idx < 0) idx = -idx;
        if (idx >= size) idx = 2 * (size - 1) - idx;
    }
    return static_cast<std::size_t>(idx);
}

void augment_into(std::span<const double> src, std::span<double> dst,
                  const AugmentationPolicy& policy, Rng& rng) {
    switch (policy.kind) {
        case AugmentationKind::GaussianNoise:
            for (std::size_t k = 0; k < src.size(); ++k)
                dst[k] = src[k] + policy.noise_sigma * rng.gaussian();
            return;
        case AugmentationKind::CoordinateDropout:
            for (std::size_t k = 0; k < src.size(); ++k)
                dst[k] = rng.uniform() < policy.dropout_prob ? 0.0 : src[k];
            return;
        case AugmentationKind::Compose:
            for (std::size_t k = 0; k < src.size(); ++k) {
                const double noisy = src[k] + policy.noise_sigma * rng.gaussian();
                dst[k] = rng.uniform() < policy.dropout_prob ? 0.0 : noisy;
            }
            return;
        case AugmentationKind::ImageCropFlip: {
            if (src.size() != kCifarImageBytes)
                throw ShapeError("image_crop_flip expects 3072 features (3x32x32)");
            const long side = static_cast<long>(kCifarSide);
            const long pad = policy.crop_padding;
            const long dy = static_cast<long>(rng.uniform_index(2 * pad + 1));
            const long dx = static_cast<long>(rng.uniform_index(2 * pad + 1));
            const bool flip = rng.uniform() < policy.flip_prob;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const std::size_t plane = ch * kCifarSide * kCifarSide;
                for (long y = 0; y < side; ++y) {
                    const std::size_t sy = reflect_index(y + dy - pad, side);
                    for (long x = 0; x < side; ++x) {
                        const long view_x = flip ? side - 1 - x : x;
                        const std::size_t sx = reflect_index(view_x + dx - pad, side);
                        dst[plane + static_cast<std::size_t>(y) * kCifarSide +
                            static_cast<std::size_t>(x)] =
                            src[plane + sy * kCifarSide + sx];
                    }
                }
            }
            return;
        }
    }
    throw ConfigError("unknown augmentation kind");
}

}  // namespace

void AugmentationPolicy::validate() const {
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0))
        throw ConfigError("dropout_prob must lie in [0, 1]");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
        throw ConfigError("flip_prob must lie in [0, 1]");
    if (crop_padding < 0) throw ConfigError("crop_padding must be >= 0");
}

Dataset generate_blobs(int class_count, int per_class, std::size_t dim,
                       double spread, std::uint64_t seed) {
    if (class_count < 2) throw ConfigError("generate_blobs needs at least 2 classes");
    if (per_class < 1) throw ConfigError("generate_blobs needs at least 1 sample per class");
    if (dim < 2) throw ConfigError("generate_blobs needs dim >= 2");
    if (!(spread >= 0.0)) throw ConfigError("spread must be >= 0");

    Rng rng(seed);
    Matrix centers(class_count, dim);
    for (int c = 0; c < class_count; ++c) {
        double norm = 0.0;
        auto row = centers.row(c);
        do {
            for (std::size_t k = 0; k < dim; ++k) row[k] = rng.gaussian();
            norm = l2_norm(row);
        } while (norm <= 1e-12);
        for (std::size_t k = 0; k < dim; ++k) row[k] /= norm;
    }

    Dataset data;
    data.class_count = class_count;
    data.features = Matrix(static_cast<std::size_t>(class_count) * per_class, dim);
    data.labels.resize(data.features.rows);
    std::size_t row_index = 0;
    for (int c = 0; c < class_count; ++c) {
        const auto center = centers.row(c);
        for (int s = 0; s < per_class; ++s, ++row_index) {
            auto row = data.features.row(row_index);
            for (std::size_t k = 0; k < dim; ++k)
                row[k] = center[k] + spread * rng.gaussian();
            data.labels[row_index] = c;
        }
    }
    return data;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError("CSV file " + path.string() + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line);
    std::size_t label_index = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_index = i;
    if (label_index == header.size())
        throw ConfigError("label column '" + label_column + "' not found in header");
    const std::size_t feature_count = header.size() - 1;
    if (feature_count == 0) throw ParseError("CSV has no feature columns");

    std::vector<double> feature_values;
    std::vector<int> labels;
    std::map<std::string, int> label_ids;
    std::vector<std::string> class_names;
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw ParseError("line " + std::to_string(line_number) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i == label_index) continue;
            feature_values.push_back(parse_feature(fields[i], line_number));
        }
        const std::string& label_text = fields[label_index];
        auto it = label_ids.find(label_text);
        if (it == label_ids.end()) {
            it = label_ids.emplace(label_text, static_cast<int>(class_names.size())).first;
            class_names.push_back(label_text);
        }
        labels.push_back(it->second);
    }
    if (labels.empty()) throw ParseError("CSV file " + path.string() + " has no data rows");

    Dataset data;
    data.class_count = static_cast<int>(class_names.size());
    data.class_names = std::move(class_names);
    data.labels = std::move(labels);
    data.features = Matrix(data.labels.size(), feature_count);
    data.features.data = std::move(feature_values);
    return data;
}

Dataset load_cifar10_binary(const std::filesystem::path& directory) {
    if (!std::filesystem::is_directory(directory))
        throw ConfigError(directory.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(directory))
        if (entry.is_regular_file() && entry.path().extension() == ".bin")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw FormatError("no .bin files found in " + directory.string());

    std::size_t total_records = 0;
    for (const auto& file : files) {
        const std::uintmax_t size = std::filesystem::file_size(file);
        if (size == 0 || size % kCifarRecordBytes != 0)
            throw FormatError(file.string() + ": size " + std::to_string(size) +
                              " is not a positive multiple of 3073");
        total_records += size / kCifarRecordBytes;
    }

    Dataset data;
    data.class_count = 10;
    data.class_names.assign(std::begin(kCifarNames), std::end(kCifarNames));
    data.features = Matrix(total_records, kCifarImageBytes);
    data.labels.resize(total_records);

    std::size_t record_index = 0;
    std::vector<unsigned char> record(kCifarRecordBytes);
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw ConfigError("cannot open " + file.string());
        while (in.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes)) {
            if (record[0] > 9)
                throw FormatError(file.string() + ": label byte " +
                                  std::to_string(record[0]) + " out of range");
            data.labels[record_index] = record[0];
            auto row = data.features.row(record_index);
            for (std::size_t k = 0; k < kCifarImageBytes; ++k)
                row[k] = static_cast<double>(record[k + 1]) / 255.0;
            ++record_index;
        }
    }
    return data;
}

TwoViewBatch make_two_view_batch(const Dataset& dataset,
                                 std::span<const std::size_t> indices,
                                 const AugmentationPolicy& policy,
                                 std::uint64_t seed) {
    policy.validate();
    if (indices.empty()) throw IndexError("two-view batch needs at least one index");
    for (std::size_t idx : indices)
        if (idx >= dataset.size())
            throw IndexError("sample index " + std::to_string(idx) +
                             " out of range (dataset has " +
                             std::to_string(dataset.size()) + " rows)");

    Rng rng(seed);
    TwoViewBatch batch;
    batch.inputs = Matrix(2 * indices.size(), dataset.input_dim());
    batch.labels.resize(batch.inputs.rows);
    batch.sample_ids.resize(batch.inputs.rows);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const std::size_t idx = indices[b];
        const auto src = dataset.features.row(idx);
        for (std::size_t view = 0; view < 2; ++view) {
            const std::size_t out_row = 2 * b + view;
            augment_into(src, batch.inputs.row(out_row), policy, rng);
            batch.labels[out_row] = dataset.labels[idx];
            batch.sample_ids[out_row] = static_cast<int>(idx);
        }
    }
    return batch;
}

}  // namespace clce
