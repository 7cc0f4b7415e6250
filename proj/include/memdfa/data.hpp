#ifndef MEMDFA_DATA_HPP
#define MEMDFA_DATA_HPP

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "memdfa/rng.hpp"
#include "memdfa/tensor.hpp"

namespace memdfa {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagicError : DataError {
    using DataError::DataError;
};
struct TruncatedFileError : DataError {
    using DataError::DataError;
};
struct CountMismatchError : DataError {
    using DataError::DataError;
};
struct RecordAlignmentError : DataError {
    using DataError::DataError;
};

/// Supervised dataset: images scaled to [0,1], labels one-hot. Images are
/// [count x features] for flat models or [count, c, h, w] for conv models
/// (reshape_images switches between the two).
template <typename T>
struct Dataset {
    Tensor<T> images;
    Tensor<T> labels_onehot;
    std::string name;

    std::size_t count() const { return images.empty() ? 0 : images.dim(0); }
    std::size_t classes() const { return labels_onehot.empty() ? 0 : labels_onehot.dim(1); }

    void reshape_images(const Shape& per_sample) {
        Shape full{count()};
        for (std::size_t d : per_sample) full.push_back(d);
        images.reshape(full);
    }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in,
                                         const std::string& path) {
    z_stream strm{};
    if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK)
        throw DataError("gzip init failed for " + path);
    std::vector<unsigned char> out;
    std::vector<unsigned char> buf(1 << 18);
    strm.next_in = const_cast<unsigned char*>(in.data());
    strm.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw DataError("gzip decompression failed for " + path);
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
    }
    inflateEnd(&strm);
    return out;
}

/// Reads a file, transparently decompressing gzip payloads.
inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes, path);
    return bytes;
}

inline std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace detail

/// One-hot encodes byte labels into a [count x classes] tensor.
template <typename T>
Tensor<T> one_hot(const std::vector<std::uint8_t>& labels, std::size_t classes,
                  std::string tag = "io:labels") {
    Tensor<T> t(Shape{labels.size(), classes}, std::move(tag));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes)
            throw DataError("label " + std::to_string(labels[i]) + " out of range at row " +
                            std::to_string(i));
        t(i, labels[i]) = T(1);
    }
    return t;
}

/// Loads the MNIST IDX pair (big-endian magic 0x00000803 for images,
/// 0x00000801 for labels; .gz accepted). Pixels scale by 1/255; images
/// come out flat [count x rows*cols].
template <typename T>
Dataset<T> load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_maybe_gzip(images_path);
    if (img.size() < 16) throw TruncatedFileError("IDX image header truncated: " + images_path);
    if (detail::be32(img.data()) != 0x00000803u)
        throw BadMagicError("bad IDX image magic in " + images_path);
    const std::size_t count = detail::be32(img.data() + 4);
    const std::size_t rows = detail::be32(img.data() + 8);
    const std::size_t cols = detail::be32(img.data() + 12);
    if (img.size() < 16 + count * rows * cols)
        throw TruncatedFileError("IDX image payload truncated: " + images_path);

    const auto lab = detail::read_maybe_gzip(labels_path);
    if (lab.size() < 8) throw TruncatedFileError("IDX label header truncated: " + labels_path);
    if (detail::be32(lab.data()) != 0x00000801u)
        throw BadMagicError("bad IDX label magic in " + labels_path);
    const std::size_t lab_count = detail::be32(lab.data() + 4);
    if (lab.size() < 8 + lab_count) throw TruncatedFileError("IDX label payload truncated: " +
                                                             labels_path);
    if (lab_count != count)
        throw CountMismatchError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                                 std::to_string(lab_count) + " labels");

    Dataset<T> ds;
    ds.name = "mnist";
    ds.images = Tensor<T>(Shape{count, rows * cols}, "io:mnist.images");
    const T scale = T(1) / T(255);
    for (std::size_t i = 0; i < count * rows * cols; ++i)
        ds.images[i] = static_cast<T>(img[16 + i]) * scale;
    std::vector<std::uint8_t> labels(lab.begin() + 8, lab.begin() + 8 + lab_count);
    ds.labels_onehot = one_hot<T>(labels, 10, "io:mnist.labels");
    return ds;
}

/// Loads CIFAR-10 binary batches: 3073-byte records, 1 label byte then
/// 3072 channel-major pixels. Result shape [count, 3, 32, 32].
template <typename T>
Dataset<T> load_cifar10_binary(const std::vector<std::string>& batch_paths) {
    constexpr std::size_t kRecord = 3073;
    Dataset<T> ds;
    ds.name = "cifar10";
    std::vector<std::uint8_t> labels;
    std::vector<unsigned char> pixels;
    for (const auto& path : batch_paths) {
        const auto bytes = detail::read_maybe_gzip(path);
        if (bytes.empty() || bytes.size() % kRecord != 0)
            throw RecordAlignmentError("CIFAR-10 file length " + std::to_string(bytes.size()) +
                                       " is not a multiple of 3073: " + path);
        const std::size_t n = bytes.size() / kRecord;
        for (std::size_t r = 0; r < n; ++r) {
            labels.push_back(bytes[r * kRecord]);
            pixels.insert(pixels.end(), bytes.begin() + r * kRecord + 1,
                          bytes.begin() + (r + 1) * kRecord);
        }
    }
    const std::size_t count = labels.size();
    ds.images = Tensor<T>(Shape{count, 3, 32, 32}, "io:cifar.images");
    const T scale = T(1) / T(255);
    for (std::size_t i = 0; i < pixels.size(); ++i)
        ds.images[i] = static_cast<T>(pixels[i]) * scale;
    ds.labels_onehot = one_hot<T>(labels, 10, "io:cifar.labels");
    return ds;
}

template <typename T>
struct Batch {
    Tensor<T> x, y;
};

/// Copies rows [start, start+n) without permutation (evaluation order).
template <typename T>
Batch<T> slice_batch(const Dataset<T>& ds, std::size_t start, std::size_t n,
                     const std::string& tag_x = "activation:a0") {
    const std::size_t N = ds.count();
    const std::size_t xstride = ds.images.numel() / N;
    const std::size_t ystride = ds.labels_onehot.numel() / N;
    Shape xs = ds.images.shape();
    xs[0] = n;
    Batch<T> b{Tensor<T>(xs, tag_x), Tensor<T>(Shape{n, ystride}, "io:y")};
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = start + r;
        for (std::size_t j = 0; j < xstride; ++j) b.x[r * xstride + j] = ds.images[src * xstride + j];
        for (std::size_t j = 0; j < ystride; ++j) b.y[r * ystride + j] = ds.labels_onehot[src * ystride + j];
    }
    return b;
}

/// Seeded Fisher-Yates permutation of the dataset, served in batches of
/// batch_size; the final short batch is included.
template <typename T>
class BatchStream {
public:
    BatchStream(const Dataset<T>& ds, std::size_t batch_size, Rng rng)
        : ds_(&ds), batch_(batch_size) {
        if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be > 0");
        if (batch_size > ds.count())
            throw std::invalid_argument("batches: batch_size " + std::to_string(batch_size) +
                                        " exceeds dataset count " + std::to_string(ds.count()));
        perm_.resize(ds.count());
        for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = static_cast<std::uint32_t>(i);
        for (std::size_t i = perm_.size(); i-- > 1;)
            std::swap(perm_[i], perm_[rng.next_below(i + 1)]);
    }

    std::optional<Batch<T>> next() {
        const std::size_t N = ds_->count();
        if (pos_ >= N) return std::nullopt;
        const std::size_t n = std::min(batch_, N - pos_);
        const std::size_t xstride = ds_->images.numel() / N;
        const std::size_t ystride = ds_->labels_onehot.numel() / N;
        Shape xs = ds_->images.shape();
        xs[0] = n;
        Batch<T> b{Tensor<T>(xs, "activation:a0"), Tensor<T>(Shape{n, ystride}, "io:y")};
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t src = perm_[pos_ + r];
            for (std::size_t j = 0; j < xstride; ++j)
                b.x[r * xstride + j] = ds_->images[src * xstride + j];
            for (std::size_t j = 0; j < ystride; ++j)
                b.y[r * ystride + j] = ds_->labels_onehot[src * ystride + j];
        }
        pos_ += n;
        return b;
    }

private:
    const Dataset<T>* ds_;
    std::size_t batch_;
    std::size_t pos_ = 0;
    std::vector<std::uint32_t> perm_;
};

/// Deterministic synthetic classification set: inputs uniform in [0,1],
/// labels from the argmax of a fixed random linear teacher, so the task is
/// learnable and two runs with one seed see identical data. The teacher is
/// shared across sample_stream values; use different streams for train and
/// test splits of one task.
template <typename T>
Dataset<T> make_synthetic_classification(std::uint64_t seed, std::size_t count,
                                         const Shape& per_sample, std::size_t classes,
                                         std::uint64_t sample_stream = 1) {
    const std::size_t flat = shape_numel(per_sample);
    Rng teacher_rng(seed, streams::synthetic(0));
    std::vector<double> teacher(flat * classes);
    for (auto& w : teacher) w = teacher_rng.normal(0.0, 1.0);

    Dataset<T> ds;
    ds.name = "synthetic";
    Shape full{count};
    for (std::size_t d : per_sample) full.push_back(d);
    ds.images = Tensor<T>(full, "io:synthetic.images");
    Rng x_rng(seed, streams::synthetic(sample_stream));
    for (std::size_t i = 0; i < ds.images.numel(); ++i)
        ds.images[i] = static_cast<T>(x_rng.uniform(0.0, 1.0));

    std::vector<std::uint8_t> labels(count);
    for (std::size_t r = 0; r < count; ++r) {
        double best = -1e300;
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            double s = 0;
            for (std::size_t j = 0; j < flat; ++j)
                s += static_cast<double>(ds.images[r * flat + j]) * teacher[j * classes + k];
            if (s > best) {
                best = s;
                best_k = k;
            }
        }
        labels[r] = static_cast<std::uint8_t>(best_k);
    }
    ds.labels_onehot = one_hot<T>(labels, classes, "io:synthetic.labels");
    return ds;
}

}  // namespace memdfa

#endif  // MEMDFA_DATA_HPP
