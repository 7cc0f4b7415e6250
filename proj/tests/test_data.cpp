#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include <zlib.h>

#include "support.hpp"

#include "memdfa/data.hpp"

using namespace memdfa;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

// 1-image IDX pair: 2x2 image, all pixels 255, label 7.
struct IdxFixture {
    std::string images, labels;
    IdxFixture() {
        std::vector<unsigned char> img;
        push_be32(img, 0x00000803);
        push_be32(img, 1);
        push_be32(img, 2);
        push_be32(img, 2);
        for (int i = 0; i < 4; ++i) img.push_back(255);
        images = temp_path("memdfa_fixture_images.idx");
        write_bytes(images, img);

        std::vector<unsigned char> lab;
        push_be32(lab, 0x00000801);
        push_be32(lab, 1);
        lab.push_back(7);
        labels = temp_path("memdfa_fixture_labels.idx");
        write_bytes(labels, lab);
    }
    ~IdxFixture() {
        std::remove(images.c_str());
        std::remove(labels.c_str());
    }
};

std::vector<unsigned char> gzip_compress(const std::vector<unsigned char>& in) {
    z_stream strm{};
    REQUIRE(deflateInit2(&strm, Z_BEST_SPEED, Z_DEFLATED, 16 + MAX_WBITS, 8,
                         Z_DEFAULT_STRATEGY) == Z_OK);
    std::vector<unsigned char> out(in.size() + 128);
    strm.next_in = const_cast<unsigned char*>(in.data());
    strm.avail_in = static_cast<uInt>(in.size());
    strm.next_out = out.data();
    strm.avail_out = static_cast<uInt>(out.size());
    REQUIRE(deflate(&strm, Z_FINISH) == Z_STREAM_END);
    out.resize(out.size() - strm.avail_out);
    deflateEnd(&strm);
    return out;
}

}  // namespace

TEST_CASE("IDX fixture loads with exact pixel and label recovery") {
    IdxFixture fx;
    auto ds = load_mnist_idx<float>(fx.images, fx.labels);
    REQUIRE(ds.count() == 1);
    REQUIRE(ds.images.shape() == Shape{1, 4});
    for (std::size_t i = 0; i < 4; ++i) CHECK(ds.images[i] == 1.0f);
    for (std::size_t k = 0; k < 10; ++k) CHECK(ds.labels_onehot(0, k) == (k == 7 ? 1.0f : 0.0f));
}

TEST_CASE("IDX loader accepts gzip-compressed files") {
    IdxFixture fx;
    std::ifstream in(fx.images, std::ios::binary);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    const std::string gz = temp_path("memdfa_fixture_images.idx.gz");
    write_bytes(gz, gzip_compress(raw));
    auto ds = load_mnist_idx<float>(gz, fx.labels);
    CHECK(ds.count() == 1);
    CHECK(ds.images[0] == 1.0f);
    std::remove(gz.c_str());
}

TEST_CASE("IDX loader failure modes are distinct errors") {
    IdxFixture fx;

    SUBCASE("truncated payload") {
        std::ifstream in(fx.images, std::ios::binary);
        std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
        raw.resize(raw.size() - 2);
        const std::string path = temp_path("memdfa_truncated.idx");
        write_bytes(path, raw);
        CHECK_THROWS_AS(load_mnist_idx<float>(path, fx.labels), TruncatedFileError);
        std::remove(path.c_str());
    }
    SUBCASE("bad magic") {
        std::vector<unsigned char> raw;
        push_be32(raw, 0x00000999);
        push_be32(raw, 1);
        push_be32(raw, 2);
        push_be32(raw, 2);
        raw.resize(raw.size() + 4, 0);
        const std::string path = temp_path("memdfa_badmagic.idx");
        write_bytes(path, raw);
        CHECK_THROWS_AS(load_mnist_idx<float>(path, fx.labels), BadMagicError);
        std::remove(path.c_str());
    }
    SUBCASE("count mismatch between images and labels") {
        std::vector<unsigned char> lab;
        push_be32(lab, 0x00000801);
        push_be32(lab, 2);
        lab.push_back(1);
        lab.push_back(2);
        const std::string path = temp_path("memdfa_mismatch_labels.idx");
        write_bytes(path, lab);
        CHECK_THROWS_AS(load_mnist_idx<float>(fx.images, path), CountMismatchError);
        std::remove(path.c_str());
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_mnist_idx<float>("/nonexistent/img", fx.labels), DataError);
    }
}

TEST_CASE("CIFAR-10 single-record fixture recovers pixels and label exactly") {
    std::vector<unsigned char> rec(3073, 0);
    rec[0] = 3;  // label
    rec[1] = 255;
    rec[2] = 128;
    rec[3072] = 17;
    const std::string path = temp_path("memdfa_cifar.bin");
    write_bytes(path, rec);
    auto ds = load_cifar10_binary<float>({path});
    REQUIRE(ds.count() == 1);
    REQUIRE(ds.images.shape() == Shape{1, 3, 32, 32});
    CHECK(ds.images[0] == 1.0f);
    CHECK(ds.images[1] == doctest::Approx(128.0f / 255.0f));
    CHECK(ds.images[3071] == doctest::Approx(17.0f / 255.0f));
    CHECK(ds.labels_onehot(0, 3) == 1.0f);
    for (std::size_t i = 0; i < ds.images.numel(); ++i) {
        CHECK(ds.images[i] >= 0.0f);
        CHECK(ds.images[i] <= 1.0f);
    }
    std::remove(path.c_str());
}

TEST_CASE("CIFAR-10 misaligned file (missing label byte) errors") {
    std::vector<unsigned char> rec(3072, 0);
    const std::string path = temp_path("memdfa_cifar_short.bin");
    write_bytes(path, rec);
    CHECK_THROWS_AS(load_cifar10_binary<float>({path}), RecordAlignmentError);
    std::remove(path.c_str());
}

TEST_CASE("batches: full-dataset batch is a permutation") {
    auto ds = make_synthetic_classification<float>(8, 16, {3}, 4);
    BatchStream<float> stream(ds, 16, Rng(1, 0));
    auto b = stream.next();
    REQUIRE(b);
    CHECK_FALSE(stream.next());

    // multiset equality of rows with the dataset
    std::map<std::vector<float>, int> want, got;
    for (std::size_t r = 0; r < 16; ++r) {
        std::vector<float> a(3), g(3);
        for (std::size_t j = 0; j < 3; ++j) {
            a[j] = ds.images[r * 3 + j];
            g[j] = b->x[r * 3 + j];
        }
        want[a]++;
        got[g]++;
    }
    CHECK(want == got);
}

TEST_CASE("batches: same seed gives an identical sequence, short tail included") {
    auto ds = make_synthetic_classification<float>(8, 10, {2}, 3);
    BatchStream<float> s1(ds, 4, Rng(7, 3));
    BatchStream<float> s2(ds, 4, Rng(7, 3));
    std::size_t sizes[3] = {4, 4, 2};
    for (std::size_t i = 0; i < 3; ++i) {
        auto a = s1.next();
        auto b = s2.next();
        REQUIRE(a);
        REQUIRE(b);
        CHECK(a->x.dim(0) == sizes[i]);
        CHECK(oracle::bitwise_equal(a->x, b->x));
        CHECK(oracle::bitwise_equal(a->y, b->y));
    }
    CHECK_FALSE(s1.next());
}

TEST_CASE("batches: union over an epoch is exactly the dataset") {
    auto ds = make_synthetic_classification<float>(9, 23, {2}, 3);
    BatchStream<float> stream(ds, 5, Rng(2, 0));
    std::map<std::vector<float>, int> want, got;
    for (std::size_t r = 0; r < 23; ++r) {
        std::vector<float> a{ds.images[r * 2], ds.images[r * 2 + 1]};
        want[a]++;
    }
    while (auto b = stream.next())
        for (std::size_t r = 0; r < b->x.dim(0); ++r) {
            std::vector<float> g{b->x[r * 2], b->x[r * 2 + 1]};
            got[g]++;
        }
    CHECK(want == got);
}

TEST_CASE("batches: zero or oversized batch sizes are rejected") {
    auto ds = make_synthetic_classification<float>(8, 4, {2}, 2);
    CHECK_THROWS_AS(BatchStream<float>(ds, 0, Rng(1, 0)), std::invalid_argument);
    CHECK_THROWS_AS(BatchStream<float>(ds, 5, Rng(1, 0)), std::invalid_argument);
}

TEST_CASE("synthetic data is deterministic, bounded, and label-complete") {
    auto a = make_synthetic_classification<float>(4, 50, {6}, 10);
    auto b = make_synthetic_classification<float>(4, 50, {6}, 10);
    CHECK(oracle::bitwise_equal(a.images, b.images));
    CHECK(oracle::bitwise_equal(a.labels_onehot, b.labels_onehot));
    for (std::size_t i = 0; i < a.images.numel(); ++i) {
        CHECK(a.images[i] >= 0.0f);
        CHECK(a.images[i] <= 1.0f);
    }
    auto c = make_synthetic_classification<float>(4, 50, {6}, 10, 2);
    CHECK_FALSE(oracle::bitwise_equal(a.images, c.images));  // held-out split differs
}
