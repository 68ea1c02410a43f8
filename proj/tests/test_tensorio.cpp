#include "doctest.h"

#include <cmath>
#include <fstream>

#include "atq/fp16.hpp"
#include "atq/tensor_file.hpp"
#include "helpers.hpp"

using namespace atq;
using test_util::TempDir;

TEST_CASE("matrix round-trip at fp64 is exact") {
    TempDir tmp;
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    store_matrix(m, tmp.file("m.atqt"), Precision::Fp64);
    const Matrix back = load_matrix(tmp.file("m.atqt"));
    CHECK(test_util::mat_equal(m, back));

    const Matrix r = test_util::random_matrix(64, 64, 7);
    store_matrix(r, tmp.file("r.atqt"), Precision::Fp64);
    CHECK((load_matrix(tmp.file("r.atqt")) - r).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fp16 storage stays within a half ulp at unit scale") {
    TempDir tmp;
    const Matrix r = test_util::random_matrix(64, 64, 11);
    store_matrix(r, tmp.file("r16.atqt"), Precision::Fp16);
    const Matrix back = load_matrix(tmp.file("r16.atqt"));
    CHECK((back - r).cwiseAbs().maxCoeff() <= std::pow(2.0, -10));
}

TEST_CASE("fp32 storage matches the fp32 rounding oracle") {
    TempDir tmp;
    const Matrix r = test_util::random_matrix(128, 128, 13);
    store_matrix(r, tmp.file("r32.atqt"), Precision::Fp32);
    const Matrix back = load_matrix(tmp.file("r32.atqt"));
    double max_err = 0.0;
    for (Index i = 0; i < r.rows(); ++i) {
        for (Index j = 0; j < r.cols(); ++j) {
            CHECK(back(i, j) == static_cast<double>(static_cast<float>(r(i, j))));
            max_err = std::max(max_err, std::abs(back(i, j) - r(i, j)));
        }
    }
    CHECK(max_err <= std::pow(2.0, -24));
}

TEST_CASE("zero matrix round-trips exactly at every precision") {
    TempDir tmp;
    const Matrix z = Matrix::Zero(5, 4);
    for (auto p : {Precision::Fp64, Precision::Fp32, Precision::Fp16}) {
        store_matrix(z, tmp.file("z.atqt"), p);
        CHECK(test_util::mat_equal(load_matrix(tmp.file("z.atqt")), z));
    }
}

TEST_CASE("fp16 range boundary: 65520 saturates, 65536 is rejected") {
    TempDir tmp;
    Matrix m(1, 1);
    m << 65520.0;
    store_matrix(m, tmp.file("max.atqt"), Precision::Fp16);
    CHECK(load_matrix(tmp.file("max.atqt"))(0, 0) == 65504.0);

    m << 65536.0;
    CHECK_THROWS_AS(store_matrix(m, tmp.file("ovf.atqt"), Precision::Fp16), ValidationError);
}

TEST_CASE("payload size mismatch is a corruption error") {
    TempDir tmp;
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    store_matrix(m, tmp.file("m.atqt"), Precision::Fp64);
    // drop the last element: header says 2x3, payload has five values
    std::ifstream in(tmp.file("m.atqt"), std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() - 8);
    std::ofstream out(tmp.file("cut.atqt"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_matrix(tmp.file("cut.atqt")), CorruptionError);
}

TEST_CASE("malformed headers are format errors") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("bad.atqt"), std::ios::binary);
        out.write("NOPE", 4);
    }
    CHECK_THROWS_AS(load_matrix(tmp.file("bad.atqt")), FormatError);

    Matrix m(1, 1);
    m << 1.0;
    store_matrix(m, tmp.file("v.atqt"), Precision::Fp64);
    {
        std::fstream f(tmp.file("v.atqt"), std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(4);
        const std::uint32_t bad_version = 9;
        f.write(reinterpret_cast<const char*>(&bad_version), 4);
    }
    CHECK_THROWS_AS(load_matrix(tmp.file("v.atqt")), FormatError);

    CHECK_THROWS_AS(load_matrix(tmp.file("missing.atqt")), IoError);
}

TEST_CASE("non-finite payloads are rejected") {
    TempDir tmp;
    Matrix m(1, 2);
    m << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(store_matrix(m, tmp.file("nan.atqt"), Precision::Fp64), ValidationError);

    m << 1.0, 2.0;
    store_matrix(m, tmp.file("ok.atqt"), Precision::Fp64);
    {
        std::fstream f(tmp.file("ok.atqt"), std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(28 + 8); // second payload element
        const double nan = std::numeric_limits<double>::quiet_NaN();
        f.write(reinterpret_cast<const char*>(&nan), 8);
    }
    CHECK_THROWS_AS(load_matrix(tmp.file("ok.atqt")), ValidationError);
}

TEST_CASE("calibration ingestion validates shape and emptiness") {
    TempDir tmp;
    Matrix e1(1, 4);
    e1 << 1, 0, 0, 0;
    store_matrix(e1, tmp.file("c.atqt"), Precision::Fp64);
    const CalibrationBatch b = ingest_calibration(tmp.file("c.atqt"));
    CHECK(b.count() == 1);
    CHECK(b.dim() == 4);

    const Matrix big = test_util::random_matrix(128, 16, 3);
    store_matrix(big, tmp.file("big.atqt"), Precision::Fp64);
    CHECK(ingest_calibration(tmp.file("big.atqt")).count() == 128);
    CHECK_THROWS_AS(ingest_calibration(tmp.file("big.atqt"), 17), ValidationError);

    // hand-written header with zero rows
    {
        std::ofstream out(tmp.file("empty.atqt"), std::ios::binary);
        out.write("ATQT", 4);
        const std::uint32_t version = 1;
        out.write(reinterpret_cast<const char*>(&version), 4);
        const std::uint8_t dtype = 0;
        out.write(reinterpret_cast<const char*>(&dtype), 1);
        const char zeros[3] = {0, 0, 0};
        out.write(zeros, 3);
        const std::uint64_t rows = 0, cols = 16;
        out.write(reinterpret_cast<const char*>(&rows), 8);
        out.write(reinterpret_cast<const char*>(&cols), 8);
    }
    CHECK_THROWS_AS(ingest_calibration(tmp.file("empty.atqt")), ValidationError);
    CHECK_THROWS_AS(load_matrix(tmp.file("empty.atqt")), FormatError);
}

TEST_CASE("fp16 conversion basics") {
    CHECK(fp16::canonical(0.0) == 0.0);
    CHECK(fp16::canonical(1.0) == 1.0);
    CHECK(fp16::canonical(65504.0) == 65504.0);
    CHECK(fp16::canonical(-65504.0) == -65504.0);
    // nearest-even around 1: ulp is 2^-10
    CHECK(fp16::canonical(1.0 + std::pow(2.0, -12)) == 1.0);
    CHECK(fp16::double_from_bits(fp16::bits_from_double(1.0 / 3.0)) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-3));
    // canonicalization is idempotent
    for (double v : {0.1, -2.7, 1234.5, 6.1e-5, 3.0e-8}) {
        const double c = fp16::canonical(v);
        CHECK(fp16::canonical(c) == c);
    }
}
