#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

namespace lmforge {

// Dense row-major matrices templated on scalar. fp32 is the storage format;
// fp64 instantiations back gradient verification.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

// CRC-32 (IEEE, reflected polynomial 0xEDB88320), initial value 0xFFFFFFFF.
std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t seed = 0);

// Matrix file format: "VFMX" magic, u32 version, u32 rows, u32 cols, fp32
// little-endian row-major payload, then a trailing CRC-32 over all preceding
// bytes.
void save_matrix(const MatF& matrix, const std::filesystem::path& path);
MatF load_matrix(const std::filesystem::path& path);

template <class To, class From>
Mat<To> cast_matrix(const Mat<From>& m) {
    return m.template cast<To>();
}

}  // namespace lmforge
