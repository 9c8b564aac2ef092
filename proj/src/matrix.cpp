#include "lmforge/matrix.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "lmforge/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "matrix files are little-endian; big-endian hosts are unsupported");

namespace lmforge {

namespace {

constexpr char kMagic[4] = {'V', 'F', 'M', 'X'};
constexpr std::uint32_t kVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t seed) {
    static const std::array<std::uint32_t, 256> table = make_crc_table();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) c = table[(c ^ bytes[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void save_matrix(const MatF& matrix, const std::filesystem::path& path) {
    std::vector<char> buffer;
    const std::uint32_t rows = static_cast<std::uint32_t>(matrix.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(matrix.cols());
    buffer.resize(sizeof(kMagic) + 3 * sizeof(std::uint32_t) +
                  static_cast<std::size_t>(rows) * cols * sizeof(float) + sizeof(std::uint32_t));
    char* p = buffer.data();
    std::memcpy(p, kMagic, sizeof(kMagic));
    p += sizeof(kMagic);
    std::memcpy(p, &kVersion, sizeof(kVersion));
    p += sizeof(kVersion);
    std::memcpy(p, &rows, sizeof(rows));
    p += sizeof(rows);
    std::memcpy(p, &cols, sizeof(cols));
    p += sizeof(cols);
    const std::size_t payload = static_cast<std::size_t>(rows) * cols * sizeof(float);
    if (payload > 0) std::memcpy(p, matrix.data(), payload);
    p += payload;
    const std::uint32_t crc = crc32(buffer.data(), static_cast<std::size_t>(p - buffer.data()));
    std::memcpy(p, &crc, sizeof(crc));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

MatF load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<char> buffer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buffer.size() < sizeof(kMagic) + 4 * sizeof(std::uint32_t)) {
        throw DataError(path.string() + ": truncated matrix file");
    }
    if (std::memcmp(buffer.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError(path.string() + ": bad magic, not a matrix file");
    }
    std::uint32_t version = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::memcpy(&version, buffer.data() + 4, sizeof(version));
    std::memcpy(&rows, buffer.data() + 8, sizeof(rows));
    std::memcpy(&cols, buffer.data() + 12, sizeof(cols));
    if (version != kVersion) {
        throw DataError(path.string() + ": unsupported matrix version " + std::to_string(version));
    }
    const std::size_t payload = static_cast<std::size_t>(rows) * cols * sizeof(float);
    const std::size_t expected = 16 + payload + sizeof(std::uint32_t);
    if (buffer.size() != expected) {
        throw DataError(path.string() + ": size mismatch (" + std::to_string(buffer.size()) +
                        " bytes, expected " + std::to_string(expected) + ")");
    }
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, buffer.data() + 16 + payload, sizeof(stored_crc));
    const std::uint32_t computed = crc32(buffer.data(), 16 + payload);
    if (stored_crc != computed) throw DataError(path.string() + ": CRC mismatch");

    MatF matrix(rows, cols);
    if (payload > 0) std::memcpy(matrix.data(), buffer.data() + 16, payload);
    return matrix;
}

}  // namespace lmforge
