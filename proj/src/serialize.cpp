#include "mtsnet/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mtsnet {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'T', 'S', 'V'};
// Guards against absurd allocations from corrupt headers.
constexpr std::uint32_t kMaxRank = 16;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void put_u32(std::ostream& os, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("MTSV1: truncated header");
    return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
}

}  // namespace

void write_mtsv(std::ostream& os, const Tensor& t) {
    os.write(kMagic.data(), kMagic.size());
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
    if (!os) throw DataError("MTSV1: write failed");
}

Tensor read_mtsv(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("MTSV1: bad magic");
    const std::uint32_t rank = get_u32(is);
    if (rank == 0 || rank > kMaxRank) throw DataError("MTSV1: invalid rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
        e = get_u32(is);
        if (e == 0) throw DataError("MTSV1: zero extent");
        count *= e;
        if (count > kMaxElements) throw DataError("MTSV1: tensor too large");
    }
    std::vector<float> values(count);
    std::vector<unsigned char> bytes(count * 4);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw DataError("MTSV1: truncated payload");
    }
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* b = bytes.data() + 4 * i;
        const std::uint32_t u = std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
                                std::uint32_t{b[3]} << 24;
        values[i] = std::bit_cast<float>(u);
    }
    return Tensor(std::move(shape), std::move(values));
}

void save_mtsv(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_mtsv(os, t);
}

Tensor load_mtsv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    try {
        return read_mtsv(is);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace mtsnet
