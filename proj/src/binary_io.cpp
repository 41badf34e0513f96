#include "slvid/binary_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace slv::io {

namespace {

constexpr std::array<char, 4> kFeatureMagic{'S', 'L', 'V', '1'};

void read_exact(std::istream& in, char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw std::runtime_error("truncated binary input");
    }
}

} // namespace

void write_u32(std::ostream& out, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    }
    out.write(b.data(), b.size());
}

void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t read_u32(std::istream& in) {
    std::array<unsigned char, 4> b{};
    read_exact(in, reinterpret_cast<char*>(b.data()), b.size());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    const std::uint64_t lo = read_u32(in);
    const std::uint64_t hi = read_u32(in);
    return lo | (hi << 32);
}

float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open for reading: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_feature_file(const std::filesystem::path& path, const FeatureBlock& block) {
    if (block.values.size() != static_cast<std::size_t>(block.rows) * block.cols) {
        throw std::invalid_argument("feature block size does not match its shape");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    out.write(kFeatureMagic.data(), kFeatureMagic.size());
    write_u32(out, block.rows);
    write_u32(out, block.cols);
    for (float v : block.values) {
        write_f32(out, v);
    }
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

FeatureBlock read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("missing feature file: " + path.string());
    }
    std::array<char, 4> magic{};
    read_exact(in, magic.data(), magic.size());
    if (magic != kFeatureMagic) {
        throw std::runtime_error("bad feature file magic: " + path.string());
    }
    FeatureBlock block;
    block.rows = read_u32(in);
    block.cols = read_u32(in);
    const std::size_t n = static_cast<std::size_t>(block.rows) * block.cols;
    block.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        block.values[i] = read_f32(in);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw std::runtime_error("trailing bytes in feature file: " + path.string());
    }
    return block;
}

} // namespace slv::io
