#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hpnet/error.hpp"

// Little-endian binary IO with explicit truncation errors. File offsets are
// tracked so parse errors can name the byte where they happened.

namespace hpnet::binio {

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open " + path);
    }

    std::size_t offset() const { return offset_; }

    void raw(void* dst, std::size_t n, const char* what) {
        in_.read(reinterpret_cast<char*>(dst), std::streamsize(n));
        if (std::size_t(in_.gcount()) != n)
            throw IoError(path_ + ": truncated file reading " + what + " at offset " +
                          std::to_string(offset_) + " (wanted " + std::to_string(n) + " bytes, got " +
                          std::to_string(in_.gcount()) + ")");
        offset_ += n;
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        raw(b, 4, what);
        return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
               std::uint32_t(b[3]) << 24;
    }

    std::uint64_t u64(const char* what) {
        std::uint64_t lo = u32(what), hi = u32(what);
        return lo | (hi << 32);
    }

    double f64(const char* what) {
        std::uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        std::string s(n, '\0');
        if (n) raw(s.data(), n, what);
        return s;
    }

    void f32_array(float* dst, std::size_t count, const char* what) {
        std::vector<unsigned char> buf(count * 4);
        raw(buf.data(), buf.size(), what);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits = std::uint32_t(buf[4 * i]) | std::uint32_t(buf[4 * i + 1]) << 8 |
                                 std::uint32_t(buf[4 * i + 2]) << 16 | std::uint32_t(buf[4 * i + 3]) << 24;
            std::memcpy(dst + i, &bits, 4);
        }
    }

    bool at_eof() {
        return in_.peek() == std::char_traits<char>::eof();
    }

private:
    std::string path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open " + path + " for writing");
    }

    void raw(const void* src, std::size_t n) {
        out_.write(reinterpret_cast<const char*>(src), std::streamsize(n));
    }

    void u32(std::uint32_t v) {
        unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                              (unsigned char)(v >> 16 & 0xff), (unsigned char)(v >> 24 & 0xff)};
        raw(b, 4);
    }

    void u64(std::uint64_t v) {
        u32(std::uint32_t(v & 0xffffffffULL));
        u32(std::uint32_t(v >> 32));
    }

    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void bytes(const std::string& s) { raw(s.data(), s.size()); }

    void f32_array(const float* src, std::size_t count) {
        std::vector<unsigned char> buf(count * 4);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, src + i, 4);
            buf[4 * i] = bits & 0xff;
            buf[4 * i + 1] = bits >> 8 & 0xff;
            buf[4 * i + 2] = bits >> 16 & 0xff;
            buf[4 * i + 3] = bits >> 24 & 0xff;
        }
        raw(buf.data(), buf.size());
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("write failed for " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
};

}  // namespace hpnet::binio
