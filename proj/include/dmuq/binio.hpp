#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dmuq/error.hpp"

namespace dmuq {

// Little-endian binary writer/reader for the dataset, checkpoint, and
// statistics containers. All multi-byte fields are stored little-endian
// regardless of host order so files round-trip bit-exactly across machines.

// In-memory little-endian byte sink, for length-prefixed sub-records.
struct ByteBuffer {
    std::vector<char> data;

    void u8(uint8_t v) { data.push_back(static_cast<char>(v)); }

    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) data.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) data.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
};

class BinWriter {
  public:
    explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) raise(ErrorCategory::Io, "cannot open '" + path + "' for writing");
    }

    void magic(const char* tag) { out_.write(tag, static_cast<std::streamsize>(std::strlen(tag))); }

    void u8(uint8_t v) { out_.put(static_cast<char>(v)); }

    void u32(uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b, 4);
    }

    void u64(uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b, 8);
    }

    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void f64s(const std::vector<double>& vs) {
        for (double v : vs) f64(v);
    }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void bytes(const std::vector<char>& b) {
        out_.write(b.data(), static_cast<std::streamsize>(b.size()));
    }

    void close() {
        out_.close();
        if (!out_) raise(ErrorCategory::Io, "write failure on '" + path_ + "'");
    }

  private:
    std::string path_;
    std::ofstream out_;
};

class BinReader {
  public:
    explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) raise(ErrorCategory::Io, "cannot open '" + path + "' for reading");
    }

    void magic(const char* tag) {
        const size_t n = std::strlen(tag);
        std::string got(n, '\0');
        in_.read(got.data(), static_cast<std::streamsize>(n));
        if (!in_ || got != tag)
            raise(ErrorCategory::Io, "'" + path_ + "' is not a " + tag + " file");
    }

    uint8_t u8() {
        int c = in_.get();
        if (c == EOF) fail();
        return static_cast<uint8_t>(c);
    }

    uint32_t u32() {
        char b[4];
        in_.read(b, 4);
        if (!in_) fail();
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(b[i])) << (8 * i);
        return v;
    }

    uint64_t u64() {
        char b[8];
        in_.read(b, 8);
        if (!in_) fail();
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(b[i])) << (8 * i);
        return v;
    }

    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::vector<double> f64s(size_t n) {
        std::vector<double> vs(n);
        for (auto& v : vs) v = f64();
        return vs;
    }

    std::string str() {
        uint32_t n = u32();
        std::string s(n, '\0');
        in_.read(s.data(), n);
        if (!in_) fail();
        return s;
    }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

  private:
    [[noreturn]] void fail() { raise(ErrorCategory::Io, "unexpected end of '" + path_ + "'"); }

    std::string path_;
    std::ifstream in_;
};

}  // namespace dmuq
