#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "qbh/error.hpp"

// Little-endian helpers shared by the CHFM / CHFP / CHTE / CHIX formats.

namespace qbh::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
public:
    void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }

    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }

    template <typename T>
    void put_array(const T* data, std::size_t n) {
        const auto* p = reinterpret_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n * sizeof(T));
    }

    const std::vector<char>& bytes() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open for writing: " + path);
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw Error("write failed: " + path);
    }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

    static Reader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open: " + path);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(bytes));
    }

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(buf_.data() + pos_, m.data(), m.size()) != 0)
            throw Error("bad magic, expected " + std::string(m));
        pos_ += m.size();
    }

    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    template <typename T>
    void get_array(T* out, std::size_t n) {
        need(n * sizeof(T));
        std::memcpy(out, buf_.data() + pos_, n * sizeof(T));
        pos_ += n * sizeof(T);
    }

    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw Error("truncated binary file");
    }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

} // namespace qbh::io
