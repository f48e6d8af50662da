#pragma once

// Little-endian encoding over std::iostream with byte-offset tracking.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>

#include "emgtf/error.hpp"

namespace emgtf::io {

class Writer {
public:
    explicit Writer(const std::filesystem::path& path);

    template <typename U>
        requires std::is_arithmetic_v<U>
    void put(U value) {
        using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                     std::conditional_t<sizeof(U) == 2, std::uint16_t,
                     std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
        auto bits = std::bit_cast<Bits>(value);
        unsigned char bytes[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            bytes[i] = static_cast<unsigned char>(bits & 0xFFu);
            if constexpr (sizeof(U) > 1) bits = static_cast<Bits>(bits >> 8);
        }
        raw(bytes, sizeof(U));
    }

    void raw(const void* data, std::size_t n);
    void tag(const char (&magic)[5]) { raw(magic, 4); }
    void string(const std::string& s);

    std::uint64_t offset() const noexcept { return offset_; }
    std::uint64_t checksum() const noexcept { return hash_; }
    void close();

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::uint64_t offset_ = 0;
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path);

    template <typename U>
        requires std::is_arithmetic_v<U>
    U get(const char* what) {
        using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                     std::conditional_t<sizeof(U) == 2, std::uint16_t,
                     std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
        unsigned char bytes[sizeof(U)];
        raw(bytes, sizeof(U), what);
        Bits bits = 0;
        for (std::size_t i = sizeof(U); i-- > 0;) {
            if constexpr (sizeof(U) > 1) bits = static_cast<Bits>(bits << 8);
            bits = static_cast<Bits>(bits | bytes[i]);
        }
        return std::bit_cast<U>(bits);
    }

    void raw(void* data, std::size_t n, const char* what);
    /// Reads four bytes and throws FormatError unless they equal `magic`.
    void expect_tag(const char (&magic)[5]);
    std::string string(const char* what);

    std::uint64_t offset() const noexcept { return offset_; }
    std::uint64_t checksum() const noexcept { return hash_; }
    /// Total file size in bytes.
    std::uint64_t size() const noexcept { return size_; }
    std::uint64_t remaining() const noexcept { return size_ - offset_; }
    [[noreturn]] void fail(const std::string& what) const;

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
    std::uint64_t size_ = 0;
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

} // namespace emgtf::io
