#include "binary_io.hpp"

namespace emgtf::io {

namespace {

// FNV-1a over every byte moved through the stream.
std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace

Writer::Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
}

void Writer::raw(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw DataError("write failed on " + path_.string() + " at byte " + std::to_string(offset_));
    hash_ = fnv1a(hash_, data, n);
    offset_ += n;
}

void Writer::string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
}

void Writer::close() {
    out_.close();
    if (!out_) throw DataError("closing " + path_.string() + " failed");
}

Reader::Reader(const std::filesystem::path& path) : path_(path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) throw DataError("no such file: " + path.string());
    size_ = std::filesystem::file_size(path, ec);
    if (ec) throw DataError("cannot stat " + path.string());
    in_.open(path, std::ios::binary);
    if (!in_) throw DataError("cannot open " + path.string());
}

void Reader::raw(void* data, std::size_t n, const char* what) {
    if (n > remaining()) fail(std::string("truncated file while reading ") + what);
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail(std::string("truncated file while reading ") + what);
    hash_ = fnv1a(hash_, data, n);
    offset_ += n;
}

void Reader::expect_tag(const char (&magic)[5]) {
    const auto at = offset_;
    char got[4];
    raw(got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0) {
        throw FormatError(path_.string() + ": bad magic, expected \"" + std::string(magic, 4) + "\"", at);
    }
}

std::string Reader::string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    if (n > remaining()) fail(std::string("truncated file while reading ") + what);
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
}

void Reader::fail(const std::string& what) const {
    throw FormatError(path_.string() + ": " + what, offset_);
}

} // namespace emgtf::io
