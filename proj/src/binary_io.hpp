#pragma once

// Little-endian byte encoding shared by the checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uadct/error.hpp"

namespace uadct::detail {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class ByteWriter {
public:
    void raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    void text(std::string_view s) { raw(s.data(), s.size()); }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void f32s(std::span<const float> v) { raw(v.data(), v.size() * sizeof(float)); }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

    void raw(void* dst, std::size_t n, const char* what) {
        if (remaining() < n) {
            throw FormatError(std::string("truncated input while reading ") + what, pos_);
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    void expect(std::string_view magic, const char* what) {
        const std::size_t at = pos_;
        std::string got(magic.size(), '\0');
        raw(got.data(), got.size(), what);
        if (got != magic) {
            throw FormatError(std::string("bad ") + what, at);
        }
    }
    bool peek(std::string_view magic) const noexcept {
        return remaining() >= magic.size() &&
               std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) == 0;
    }
    std::string text(std::size_t n, const char* what) {
        std::string s(n, '\0');
        raw(s.data(), n, what);
        return s;
    }
    template <typename T>
    T scalar(const char* what) {
        T v{};
        raw(&v, sizeof(T), what);
        return v;
    }
    std::uint8_t u8(const char* what) { return scalar<std::uint8_t>(what); }
    std::uint16_t u16(const char* what) { return scalar<std::uint16_t>(what); }
    std::uint32_t u32(const char* what) { return scalar<std::uint32_t>(what); }
    std::uint64_t u64(const char* what) { return scalar<std::uint64_t>(what); }
    float f32(const char* what) { return scalar<float>(what); }
    double f64(const char* what) { return scalar<double>(what); }
    void f32s(std::span<float> dst, const char* what) { raw(dst.data(), dst.size() * sizeof(float), what); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace uadct::detail
