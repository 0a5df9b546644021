// SHA-256, used for output-file digests in run manifests and for deriving
// per-task RNG seeds from (master seed, task index).
//
// The round constants are the fractional parts of cube/square roots of the
// first primes; they are generated once at startup instead of being typed in
// as a table. test_seeding.cpp checks the digest of "abc" against the
// published value, which pins the whole construction.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace latwalk {

namespace detail {

inline std::uint32_t rotr(std::uint32_t x, int n) {
    return (x >> n) | (x << (32 - n));
}

inline std::uint32_t frac_bits32(long double x) {
    long double frac = x - std::floor(x);
    return static_cast<std::uint32_t>(std::floor(frac * 4294967296.0L));
}

struct Sha256Tables {
    std::array<std::uint32_t, 8> h0{};
    std::array<std::uint32_t, 64> k{};

    Sha256Tables() {
        std::array<int, 64> primes{};
        int found = 0;
        for (int n = 2; found < 64; ++n) {
            bool prime = true;
            for (int d = 2; d * d <= n; ++d)
                if (n % d == 0) { prime = false; break; }
            if (prime) primes[found++] = n;
        }
        for (int i = 0; i < 8; ++i)
            h0[i] = frac_bits32(std::sqrt(static_cast<long double>(primes[i])));
        for (int i = 0; i < 64; ++i)
            k[i] = frac_bits32(std::cbrt(static_cast<long double>(primes[i])));
    }
};

inline const Sha256Tables& sha256_tables() {
    static const Sha256Tables tables;
    return tables;
}

}  // namespace detail

class Sha256 {
public:
    Sha256() : state_(detail::sha256_tables().h0) {}

    void update(const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        total_bytes_ += len;
        while (len > 0) {
            std::size_t take = std::min(len, std::size_t(64) - buffer_len_);
            std::memcpy(buffer_.data() + buffer_len_, bytes, take);
            buffer_len_ += take;
            bytes += take;
            len -= take;
            if (buffer_len_ == 64) {
                compress(buffer_.data());
                buffer_len_ = 0;
            }
        }
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    std::array<unsigned char, 32> finish() {
        std::uint64_t bit_len = total_bytes_ * 8;
        unsigned char pad = 0x80;
        update(&pad, 1);
        unsigned char zero = 0;
        while (buffer_len_ != 56) update(&zero, 1);
        unsigned char len_be[8];
        for (int i = 0; i < 8; ++i)
            len_be[i] = static_cast<unsigned char>(bit_len >> (56 - 8 * i));
        update(len_be, 8);
        std::array<unsigned char, 32> digest{};
        for (int i = 0; i < 8; ++i)
            for (int b = 0; b < 4; ++b)
                digest[4 * i + b] =
                    static_cast<unsigned char>(state_[i] >> (24 - 8 * b));
        return digest;
    }

private:
    void compress(const unsigned char* block) {
        using detail::rotr;
        const auto& k = detail::sha256_tables().k;
        std::array<std::uint32_t, 64> w{};
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(block[4 * i]) << 24) |
                   (std::uint32_t(block[4 * i + 1]) << 16) |
                   (std::uint32_t(block[4 * i + 2]) << 8) |
                   std::uint32_t(block[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        std::uint32_t a = state_[0], b = state_[1], c = state_[2], d = state_[3];
        std::uint32_t e = state_[4], f = state_[5], g = state_[6], h = state_[7];
        for (int i = 0; i < 64; ++i) {
            std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            std::uint32_t ch = (e & f) ^ (~e & g);
            std::uint32_t temp1 = h + s1 + ch + k[i] + w[i];
            std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            std::uint32_t temp2 = s0 + maj;
            h = g; g = f; f = e; e = d + temp1;
            d = c; c = b; b = a; a = temp1 + temp2;
        }
        state_[0] += a; state_[1] += b; state_[2] += c; state_[3] += d;
        state_[4] += e; state_[5] += f; state_[6] += g; state_[7] += h;
    }

    std::array<std::uint32_t, 8> state_;
    std::array<unsigned char, 64> buffer_{};
    std::size_t buffer_len_ = 0;
    std::uint64_t total_bytes_ = 0;
};

inline std::string sha256_hex(std::string_view data) {
    Sha256 hasher;
    hasher.update(data);
    auto digest = hasher.finish();
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (unsigned char byte : digest) {
        out.push_back(hex[byte >> 4]);
        out.push_back(hex[byte & 0xf]);
    }
    return out;
}

/// Seed for a parallel task: first 8 bytes of SHA-256(master_seed || index),
/// so distinct tasks get statistically unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t task_index) {
    unsigned char msg[16];
    for (int i = 0; i < 8; ++i) {
        msg[i] = static_cast<unsigned char>(master_seed >> (8 * i));
        msg[8 + i] = static_cast<unsigned char>(task_index >> (8 * i));
    }
    Sha256 hasher;
    hasher.update(msg, sizeof msg);
    auto digest = hasher.finish();
    std::uint64_t seed = 0;
    for (int i = 0; i < 8; ++i) seed |= std::uint64_t(digest[i]) << (8 * i);
    return seed;
}

}  // namespace latwalk
