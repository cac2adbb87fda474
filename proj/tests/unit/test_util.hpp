#pragma once

#include "pgl/pgl.hpp"

#include <cstring>
#include <random>
#include <vector>

namespace testutil {

/// Independent Adler32 oracle: the plain per-byte definition, reduced at
/// every step. Kept separate from the library implementation on purpose.
inline std::uint32_t ref_adler32(std::span<const std::byte> data) {
    std::uint32_t a = 1, b = 0;
    for (std::byte x : data) {
        a = (a + static_cast<std::uint32_t>(x)) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

inline std::vector<std::byte> random_bytes(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::byte> v(n);
    for (auto& b : v)
        b = static_cast<std::byte>(rng());
    return v;
}

inline std::span<const std::byte> bytes_of(const void* p, std::size_t n) {
    return {static_cast<const std::byte*>(p), n};
}

/// Small simulated pool geometry used across the unit tests.
inline pgl::layout::CreateParams small_params() {
    pgl::layout::CreateParams p;
    p.pool_size = 8ull << 20; // 8 MiB
    p.rows_per_zone = 8;
    p.chunk_size = 16384;
    p.zone_count = 1;
    return p;
}

/// Brute-force parity oracle over one zone of a pool: XOR of the data rows
/// per column, with excluded pool ranges treated as zero.
inline std::vector<std::byte> oracle_parity(const pgl::PersistentStore& store,
                                            const pgl::layout::PoolGeometry& g,
                                            std::uint32_t zone,
                                            std::span<const pgl::Range> excluded = {}) {
    std::vector<std::byte> par(g.hdr.row_size, std::byte{0});
    for (std::uint32_t r = 0; r < g.data_rows; ++r) {
        std::uint64_t row_off = g.zone_off(zone) + std::uint64_t{r} * g.hdr.row_size;
        const std::byte* src = store.read_ptr(row_off, g.hdr.row_size);
        for (std::uint64_t i = 0; i < g.hdr.row_size; ++i) {
            bool skip = false;
            for (const pgl::Range& e : excluded)
                if (e.contains(row_off + i))
                    skip = true;
            if (!skip)
                par[i] ^= src[i];
        }
    }
    return par;
}

inline std::vector<std::byte> stored_parity(const pgl::PersistentStore& store,
                                            const pgl::layout::PoolGeometry& g,
                                            std::uint32_t zone) {
    const std::byte* p = store.read_ptr(g.parity_off(zone), g.hdr.row_size);
    return {p, p + g.hdr.row_size};
}

} // namespace testutil
