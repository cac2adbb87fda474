#include "doctest.h"
#include "test_util.hpp"

#include <thread>

using namespace pgl;
using testutil::random_bytes;

namespace {

// A bare store laid out as rows of one zone (no pool metadata): row i at
// [i*row, (i+1)*row), last row parity.
struct MiniZone {
    std::uint64_t row;
    std::uint32_t data_rows;
    SimStore store;
    ParityEngine engine;

    MiniZone(std::uint64_t row_size, std::uint32_t rows, std::uint64_t threshold = 8192,
             std::uint64_t granule = 8192)
        : row(row_size), data_rows(rows - 1),
          store(row_size * rows),
          engine(store,
                 ParityGeometry{0, row_size, rows - 1, granule},
                 threshold) {}

    void fill_random(std::mt19937_64& rng) {
        for (std::uint32_t r = 0; r < data_rows; ++r) {
            auto bytes = random_bytes(rng, row);
            store.write(std::uint64_t{r} * row, bytes);
        }
        recompute_all();
    }
    void recompute_all() { engine.recompute(0, row, {}); }

    std::vector<std::byte> parity_bytes() const {
        const std::byte* p = store.read_ptr(std::uint64_t{data_rows} * row, row);
        return {p, p + row};
    }
    std::vector<std::byte> oracle() const {
        std::vector<std::byte> acc(row, std::byte{0});
        for (std::uint32_t r = 0; r < data_rows; ++r) {
            const std::byte* src = store.read_ptr(std::uint64_t{r} * row, row);
            for (std::uint64_t i = 0; i < row; ++i)
                acc[i] ^= src[i];
        }
        return acc;
    }
};

} // namespace

TEST_CASE("delta_compute: XOR basics and a byte-wise oracle") {
    std::vector<std::byte> a(64, std::byte{0xFF});
    std::vector<std::byte> z(64, std::byte{0});
    CHECK(delta_compute(a, a) == z);
    CHECK(delta_compute(a, z) == a);

    std::mt19937_64 rng(21);
    auto x = random_bytes(rng, 1024);
    auto y = random_bytes(rng, 1024);
    auto d = delta_compute(x, y);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(d[i] == (x[i] ^ y[i]));
    CHECK_THROWS_AS(delta_compute(x, std::span<const std::byte>(y).subspan(1)), usage_error);
}

TEST_CASE("parity apply keeps the XOR invariant (both strategies)") {
    std::mt19937_64 rng(31);
    MiniZone mz(1 << 16, 4);
    mz.fill_random(rng);
    REQUIRE(mz.engine.check({}).empty());

    for (std::uint64_t len : {64ull, 4096ull, 16384ull}) { // straddles the 8K threshold
        std::uint64_t off = rng() % (mz.row * mz.data_rows - len);
        auto oldb = std::vector<std::byte>(mz.store.read_ptr(off, len),
                                           mz.store.read_ptr(off, len) + len);
        auto newb = random_bytes(rng, len);
        auto delta = delta_compute(oldb, newb);
        mz.store.write(off, newb);
        mz.engine.apply_data_delta(off, delta);
        CHECK(mz.engine.check({}).empty());
        CHECK(mz.parity_bytes() == mz.oracle());
    }
}

TEST_CASE("parity apply: zero delta leaves parity untouched") {
    std::mt19937_64 rng(33);
    MiniZone mz(1 << 14, 3);
    mz.fill_random(rng);
    auto before = mz.parity_bytes();
    std::vector<std::byte> zeros(512, std::byte{0});
    mz.engine.apply(100, zeros);
    CHECK(mz.parity_bytes() == before);
}

TEST_CASE("parity apply is an involution") {
    std::mt19937_64 rng(35);
    MiniZone mz(1 << 14, 3);
    mz.fill_random(rng);
    auto before = mz.parity_bytes();
    auto delta = random_bytes(rng, 1000);
    mz.engine.apply(123, delta); // unaligned column offset
    CHECK(mz.parity_bytes() != before);
    mz.engine.apply(123, delta);
    CHECK(mz.parity_bytes() == before);
}

TEST_CASE("parity apply commutes across interleavings") {
    std::mt19937_64 rng(37);
    MiniZone a(1 << 14, 4), b(1 << 14, 4);
    auto d1 = random_bytes(rng, 600);
    auto d2 = random_bytes(rng, 600);
    // Overlapping column ranges, applied in both orders.
    a.engine.apply(100, d1);
    a.engine.apply(400, d2);
    b.engine.apply(400, d2);
    b.engine.apply(100, d1);
    CHECK(a.parity_bytes() == b.parity_bytes());
}

TEST_CASE("parity apply from concurrent threads matches the oracle") {
    std::mt19937_64 rng(39);
    MiniZone mz(1 << 15, 5, /*threshold=*/8192, /*granule=*/4096);
    mz.fill_random(rng);

    // Pre-plan small writes to data rows, overlapping in columns.
    struct Op {
        std::uint64_t off;
        std::vector<std::byte> newb;
    };
    std::vector<std::vector<Op>> plans(4);
    for (std::size_t t = 0; t < 4; ++t) {
        for (int i = 0; i < 200; ++i) {
            std::uint64_t row = t; // one data row per thread: disjoint data
            std::uint64_t col = rng() % (mz.row - 512);
            plans[t].push_back({row * mz.row + col, random_bytes(rng, 1 + rng() % 512)});
        }
    }
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            for (const Op& op : plans[t]) {
                std::uint64_t len = op.newb.size();
                std::vector<std::byte> oldb(mz.store.read_ptr(op.off, len),
                                            mz.store.read_ptr(op.off, len) + len);
                auto delta = delta_compute(oldb, op.newb);
                mz.store.write(op.off, op.newb);
                mz.engine.apply_data_delta(op.off, delta);
            }
        });
    }
    for (auto& th : threads)
        th.join();
    CHECK(mz.parity_bytes() == mz.oracle());
}

TEST_CASE("column reconstruct restores a lost page bit-exact") {
    std::mt19937_64 rng(41);
    MiniZone mz(1 << 14, 4); // rows r0,r1,r2 + parity
    mz.fill_random(rng);

    for (std::uint32_t victim_row : {1u, 3u}) { // a data row and the parity row
        std::uint64_t page = std::uint64_t{victim_row} * mz.row + 4096;
        std::vector<std::byte> before(mz.store.read_ptr(page, 4096),
                                      mz.store.read_ptr(page, 4096) + 4096);
        mz.store.fill(page, 4096, std::byte{0}); // lose it
        mz.engine.reconstruct_member(page, 4096, {});
        std::vector<std::byte> after(mz.store.read_ptr(page, 4096),
                                     mz.store.read_ptr(page, 4096) + 4096);
        CHECK(before == after);
    }
}

TEST_CASE("check reports the exact inconsistent range") {
    std::mt19937_64 rng(43);
    MiniZone mz(1 << 14, 3);
    mz.fill_random(rng);
    REQUIRE(mz.engine.check({}).empty());

    // Flip one byte out-of-band.
    std::uint64_t off = mz.row + 777; // row 1, column 777
    std::byte b = *mz.store.read_ptr(off, 1) ^ std::byte{0x01};
    mz.store.write(off, {&b, 1});
    auto bad = mz.engine.check({});
    REQUIRE(bad.size() == 1);
    CHECK(bad[0] == Range{777, 1});
}

TEST_CASE("log-claimed ranges count as zeros") {
    std::mt19937_64 rng(45);
    MiniZone mz(1 << 14, 4);
    mz.fill_random(rng);

    // Claim a range in row 1: strip its contribution, then scribble log
    // bytes into it without touching parity.
    Range claim{mz.row + 2048, 4096};
    const std::byte* cur = mz.store.read_ptr(claim.off, claim.len);
    mz.engine.apply_data_delta(claim.off, {cur, claim.len});
    mz.store.write(claim.off, random_bytes(rng, claim.len));

    std::vector<Range> excl{claim};
    CHECK(mz.engine.check(excl).empty());

    // Reconstruct of another member substitutes zeros for the claim.
    std::uint64_t victim = 2 * mz.row + 2048; // row 2, same columns
    std::vector<std::byte> before(mz.store.read_ptr(victim, 4096),
                                  mz.store.read_ptr(victim, 4096) + 4096);
    mz.store.fill(victim, 4096, std::byte{0xEE});
    mz.engine.reconstruct_member(victim, 4096, excl);
    std::vector<std::byte> after(mz.store.read_ptr(victim, 4096),
                                 mz.store.read_ptr(victim, 4096) + 4096);
    CHECK(before == after);

    // Releasing the claim: zero the bytes, and the invariant holds with no
    // exclusions at all.
    mz.store.fill(claim.off, claim.len, std::byte{0});
    CHECK(mz.engine.check({}).empty());
}

TEST_CASE("apply_data_delta folds ranges that cross row boundaries") {
    std::mt19937_64 rng(47);
    MiniZone mz(1 << 14, 4);
    mz.fill_random(rng);

    std::uint64_t off = mz.row - 100; // spans rows 0 and 1
    std::uint64_t len = 300;
    std::vector<std::byte> oldb(mz.store.read_ptr(off, len),
                                mz.store.read_ptr(off, len) + len);
    auto newb = random_bytes(rng, len);
    mz.store.write(off, newb);
    mz.engine.apply_data_delta(off, delta_compute(oldb, newb));
    CHECK(mz.parity_bytes() == mz.oracle());
    CHECK(mz.engine.check({}).empty());
}

TEST_CASE("apply rejects out-of-column ranges") {
    MiniZone mz(1 << 14, 3);
    std::vector<std::byte> d(64, std::byte{1});
    CHECK_THROWS_AS(mz.engine.apply(mz.row - 32, d), bounds_error);
}
