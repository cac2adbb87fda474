#include "doctest.h"
#include "test_util.hpp"

#include <filesystem>
#include <set>

using namespace pgl;
using testutil::bytes_of;

namespace {

std::uint64_t u64_at(const std::vector<std::byte>& img, std::uint64_t off) {
    std::uint64_t v;
    std::memcpy(&v, img.data() + off, 8);
    return v;
}

} // namespace

TEST_CASE("map_pool creates a zero-filled file and reopens identically") {
    auto path = std::filesystem::temp_directory_path() / "pgl_store_test.pool";
    std::filesystem::remove(path);
    {
        auto s = map_pool(path.string(), 1 << 20, true);
        CHECK(s->length() == 1 << 20);
        CHECK(s->backend() == PersistentStore::Backend::FileMapped);
        const std::byte* p = s->read_ptr(0, 1 << 20);
        for (std::size_t i = 0; i < (1u << 20); i += 4096)
            CHECK(p[i] == std::byte{0});
        std::uint64_t v = 0x1122334455667788;
        s->write(4096, bytes_of(&v, 8));
        s->persist(4096, 8);
    }
    {
        auto s = map_pool(path.string(), 1 << 20, false);
        CHECK(s->read_u64(4096) == 0x1122334455667788u);
    }
    std::filesystem::remove(path);
}

TEST_CASE("map_pool rejects unaligned lengths") {
    auto path = std::filesystem::temp_directory_path() / "pgl_store_bad.pool";
    CHECK_THROWS_AS(map_pool(path.string(), 1000, true), layout_error);
    std::filesystem::remove(path);
}

TEST_CASE("sim store: persist makes bytes durable, empty persist is a no-op") {
    SimStore s(4096);
    std::uint64_t v = 42;
    s.write(0, bytes_of(&v, 8));
    s.persist(0, 8);
    s.persist(0, 0); // no-op
    auto img = s.crash_image(1);
    CHECK(u64_at(img, 0) == 42);
}

TEST_CASE("sim store: unflushed stores may or may not survive, per 8-byte unit") {
    SimStore s(4096);
    std::uint64_t v = 7;
    s.write(16, bytes_of(&v, 8));
    CHECK(s.pending_units() == std::vector<std::uint64_t>{16});
    auto keep = s.crash_image_subset(1);
    auto drop = s.crash_image_subset(0);
    CHECK(u64_at(keep, 16) == 7);
    CHECK(u64_at(drop, 16) == 0);
}

TEST_CASE("sim store: k pending units give exactly 2^k reachable images") {
    SimStore s(4096);
    constexpr int k = 10;
    for (int i = 0; i < k; ++i) {
        std::uint64_t v = 0x100 + i;
        s.write(8 * i, bytes_of(&v, 8));
    }
    REQUIRE(s.pending_units().size() == k);
    std::set<std::vector<std::byte>> images;
    for (std::uint64_t mask = 0; mask < (1u << k); ++mask) {
        auto img = s.crash_image_subset(mask);
        for (int i = 0; i < k; ++i) {
            std::uint64_t u = u64_at(img, 8 * i);
            bool kept = (mask >> i) & 1;
            CHECK(u == (kept ? 0x100u + i : 0u));
        }
        images.insert(std::move(img));
    }
    CHECK(images.size() == (1u << k));

    // Sampled crashes land inside the enumerated set.
    for (std::uint64_t seed = 0; seed < 64; ++seed)
        CHECK(images.count(s.crash_image(seed)) == 1);
}

TEST_CASE("sim store: atomic_store64 is never torn across 1000 crashes") {
    const std::uint64_t oldv = 0xAAAAAAAAAAAAAAAAull;
    const std::uint64_t newv = 0x5555555555555555ull;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        SimStore s(4096);
        s.write(128, bytes_of(&oldv, 8));
        s.persist(128, 8);
        s.atomic_store64(128, newv);
        auto img = s.crash_image(seed);
        std::uint64_t got = u64_at(img, 128);
        CHECK((got == oldv || got == newv));
    }
}

TEST_CASE("sim store: ordering - persisted A never lost when B is pending") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        SimStore s(4096);
        std::uint64_t a = 1, b = 2;
        s.write(0, bytes_of(&a, 8));
        s.persist(0, 8);
        s.write(8, bytes_of(&b, 8));
        auto img = s.crash_image(seed);
        CHECK(u64_at(img, 0) == 1); // persisted before the crash
        std::uint64_t bb = u64_at(img, 8);
        CHECK((bb == 0 || bb == 2));
    }
}

TEST_CASE("sim store: partial-unit persist flushes the containing unit") {
    SimStore s(4096);
    std::uint64_t v = ~0ull;
    s.write(0, bytes_of(&v, 8));
    s.persist(3, 1); // within the first unit
    CHECK(s.pending_units().empty());
}

TEST_CASE("sim store: xor primitives") {
    SimStore s(4096);
    std::uint64_t v = 0xF0F0F0F0F0F0F0F0ull;
    s.write(0, bytes_of(&v, 8));
    s.xor_word_atomic(0, 0x0F0F0F0F0F0F0F0Full);
    CHECK(s.read_u64(0) == ~0ull);
    std::vector<std::byte> d(8, std::byte{0xFF});
    s.xor_bytes(0, d);
    CHECK(s.read_u64(0) == 0);
}

TEST_CASE("sim store: armed crash point throws and store stays usable") {
    SimStore s(4096);
    std::uint64_t v = 9;
    s.arm_crash_after(3);
    s.write(0, bytes_of(&v, 8));  // op 1
    s.write(8, bytes_of(&v, 8));  // op 2
    bool fired = false;
    try {
        s.write(16, bytes_of(&v, 8)); // op 3: crash point
    } catch (const crash_signal&) {
        fired = true;
    }
    CHECK(fired);
    CHECK(s.read_u64(16) == 0); // the write never took effect
    s.crash(7);
    s.write(16, bytes_of(&v, 8)); // disarmed after firing
    CHECK(s.read_u64(16) == 9);
}

TEST_CASE("crash_and_recover_image requires the simulated backend") {
    auto path = std::filesystem::temp_directory_path() / "pgl_store_cri.pool";
    std::filesystem::remove(path);
    auto s = map_pool(path.string(), 4096, true);
    CHECK_THROWS_AS(crash_and_recover_image(*s, 1), usage_error);
    SimStore sim(4096);
    CHECK(crash_and_recover_image(sim, 1).size() == 4096);
    s.reset();
    std::filesystem::remove(path);
}
