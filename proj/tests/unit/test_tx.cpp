#include "doctest.h"
#include "test_util.hpp"

#include <thread>

using namespace pgl;
using testutil::small_params;

TEST_CASE("empty transaction writes zero durable bytes") {
    auto pool = Pool::create_simulated(small_params());
    auto& sim = dynamic_cast<SimStore&>(pool->store());
    std::uint64_t before = sim.mutation_count();
    TxScope tx(*pool);
    tx.commit();
    CHECK(sim.mutation_count() == before);
    CHECK(pool->counters().commits == 0); // read-only commits are free
}

TEST_CASE("nested begin shares the top-level context") {
    auto pool = Pool::create_simulated(small_params());
    ObjectRef r;
    pgl_tx_begin(*pool);
    r = pgl_tx_alloc(64, 1);
    pgl_tx_begin(*pool); // depth 2
    auto* p = pgl_tx_add_range(r, 0, 8);
    std::uint64_t v = 5;
    std::memcpy(p, &v, 8);
    pgl_tx_commit(); // nested: defers
    pgl_tx_end();
    pgl_tx_commit(); // top: commits everything
    pgl_tx_end();
    CHECK(pool->locate_place(r).has_value());
    const std::byte* q = pgl_get(*pool, r);
    std::uint64_t got;
    std::memcpy(&got, q, 8);
    CHECK(got == 5);
}

TEST_CASE("abort in a nested scope aborts the whole transaction") {
    auto pool = Pool::create_simulated(small_params());
    pgl_tx_begin(*pool);
    ObjectRef r = pgl_tx_alloc(64, 1);
    pgl_tx_begin(*pool);
    pgl_tx_abort();
    pgl_tx_end();
    // The outer context is aborted too; operations fail.
    CHECK_THROWS_AS(pgl_tx_alloc(64, 1), tx_aborted);
    CHECK_THROWS_AS(pgl_tx_commit(), tx_aborted);
    pgl_tx_end();
    CHECK(!pool->locate_place(r).has_value());
}

TEST_CASE("alloc then abort leaves no live object") {
    auto pool = Pool::create_simulated(small_params());
    ObjectRef r;
    {
        TxScope tx(*pool);
        r = pgl_tx_alloc(128, 3);
        tx.abort();
    }
    CHECK(!pool->locate_place(r).has_value());
    // The same slot is immediately reusable.
    TxScope tx(*pool);
    ObjectRef r2 = pgl_tx_alloc(128, 3);
    CHECK(r2.offset == r.offset);
    tx.commit();
}

TEST_CASE("free then abort keeps the object live") {
    auto pool = Pool::create_simulated(small_params());
    ObjectRef r;
    {
        TxScope tx(*pool);
        r = pgl_tx_alloc(64, 1);
        tx.commit();
    }
    {
        TxScope tx(*pool);
        pgl_tx_free(r);
        tx.abort();
    }
    CHECK(pool->locate_place(r).has_value());
    CHECK(pool->recovery().check().ok());
}

TEST_CASE("alloc and free in one transaction cancel out") {
    auto pool = Pool::create_simulated(small_params());
    auto& sim = dynamic_cast<SimStore&>(pool->store());
    std::uint64_t before = sim.mutation_count();
    TxScope tx(*pool);
    ObjectRef r = pgl_tx_alloc(64, 1);
    pgl_tx_free(r);
    tx.commit();
    CHECK(sim.mutation_count() == before); // net nothing: read-only commit
    CHECK(!pool->locate_place(r).has_value());
}

TEST_CASE("alloc + link in one transaction is all-or-nothing (committed case)") {
    auto pool = Pool::create_simulated(small_params());
    // A list head holding a ref, plus a node: both become durable together.
    ObjectRef head = pool->root(16, 1);
    TxScope tx(*pool);
    ObjectRef node = pgl_tx_alloc(24, 2);
    auto* np = pgl_tx_add_range(node, 0, 8);
    std::uint64_t v = 77;
    std::memcpy(np, &v, 8);
    auto* hp = pgl_tx_add_range(head, 0, 16);
    std::memcpy(hp, &node, sizeof(node));
    tx.commit();

    auto reopened = Pool::open_from_store(pool->release_store());
    const std::byte* h = pgl_get(*reopened, reopened->root());
    ObjectRef linked;
    std::memcpy(&linked, h, 16);
    CHECK(linked.offset == node.offset);
    const std::byte* n = pgl_get(*reopened, ObjectRef{reopened->uuid_lo(), linked.offset});
    std::uint64_t got;
    std::memcpy(&got, n, 8);
    CHECK(got == 77);
}

TEST_CASE("single-object flow: open, modify, commit") {
    auto pool = Pool::create_simulated(small_params());
    ObjectRef r;
    {
        TxScope tx(*pool);
        r = pgl_tx_alloc(64, 1);
        tx.commit();
    }
    auto& c = pool->counters();
    std::uint64_t entries_before = c.log_entries;
    std::uint64_t deltas_before = c.parity_deltas;

    std::byte* obj = pgl_open(*pool, r);
    std::uint64_t v = 0x12345678;
    std::memcpy(obj, &v, 8);
    pgl_commit(*pool, obj);

    // One 8-byte data range plus the checksum field, one delta each.
    CHECK(c.log_entries - entries_before == 2);
    CHECK(c.parity_deltas - deltas_before == 2);
    const std::byte* p = pgl_get(*pool, r);
    std::uint64_t got;
    std::memcpy(&got, p, 8);
    CHECK(got == 0x12345678u);
    CHECK(pool->recovery().check().ok());
}

TEST_CASE("pgl_commit with zero changed bytes writes nothing") {
    auto pool = Pool::create_simulated(small_params());
    ObjectRef r;
    {
        TxScope tx(*pool);
        r = pgl_tx_alloc(64, 1);
        tx.commit();
    }
    auto& sim = dynamic_cast<SimStore&>(pool->store());
    std::uint64_t before = sim.mutation_count();
    std::byte* obj = pgl_open(*pool, r);
    pgl_commit(*pool, obj);
    CHECK(sim.mutation_count() == before);
}

TEST_CASE("pgl_open buffers larger-than-8-byte updates atomically") {
    auto pool = Pool::create_simulated(small_params());
    ObjectRef r;
    {
        TxScope tx(*pool);
        r = pgl_tx_alloc(256, 1);
        tx.commit();
    }
    std::byte* obj = pgl_open(*pool, r);
    std::memset(obj, 0x3C, 256);
    pgl_commit(*pool, obj);
    const std::byte* p = pgl_get(*pool, r);
    for (int i = 0; i < 256; ++i)
        CHECK(p[i] == std::byte{0x3C});
    CHECK(pool->recovery().check().ok());
}

TEST_CASE("pgl_discard drops a standalone buffer without writes") {
    auto pool = Pool::create_simulated(small_params());
    ObjectRef r;
    {
        TxScope tx(*pool);
        r = pgl_tx_alloc(64, 1);
        tx.commit();
    }
    std::byte* obj = pgl_open(*pool, r);
    std::memset(obj, 0x11, 64);
    pgl_discard(*pool, obj);
    const std::byte* p = pgl_get(*pool, r);
    CHECK(p[0] == std::byte{0});
}

TEST_CASE("concurrent transactions on different threads are independent") {
    auto pool = Pool::create_simulated(small_params());
    constexpr int kThreads = 4, kOps = 50;
    std::vector<std::thread> threads;
    std::vector<std::vector<ObjectRef>> made(kThreads);
    for (int t = 0; t < kThreads; ++t) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < kOps; ++i) {
                TxScope tx(*pool);
                ObjectRef r = pgl_tx_alloc(64 + 64 * t, 1);
                auto* p = pgl_tx_add_range(r, 0, 8);
                std::uint64_t v = (std::uint64_t{static_cast<std::uint64_t>(t)} << 32) | i;
                std::memcpy(p, &v, 8);
                tx.commit();
                made[t].push_back(r);
            }
        });
    }
    for (auto& th : threads)
        th.join();
    for (int t = 0; t < kThreads; ++t) {
        for (int i = 0; i < kOps; ++i) {
            const std::byte* p = pgl_get(*pool, made[t][i]);
            std::uint64_t v;
            std::memcpy(&v, p, 8);
            CHECK(v == ((std::uint64_t{static_cast<std::uint64_t>(t)} << 32) | i));
        }
    }
    CHECK(pool->recovery().check().ok());
    CHECK(pool->parity_check_zone(0).empty());
}

TEST_CASE("post-commit state: parity clean and checksums valid after a workload") {
    auto pool = Pool::create_simulated(small_params());
    std::mt19937_64 rng(99);
    std::vector<ObjectRef> live;
    for (int i = 0; i < 200; ++i) {
        TxScope tx(*pool);
        int pick = static_cast<int>(rng() % 3);
        if (pick == 0 || live.empty()) {
            live.push_back(pgl_tx_alloc(1 + rng() % 500, 1));
        } else if (pick == 1) {
            ObjectRef r = live[rng() % live.size()];
            std::uint64_t cap = pool->locate_place(r)->payload_cap;
            std::uint64_t off = rng() % cap;
            std::uint64_t len = 1 + rng() % (cap - off);
            auto* p = pgl_tx_add_range(r, off, len);
            for (std::uint64_t j = 0; j < len; ++j)
                p[j] = static_cast<std::byte>(rng());
        } else {
            std::size_t k = rng() % live.size();
            pgl_tx_free(live[k]);
            live.erase(live.begin() + k);
        }
        tx.commit();
    }
    auto rep = pool->recovery().check();
    CHECK(rep.ok());
    CHECK(rep.objects_scanned == live.size() + 0);
    CHECK(pool->parity_check_zone(0).empty());
}

TEST_CASE("log overflow: transactions larger than a slot go through extents") {
    auto pool = Pool::create_simulated(small_params());
    std::uint64_t big = 256 * 1024; // far beyond the 64 KiB slot
    TxScope tx(*pool);
    ObjectRef r = pgl_tx_alloc(big, 7);
    auto* p = pgl_tx_add_range(r, 0, big);
    std::memset(p, 0x5D, big);
    tx.commit();

    const std::byte* q = pgl_get(*pool, r);
    CHECK(q[0] == std::byte{0x5D});
    CHECK(q[big - 1] == std::byte{0x5D});
    // The extent was released and parity holds with no exclusions.
    CHECK(pool->logmgr().claimed_ranges().empty());
    CHECK(pool->parity_check_zone(0).empty());
    CHECK(pool->recovery().check().ok());
}

TEST_CASE("vulnerable-byte accounting by detection mode") {
    auto params = small_params();
    SUBCASE("default mode counts unverified reads") {
        auto pool = Pool::create_simulated(params);
        ObjectRef r;
        {
            TxScope tx(*pool);
            r = pgl_tx_alloc(100, 1);
            tx.commit();
        }
        CHECK(pool->counters().vulnerable_total == 0);
        (void)pgl_get(*pool, r);
        CHECK(pool->counters().vulnerable_total == 128 + 16); // slot + header
    }
    SUBCASE("conservative mode verifies every access and counts nothing") {
        PoolOptions opts;
        opts.detect = DetectMode::Conservative;
        auto pool = Pool::create_simulated(params, opts);
        ObjectRef r;
        {
            TxScope tx(*pool);
            r = pgl_tx_alloc(100, 1);
            tx.commit();
        }
        (void)pgl_get(*pool, r);
        CHECK(pool->counters().vulnerable_total == 0);

        // A scribble on the object is detected on access and repaired.
        pool->recovery().inject_scribble(r.offset + 16, 40, 1234);
        const std::byte* p = pgl_get(*pool, r);
        CHECK(p != nullptr);
        CHECK(pool->recovery().check().ok());
    }
}
