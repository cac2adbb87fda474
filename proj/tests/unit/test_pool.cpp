#include "doctest.h"
#include "test_util.hpp"

#include <filesystem>
#include <thread>

using namespace pgl;
using testutil::small_params;

TEST_CASE("fresh pool: headers valid, parity consistent, check passes") {
    auto pool = Pool::create_simulated(small_params());
    CHECK(pool->root().is_null());
    for (std::uint32_t z = 0; z < pool->zone_count(); ++z)
        CHECK(pool->parity_check_zone(z).empty());
    auto rep = pool->recovery().check();
    CHECK(rep.ok());
    CHECK(rep.objects_scanned == 0);
}

TEST_CASE("file pool: create, reopen, bytes survive") {
    auto path = std::filesystem::temp_directory_path() / "pgl_pool_test.pool";
    std::filesystem::remove(path);
    std::uint64_t uuid;
    ObjectRef ref;
    {
        auto pool = Pool::create(path.string(), small_params());
        uuid = pool->uuid_lo();
        TxScope tx(*pool);
        ref = pgl_tx_alloc(100, 5);
        auto* p = pgl_tx_add_range(ref, 0, 8);
        std::uint64_t v = 0xfeedface;
        std::memcpy(p, &v, 8);
        tx.commit();
    }
    {
        auto pool = Pool::open(path.string());
        CHECK(pool->uuid_lo() == uuid);
        const std::byte* p = pgl_get(*pool, ObjectRef{uuid, ref.offset});
        std::uint64_t v;
        std::memcpy(&v, p, 8);
        CHECK(v == 0xfeedfaceu);
        CHECK(pool->recovery().check().ok());
    }
    std::filesystem::remove(path);
}

TEST_CASE("header corruption: replica repairs the primary on open") {
    auto pool = Pool::create_simulated(small_params());
    auto ref = pool->root(64, 1);
    auto store = pool->release_store();

    // Corrupt one byte of the primary header.
    std::byte b = *store->read_ptr(8, 1) ^ std::byte{0xFF};
    store->write(8, {&b, 1});

    auto reopened = Pool::open_from_store(std::move(store));
    CHECK(reopened->root() == ref);
    // Primary was rewritten from the replica.
    auto h = layout::read_struct<layout::PoolHeader>(reopened->store(), 0);
    CHECK(h.header_checksum ==
          struct_checksum(layout::struct_bytes(h), layout::kHeaderChecksumOff));
}

TEST_CASE("both header copies corrupt: unrecoverable") {
    auto pool = Pool::create_simulated(small_params());
    auto store = pool->release_store();
    std::byte junk{0x5A};
    store->write(8, {&junk, 1});
    store->write(4096 + 8, {&junk, 1});
    CHECK_THROWS_AS(Pool::open_from_store(std::move(store)), corruption_error);
}

TEST_CASE("root object is created once and persists") {
    auto pool = Pool::create_simulated(small_params());
    auto r1 = pool->root(64, 1);
    auto r2 = pool->root(64, 1);
    CHECK(r1 == r2);
    CHECK(!r1.is_null());
    auto place = pool->locate_place(r1);
    REQUIRE(place.has_value());
    CHECK(place->payload_cap == 64);

    auto reopened = Pool::open_from_store(pool->release_store());
    CHECK(reopened->root() == r1);
}

TEST_CASE("freeze blocks new transactions until thaw (block policy)") {
    auto pool = Pool::create_simulated(small_params());
    pool->freeze();
    std::atomic<bool> started{false}, committed{false};
    std::thread t([&] {
        started = true;
        TxScope tx(*pool); // blocks in tx_enter
        auto ref = pgl_tx_alloc(32, 1);
        (void)ref;
        tx.commit();
        committed = true;
    });
    while (!started)
        std::this_thread::yield();
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(!committed);
    pool->thaw();
    t.join();
    CHECK(committed);
}

TEST_CASE("freeze waits for in-flight transactions to finish") {
    auto pool = Pool::create_simulated(small_params());
    std::atomic<bool> in_tx{false}, release{false}, frozen{false};
    std::thread worker([&] {
        TxScope tx(*pool);
        auto ref = pgl_tx_alloc(32, 1);
        (void)ref;
        in_tx = true;
        while (!release)
            std::this_thread::yield();
        tx.commit();
    });
    while (!in_tx)
        std::this_thread::yield();
    std::thread freezer([&] {
        pool->freeze();
        frozen = true;
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(!frozen); // still waiting on the worker
    release = true;
    worker.join();
    freezer.join();
    CHECK(frozen);
    pool->thaw();
}

TEST_CASE("tx begin under freeze fails with the fail policy") {
    PoolOptions opts;
    opts.freeze_policy = FreezePolicy::Fail;
    auto pool = Pool::create_simulated(small_params(), opts);
    pool->freeze();
    CHECK_THROWS_AS(pgl_tx_begin(*pool), frozen_error);
    pool->thaw();
    TxScope tx(*pool); // works after thaw
    tx.abort();
}

TEST_CASE("obj_locate validates refs") {
    auto pool = Pool::create_simulated(small_params());
    CHECK(pool->obj_locate(kNullRef) == nullptr);
    CHECK_THROWS_AS(pool->obj_locate(ObjectRef{pool->uuid_lo() + 1, 4096}), usage_error);
    CHECK_THROWS_AS(pool->obj_locate(ObjectRef{pool->uuid_lo(), 64}), bounds_error);
    // Parity row address
    const auto& g = pool->geometry();
    std::uint64_t parity_addr = g.parity_off(0) + 16;
    CHECK_THROWS_AS(pool->obj_locate(ObjectRef{pool->uuid_lo(), parity_addr}), bounds_error);
    // A data-row address is fine (liveness is not checked here).
    std::uint64_t data_addr = g.zone_off(0) + g.cm_bytes;
    CHECK(pool->obj_locate(ObjectRef{pool->uuid_lo(), data_addr}) != nullptr);
}

TEST_CASE("create reports the zero-fill cost") {
    auto path = std::filesystem::temp_directory_path() / "pgl_pool_zero.pool";
    std::filesystem::remove(path);
    auto pool = Pool::create(path.string(), small_params());
    // At desk scale this is fast; the measurement just has to exist.
    CHECK(pool->create_zero_fill_ms() < 60000);
    pool.reset();
    std::filesystem::remove(path);
}
