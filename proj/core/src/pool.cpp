/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "pgl/pool.hpp"

#include "pgl/checksum.hpp"
#include "pgl/errors.hpp"
#include "pgl/recovery.hpp"
#include "pgl/tx.hpp"

#include <chrono>
#include <cstring>
#include <random>

#include <sys/stat.h>

namespace pgl {

using namespace layout;

namespace {

bool header_valid(const PoolHeader& h) {
    if (h.magic != kMagic || h.version != kVersion)
        return false;
    return h.header_checksum == struct_checksum(struct_bytes(h), kHeaderChecksumOff);
}

PoolHeader sealed(PoolHeader h) {
    h.header_checksum = struct_checksum(struct_bytes(h), kHeaderChecksumOff);
    return h;
}

std::uint64_t random_u64() {
    std::random_device rd;
    return (std::uint64_t{rd()} << 32) ^ rd();
}

} // namespace

Pool::Pool(std::unique_ptr<PersistentStore> store, PoolOptions opts, std::string path)
    : store_(std::move(store)), opts_(opts), path_(std::move(path)) {}

Pool::~Pool() {
    if (recovery_)
        recovery_->unregister_interceptor();
}

std::unique_ptr<Pool> Pool::create(const std::string& path, const CreateParams& params,
                                   PoolOptions opts) {
    PoolGeometry g = design_pool(params, random_u64(), random_u64());
    auto t0 = std::chrono::steady_clock::now();
    auto store = map_pool(path, g.hdr.pool_size, /*create=*/true);
    auto t1 = std::chrono::steady_clock::now();
    auto pool = std::unique_ptr<Pool>(new Pool(std::move(store), opts, path));
    pool->zero_fill_ms_ = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
    pool->init_fresh(g);
    return pool;
}

std::unique_ptr<Pool> Pool::create_simulated(const CreateParams& params, PoolOptions opts) {
    PoolGeometry g = design_pool(params, random_u64(), random_u64());
    auto store = std::make_unique<SimStore>(g.hdr.pool_size);
    auto pool = std::unique_ptr<Pool>(new Pool(std::move(store), opts, ""));
    pool->init_fresh(g);
    return pool;
}

std::unique_ptr<Pool> Pool::open(const std::string& path, PoolOptions opts) {
    struct stat st{};
    if (::stat(path.c_str(), &st) != 0)
        throw io_error("pool file not found: " + path);
    std::uint64_t len = static_cast<std::uint64_t>(st.st_size);
    if (len % kPageSize != 0)
        throw layout_error("pool file size is not page-aligned: " + path);
    auto store = map_pool(path, len, /*create=*/false);
    auto pool = std::unique_ptr<Pool>(new Pool(std::move(store), opts, path));
    pool->load_existing();
    return pool;
}

std::unique_ptr<Pool> Pool::open_from_store(std::unique_ptr<PersistentStore> store,
                                            PoolOptions opts) {
    auto pool = std::unique_ptr<Pool>(new Pool(std::move(store), opts, ""));
    pool->load_existing();
    return pool;
}

void Pool::init_fresh(const PoolGeometry& g) {
    geom_ = g;
    PoolHeader h = sealed(g.hdr);
    geom_.hdr = h;
    write_struct(*store_, kHeaderOff, h);
    store_->persist(kHeaderOff, sizeof(h));
    write_struct(*store_, kHeaderReplicaOff, h);
    store_->persist(kHeaderReplicaOff, sizeof(h));

    for (std::uint32_t z = 0; z < h.zone_count; ++z) {
        ZoneMetaRec zm{};
        zm.zone_id = z;
        zm.rows = h.rows_per_zone;
        zm.row_size = h.row_size;
        zm.zone_off = geom_.zone_off(z);
        zm.chunk_size = h.chunk_size;
        zm.chunk_count = geom_.chunk_count;
        zm.cm_chunks = geom_.cm_chunks;
        zm.meta_checksum = struct_checksum(struct_bytes(zm), kZoneMetaChecksumOff);
        write_struct(*store_, h.zone_meta_off + z * sizeof(ZoneMetaRec), zm);
        write_struct(*store_, h.zone_meta_replica_off + z * sizeof(ZoneMetaRec), zm);
    }
    store_->persist(h.zone_meta_off, h.zone_count * sizeof(ZoneMetaRec));
    store_->persist(h.zone_meta_replica_off, h.zone_count * sizeof(ZoneMetaRec));

    BadPageBlock bp{};
    bp.checksum = struct_checksum(struct_bytes(bp), kBadPageChecksumOff);
    write_struct(*store_, h.badpage_off, bp);
    write_struct(*store_, h.badpage_replica_off, bp);
    store_->persist(h.badpage_off, sizeof(bp));
    store_->persist(h.badpage_replica_off, sizeof(bp));

    build_components();

    // Chunk-metadata arrays live inside data rows; bring parity in line
    // with their freshly written bytes (everything else is still zero, so
    // the XOR invariant holds trivially elsewhere).
    for (std::uint32_t z = 0; z < h.zone_count; ++z) {
        init_zone_chunk_meta(*store_, geom_, z);
        std::uint64_t cols = std::min<std::uint64_t>(geom_.cm_bytes, h.row_size);
        parity_[z]->recompute(0, cols, {});
        zones_[z]->load();
    }
}

void Pool::load_existing() {
    PoolHeader primary = read_struct<PoolHeader>(*store_, kHeaderOff);
    PoolHeader replica = read_struct<PoolHeader>(*store_, kHeaderReplicaOff);
    bool p_ok = header_valid(primary);
    bool r_ok = header_valid(replica);
    if (!p_ok && !r_ok)
        throw corruption_error("unrecoverable pool: both header copies invalid");
    if (!p_ok) {
        write_struct(*store_, kHeaderOff, replica);
        store_->persist(kHeaderOff, sizeof(replica));
        primary = replica;
    } else if (!r_ok) {
        write_struct(*store_, kHeaderReplicaOff, primary);
        store_->persist(kHeaderReplicaOff, sizeof(primary));
    }
    if (primary.pool_size > store_->length())
        throw layout_error("pool file truncated: header claims more bytes than present");
    geom_ = geometry_from_header(primary);

    validate_metadata_blocks();
    build_components();

    recovery_->crash_recover();
    recovery_->validate_chunk_meta();
    for (auto& z : zones_)
        z->load();
    recovery_->replay_bad_pages(); // needs the allocator index for verification
    if (opts_.media_interceptor)
        recovery_->register_interceptor();
}

void Pool::validate_metadata_blocks() {
    const PoolHeader& h = geom_.hdr;
    for (std::uint32_t z = 0; z < h.zone_count; ++z) {
        std::uint64_t off = h.zone_meta_off + z * sizeof(ZoneMetaRec);
        std::uint64_t roff = h.zone_meta_replica_off + z * sizeof(ZoneMetaRec);
        auto zm = read_struct<ZoneMetaRec>(*store_, off);
        auto zr = read_struct<ZoneMetaRec>(*store_, roff);
        bool ok = zm.meta_checksum == struct_checksum(struct_bytes(zm), kZoneMetaChecksumOff);
        bool rok = zr.meta_checksum == struct_checksum(struct_bytes(zr), kZoneMetaChecksumOff);
        if (!ok && !rok)
            throw corruption_error("zone metadata and replica both invalid for zone " +
                                   std::to_string(z));
        if (!ok) {
            write_struct(*store_, off, zr);
            store_->persist(off, sizeof(zr));
        } else if (!rok) {
            write_struct(*store_, roff, zm);
            store_->persist(roff, sizeof(zm));
        }
    }
    auto bp = read_struct<BadPageBlock>(*store_, h.badpage_off);
    auto br = read_struct<BadPageBlock>(*store_, h.badpage_replica_off);
    bool ok = bp.checksum == struct_checksum(struct_bytes(bp), kBadPageChecksumOff);
    bool rok = br.checksum == struct_checksum(struct_bytes(br), kBadPageChecksumOff);
    if (!ok && !rok)
        throw corruption_error("bad-page record and replica both invalid");
    if (!ok) {
        write_struct(*store_, h.badpage_off, br);
        store_->persist(h.badpage_off, sizeof(br));
    } else if (!rok) {
        write_struct(*store_, h.badpage_replica_off, bp);
        store_->persist(h.badpage_replica_off, sizeof(bp));
    }
}

void Pool::build_components() {
    zones_.clear();
    parity_.clear();
    for (std::uint32_t z = 0; z < geom_.hdr.zone_count; ++z) {
        zones_.push_back(std::make_unique<ZoneAllocator>(*store_, geom_, z));
        ParityGeometry pg;
        pg.zone_off = geom_.zone_off(z);
        pg.row_size = geom_.hdr.row_size;
        pg.data_rows = geom_.data_rows;
        pg.lock_granule = opts_.parity_lock_granule;
        parity_.push_back(
            std::make_unique<ParityEngine>(*store_, pg, opts_.parity_atomic_threshold));
    }
    logmgr_ = std::make_unique<TxLogManager>(*this);
    recovery_ = std::make_unique<RecoveryManager>(*this);
}

const std::byte* Pool::obj_locate(ObjectRef ref) const {
    if (ref.is_null())
        return nullptr;
    if (ref.pool_uuid_lo != uuid_lo())
        throw usage_error("object ref belongs to a different pool");
    if (!geom_.in_zones(ref.offset))
        throw bounds_error("object ref outside the pool's zones");
    if (geom_.row_of(ref.offset) >= geom_.data_rows)
        throw bounds_error("object ref points into a parity row");
    return store_->read_ptr(ref.offset, kObjHeaderSize);
}

std::optional<ObjectPlace> Pool::locate_place(ObjectRef ref) const {
    if (ref.is_null() || ref.pool_uuid_lo != uuid_lo() || !geom_.in_zones(ref.offset))
        return std::nullopt;
    std::uint32_t z = geom_.zone_of(ref.offset);
    return zones_[z]->locate_object(ref.offset);
}

ObjectRef Pool::root() const {
    std::uint64_t off = geom_.hdr.root_offset;
    return off == 0 ? kNullRef : ObjectRef{uuid_lo(), off};
}

ObjectRef Pool::root(std::uint64_t payload_size, std::uint32_t type_id) {
    std::lock_guard lk(root_mu_);
    if (geom_.hdr.root_offset != 0)
        return ObjectRef{uuid_lo(), geom_.hdr.root_offset};
    TxScope tx(*this);
    ObjectRef ref = pgl_tx_alloc(payload_size, type_id);
    tx.commit();
    set_root_offset(ref.offset);
    return ref;
}

void Pool::set_root_offset(std::uint64_t off) {
    std::lock_guard lk(header_mu_);
    geom_.hdr.root_offset = off;
    rewrite_headers();
}

void Pool::rewrite_headers() {
    PoolHeader h = sealed(geom_.hdr);
    geom_.hdr = h;
    write_struct(*store_, kHeaderOff, h);
    store_->persist(kHeaderOff, sizeof(h));
    write_struct(*store_, kHeaderReplicaOff, h);
    store_->persist(kHeaderReplicaOff, sizeof(h));
}

void Pool::freeze() {
    bool expected = false;
    if (!frozen_.compare_exchange_strong(expected, true, std::memory_order_acq_rel))
        throw usage_error("pool already frozen");
    std::uint32_t self = this_thread_in_tx(*this) ? 1 : 0;
    std::unique_lock lk(gate_mu_);
    gate_cv_.wait(lk, [&] { return active_txs_.load(std::memory_order_acquire) <= self; });
}

void Pool::thaw() {
    frozen_.store(false, std::memory_order_release);
    std::lock_guard lk(gate_mu_);
    gate_cv_.notify_all();
}

void Pool::tx_enter() {
    for (;;) {
        if (!frozen_.load(std::memory_order_acquire)) {
            active_txs_.fetch_add(1, std::memory_order_acq_rel);
            if (!frozen_.load(std::memory_order_acquire))
                return;
            // Lost the race against a freezer; back out and wait.
            active_txs_.fetch_sub(1, std::memory_order_acq_rel);
            std::lock_guard lk(gate_mu_);
            gate_cv_.notify_all();
        }
        if (opts_.freeze_policy == FreezePolicy::Fail)
            throw frozen_error("pool frozen for recovery");
        std::unique_lock lk(gate_mu_);
        gate_cv_.wait(lk, [&] { return !frozen_.load(std::memory_order_acquire); });
    }
}

void Pool::tx_exit() {
    active_txs_.fetch_sub(1, std::memory_order_acq_rel);
    if (frozen_.load(std::memory_order_acquire)) {
        std::lock_guard lk(gate_mu_);
        gate_cv_.notify_all();
    }
}

std::vector<Range> Pool::parity_check_zone(std::uint32_t z) {
    auto excluded = logmgr_->claimed_ranges();
    return parity_[z]->check(excluded);
}

std::unique_ptr<PersistentStore> Pool::release_store() {
    if (recovery_)
        recovery_->unregister_interceptor();
    zones_.clear();
    parity_.clear();
    logmgr_.reset();
    recovery_.reset();
    return std::move(store_);
}

} // namespace pgl
