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

#include "pgl/tx.hpp"

#include "pgl/checksum.hpp"
#include "pgl/errors.hpp"
#include "pgl/recovery.hpp"

#include <cassert>
#include <cstring>
#include <map>
#include <thread>

namespace pgl {

using namespace layout;

// ---------------------------------------------------------------------------
// TxLogManager

TxLogManager::TxLogManager(Pool& pool) : pool_(pool), geom_(pool.geometry()) {
    busy_.assign(geom_.hdr.slot_count, false);
    extents_.assign(geom_.hdr.slot_count, Range{});
}

int TxLogManager::acquire_slot() {
    std::unique_lock lk(mu_);
    for (;;) {
        for (std::uint32_t i = 0; i < busy_.size(); ++i) {
            if (!busy_[i]) {
                busy_[i] = true;
                return static_cast<int>(i);
            }
        }
        slot_cv_.wait(lk);
    }
}

void TxLogManager::release_slot(int slot) {
    std::lock_guard lk(mu_);
    busy_[slot] = false;
    slot_cv_.notify_one();
}

std::uint64_t TxLogManager::entry_area(int slot, bool replica) const {
    return (replica ? geom_.slot_replica_off(slot) : geom_.slot_off(slot)) + kSlotHeaderSize;
}

namespace {

// Slot header fields other than the marker; the marker (offset 0) only
// moves through atomic stores.
void write_header_fields(PersistentStore& s, std::uint64_t slot_base,
                         std::uint64_t log_bytes, std::uint64_t ov_off,
                         std::uint64_t ov_len) {
    std::uint64_t fields[3] = {log_bytes, ov_off, ov_len};
    s.write(slot_base + 8, std::span<const std::byte>(
                               reinterpret_cast<const std::byte*>(fields), 24));
    s.persist(slot_base + 8, 24);
}

} // namespace

void TxLogManager::seal(int slot, std::span<const std::byte> blob, bool replicate) {
    auto& store = pool_.store();
    if (blob.size() <= geom_.slot_capacity()) {
        store.write(entry_area(slot, false), blob);
        store.persist(entry_area(slot, false), blob.size());
        if (replicate) {
            store.write(entry_area(slot, true), blob);
            store.persist(entry_area(slot, true), blob.size());
        }
        write_header_fields(store, geom_.slot_off(slot), blob.size(), 0, 0);
        write_header_fields(store, geom_.slot_replica_off(slot), blob.size(), 0, 0);
    } else {
        // Claim an overflow extent from zone heap space: primary copy in the
        // first half, replica in the second.
        std::uint64_t need = 2 * align8(blob.size());
        std::optional<Range> ext;
        for (std::uint32_t z = 0; z < pool_.zone_count() && !ext; ++z)
            ext = pool_.zone(z).claim_extent(need);
        if (!ext)
            throw space_error("no free chunks for redo-log overflow");
        {
            std::lock_guard lk(mu_);
            extents_[slot] = *ext;
        }
        write_header_fields(store, geom_.slot_off(slot), blob.size(), ext->off, ext->len);
        write_header_fields(store, geom_.slot_replica_off(slot), blob.size(), ext->off,
                            ext->len);
        // The extent's stale content leaves parity when the claim starts;
        // its contribution is defined as zero until release.
        if (features_ge(pool_.options().features, Features::MLP)) {
            std::uint32_t z = geom_.zone_of(ext->off);
            const std::byte* cur = store.read_ptr(ext->off, ext->len);
            pool_.parity(z).apply_data_delta(ext->off, {cur, ext->len});
        }
        store.write(ext->off, blob);
        store.persist(ext->off, blob.size());
        if (replicate) {
            store.write(ext->off + ext->len / 2, blob);
            store.persist(ext->off + ext->len / 2, blob.size());
        }
    }
    store.atomic_store64(geom_.slot_off(slot), kSlotLogsComplete);
    store.persist(geom_.slot_off(slot), 8);
}

void TxLogManager::mark_done(int slot) {
    auto& store = pool_.store();
    store.atomic_store64(geom_.slot_off(slot), kSlotDone);
    store.persist(geom_.slot_off(slot), 8);
}

void TxLogManager::gc(int slot) {
    auto& store = pool_.store();
    Range ext;
    {
        std::lock_guard lk(mu_);
        ext = extents_[slot];
    }
    if (!ext.empty()) {
        // Zeroed content matches the zero parity contribution the claim
        // established, so no parity work is needed here.
        store.fill(ext.off, ext.len, std::byte{0});
        store.persist(ext.off, ext.len);
    }
    write_header_fields(store, geom_.slot_off(slot), 0, 0, 0);
    write_header_fields(store, geom_.slot_replica_off(slot), 0, 0, 0);
    store.atomic_store64(geom_.slot_off(slot), kSlotEmpty);
    store.persist(geom_.slot_off(slot), 8);
    if (!ext.empty()) {
        {
            std::lock_guard lk(mu_);
            extents_[slot] = {};
        }
        pool_.zone(geom_.zone_of(ext.off)).release_extent(ext);
    }
}

void TxLogManager::abort_cleanup(int slot) {
    auto& store = pool_.store();
    Range ext;
    {
        std::lock_guard lk(mu_);
        ext = extents_[slot];
        extents_[slot] = {};
    }
    if (!ext.empty()) {
        store.fill(ext.off, ext.len, std::byte{0});
        store.persist(ext.off, ext.len);
        if (features_ge(pool_.options().features, Features::MLP)) {
            // The claim-time parity strip may or may not have run to
            // completion; a full column recompute settles it either way.
            std::uint32_t z = geom_.zone_of(ext.off);
            auto excluded = claimed_ranges();
            std::uint64_t pos = ext.off;
            std::uint64_t end = ext.off + ext.len;
            while (pos < end) {
                std::uint64_t col = (pos - geom_.zone_off(z)) % geom_.hdr.row_size;
                std::uint64_t n = std::min(end - pos, geom_.hdr.row_size - col);
                pool_.parity(z).recompute(col, n, excluded);
                pos += n;
            }
        }
        pool_.zone(geom_.zone_of(ext.off)).release_extent(ext);
    }
    write_header_fields(store, geom_.slot_off(slot), 0, 0, 0);
    write_header_fields(store, geom_.slot_replica_off(slot), 0, 0, 0);
    store.atomic_store64(geom_.slot_off(slot), kSlotEmpty);
    store.persist(geom_.slot_off(slot), 8);
}

std::vector<Range> TxLogManager::claimed_ranges() const {
    std::lock_guard lk(mu_);
    std::vector<Range> out;
    for (const Range& r : extents_)
        if (!r.empty())
            out.push_back(r);
    return out;
}

TxLogManager::SlotImage TxLogManager::parse_slot(int slot) const {
    auto& store = pool_.store();
    SlotImage img;
    img.header = read_struct<SlotHeader>(store, geom_.slot_off(slot));
    img.marker = img.header.marker;
    if (img.marker != kSlotLogsComplete && img.marker != kSlotDone)
        return img;

    std::uint64_t n = img.header.log_bytes;
    bool overflow = img.header.overflow_off != 0 && img.header.overflow_len != 0;
    std::uint64_t prim = overflow ? img.header.overflow_off : entry_area(slot, false);
    std::uint64_t repl = overflow ? img.header.overflow_off + img.header.overflow_len / 2
                                  : entry_area(slot, true);
    std::uint64_t cap = overflow ? img.header.overflow_len / 2 : geom_.slot_capacity();
    if (n > cap) {
        img.parse_ok = false;
        return img;
    }

    auto try_parse = [&](std::uint64_t base, std::uint64_t cursor) -> std::optional<Entry> {
        std::uint64_t target = store.read_u64(base + cursor);
        std::uint64_t len = store.read_u64(base + cursor + 8);
        std::uint32_t ck = store.read_u32(base + cursor + 16);
        if (len > n - cursor - kLogEntryHeaderSize)
            return std::nullopt;
        const std::byte* head = store.read_ptr(base + cursor, 16);
        const std::byte* payload = store.read_ptr(base + cursor + kLogEntryHeaderSize, len);
        std::uint32_t sum = adler::extend(adler::kEmpty, {head, 16});
        sum = adler::extend(sum, {payload, len});
        if (sum != ck)
            return std::nullopt;
        Entry e;
        e.target = target;
        e.payload.assign(payload, payload + len);
        return e;
    };

    std::uint64_t cursor = 0;
    while (cursor + kLogEntryHeaderSize <= n) {
        auto e = try_parse(prim, cursor);
        if (!e)
            e = try_parse(repl, cursor);
        if (!e) {
            img.parse_ok = false;
            return img;
        }
        cursor += align8(kLogEntryHeaderSize + e->payload.size());
        img.entries.push_back(std::move(*e));
    }
    if (cursor != n)
        img.parse_ok = false;
    return img;
}

void TxLogManager::rebuild_claims() {
    std::lock_guard lk(mu_);
    for (std::uint32_t s = 0; s < slot_count(); ++s) {
        auto h = read_struct<SlotHeader>(pool_.store(), geom_.slot_off(s));
        if (h.overflow_off != 0 && h.overflow_len != 0)
            extents_[s] = Range{h.overflow_off, h.overflow_len};
        else
            extents_[s] = {};
    }
}

void TxLogManager::recover_finish_slot(int slot, bool parity) {
    auto& store = pool_.store();
    auto h = read_struct<SlotHeader>(store, geom_.slot_off(slot));
    if (h.marker == kSlotEmpty && !h.log_bytes && !h.overflow_off && !h.overflow_len)
        return;
    // Publish done first: should we crash past this point with the extent
    // already zeroed, reopening treats the unparseable-but-done slot as
    // garbage-collectable instead of failing replay.
    if (h.marker == kSlotLogsComplete) {
        store.atomic_store64(geom_.slot_off(slot), kSlotDone);
        store.persist(geom_.slot_off(slot), 8);
    }
    if (h.overflow_off != 0 && h.overflow_len != 0) {
        Range ext{h.overflow_off, h.overflow_len};
        store.fill(ext.off, ext.len, std::byte{0});
        store.persist(ext.off, ext.len);
        {
            std::lock_guard lk(mu_);
            extents_[slot] = {};
        }
        if (parity) {
            auto excluded = claimed_ranges();
            std::uint32_t z = geom_.zone_of(ext.off);
            std::uint64_t pos = ext.off;
            while (pos < ext.end()) {
                std::uint64_t col = (pos - geom_.zone_off(z)) % geom_.hdr.row_size;
                std::uint64_t n = std::min(ext.end() - pos, geom_.hdr.row_size - col);
                pool_.parity(z).recompute(col, n, excluded);
                pos += n;
            }
        }
    }
    write_header_fields(store, geom_.slot_off(slot), 0, 0, 0);
    write_header_fields(store, geom_.slot_replica_off(slot), 0, 0, 0);
    store.atomic_store64(geom_.slot_off(slot), kSlotEmpty);
    store.persist(geom_.slot_off(slot), 8);
}

// ---------------------------------------------------------------------------
// Thread-local transaction state

namespace {

thread_local std::unique_ptr<Transaction> tls_tx;

struct StandaloneBuf {
    Pool* pool;
    std::unique_ptr<MicroBuffer> buf;
};
thread_local std::map<const std::byte*, StandaloneBuf> tls_standalone;

Transaction* require_tx() {
    if (!tls_tx)
        throw usage_error("no active transaction on this thread");
    return tls_tx.get();
}

#ifndef NDEBUG
// The contract forbids concurrent transactions from modifying the same
// object; debug builds enforce it with an object-lock table keyed by
// modification intent (read-only opens are fine).
std::mutex dbg_mu;
std::map<std::pair<const Pool*, std::uint64_t>, std::thread::id> dbg_owners;

void dbg_acquire(const Pool* p, std::uint64_t off) {
    std::lock_guard lk(dbg_mu);
    auto [it, inserted] = dbg_owners.try_emplace({p, off}, std::this_thread::get_id());
    assert((inserted || it->second == std::this_thread::get_id()) &&
           "concurrent transactions modified the same object");
}

void dbg_release(const Pool* p, std::uint64_t off) {
    std::lock_guard lk(dbg_mu);
    auto it = dbg_owners.find({p, off});
    if (it != dbg_owners.end() && it->second == std::this_thread::get_id())
        dbg_owners.erase(it);
}
#else
void dbg_acquire(const Pool*, std::uint64_t) {}
void dbg_release(const Pool*, std::uint64_t) {}
#endif

void append_entry(std::vector<std::byte>& blob, std::uint64_t target,
                  std::span<const std::byte> payload) {
    std::size_t base = blob.size();
    blob.resize(base + align8(kLogEntryHeaderSize + payload.size()), std::byte{0});
    std::memcpy(blob.data() + base, &target, 8);
    std::uint64_t len = payload.size();
    std::memcpy(blob.data() + base + 8, &len, 8);
    std::uint32_t sum = adler::extend(adler::kEmpty, {blob.data() + base, 16});
    sum = adler::extend(sum, payload);
    std::memcpy(blob.data() + base + 16, &sum, 4);
    if (!payload.empty())
        std::memcpy(blob.data() + base + kLogEntryHeaderSize, payload.data(), payload.size());
}

} // namespace

bool this_thread_in_tx(const Pool& pool) {
    return tls_tx && &tls_tx->pool() == &pool &&
           (tls_tx->state() == Transaction::State::Active ||
            tls_tx->state() == Transaction::State::Committing);
}

bool this_thread_committing(const Pool& pool) {
    return tls_tx && &tls_tx->pool() == &pool &&
           tls_tx->state() == Transaction::State::Committing;
}

void tx_detach_thread() {
    tls_standalone.clear();
    if (tls_tx) {
        Pool& p = tls_tx->pool();
        tls_tx.reset();
        p.tx_exit();
    }
}

// ---------------------------------------------------------------------------
// Transaction

void Transaction::require_active() const {
    if (state_ == State::Aborted)
        throw tx_aborted("transaction aborted");
    if (state_ != State::Active)
        throw usage_error("transaction is not active");
}

MicroBuffer* Transaction::open_buffer(ObjectRef ref, bool verify) {
    require_active();
    if (ref.is_null()) {
        abort_internal();
        throw usage_error("cannot open the null ref");
    }
    if (ref.pool_uuid_lo != pool_.uuid_lo()) {
        abort_internal();
        throw usage_error("object ref belongs to a different pool");
    }
    if (MicroBuffer* b = buffers_.find(ref.offset))
        return b;

    auto place = pool_.locate_place(ref);
    if (!place) {
        abort_internal();
        throw usage_error("ref does not address a live object");
    }
    auto buf = std::make_unique<MicroBuffer>(ref, place->payload_cap, false);
    auto copy_in = [&] {
        pool_.store().read(ref.offset, {buf->header_ptr(),
                                        kObjHeaderSize + place->payload_cap});
    };
    copy_in();
    if (verify && features_ge(pool_.options().features, Features::MLPC)) {
        auto valid = [&] {
            auto h = buf->header();
            if (h.size != place->payload_cap + kObjHeaderSize)
                return false;
            return h.checksum == object_checksum(h.size, h.type_id,
                                                 {buf->payload_ptr(), place->payload_cap});
        };
        if (!valid()) {
            FaultEvent ev{FaultEvent::Kind::ChecksumMismatch, ref.offset,
                          kObjHeaderSize + place->payload_cap};
            auto oc = pool_.recovery().handle_fault(ev);
            copy_in();
            if (oc != RecoveryManager::Outcome::Recovered || !valid()) {
                abort_internal();
                throw corruption_error("object at offset " + std::to_string(ref.offset) +
                                       " is corrupt and unrecoverable");
            }
        }
    }
    return &buffers_.adopt(std::move(buf));
}

void Transaction::refresh_checksums() {
    buffers_.for_each([&](MicroBuffer& b) {
        if (!b.modified())
            return;
        auto h = b.header();
        if (b.allocated()) {
            h.checksum = object_checksum(h.size, h.type_id,
                                         {b.payload_ptr(), b.payload_cap()});
        } else {
            std::uint32_t sum = h.checksum;
            for (const Range& r : b.ranges()) {
                const std::byte* oldp =
                    pool_.store().read_ptr(b.ref().offset + kObjHeaderSize + r.off, r.len);
                sum = object_checksum_replace(sum, b.payload_cap(), r.off, {oldp, r.len},
                                              {b.payload_ptr() + r.off, r.len});
            }
            h.checksum = sum;
        }
        b.set_header(h);
    });
}

void Transaction::serialize_blob(std::vector<std::byte>& blob) const {
    const bool checksums = features_ge(pool_.options().features, Features::MLPC);
    const_cast<BufferIndex&>(buffers_).for_each([&](MicroBuffer& b) {
        if (!b.modified())
            return;
        if (b.allocated()) {
            append_entry(blob, b.ref().offset,
                         {b.header_ptr(), kObjHeaderSize + b.payload_cap()});
        } else {
            for (const Range& r : b.ranges())
                append_entry(blob, b.ref().offset + kObjHeaderSize + r.off,
                             {b.payload_ptr() + r.off, r.len});
            if (checksums)
                append_entry(blob, b.ref().offset + offsetof(ObjectHeader, checksum),
                             {b.header_ptr() + offsetof(ObjectHeader, checksum), 4});
        }
    });
    auto append_op = [&](std::uint32_t zone, const AllocOp& op) {
        append_entry(blob, pool_.geometry().cm_entry_off(zone, op.chunk_index),
                     {reinterpret_cast<const std::byte*>(&op), sizeof(op)});
    };
    for (const AllocReservation& r : allocs_) {
        if (r.large) {
            append_op(r.zone, AllocOp{kOpLargeSet, r.chunk, r.span, 0});
        } else {
            if (r.chunk_fresh)
                append_op(r.zone, AllocOp{kOpChunkInit, r.chunk, r.size_class, 0});
            append_op(r.zone, AllocOp{kOpSlotSet, r.chunk, r.slot, 0});
        }
    }
    for (const FreeIntent& f : frees_) {
        if (f.large)
            append_op(f.zone, AllocOp{kOpLargeClear, f.chunk, f.span, 0});
        else
            append_op(f.zone, AllocOp{kOpSlotClear, f.chunk, f.slot, 0});
    }
}

void Transaction::apply_phase() {
    auto& store = pool_.store();
    const auto& geom = pool_.geometry();
    const bool parity = features_ge(pool_.options().features, Features::MLP);
    const bool checksums = features_ge(pool_.options().features, Features::MLPC);

    struct DataWrite {
        std::uint64_t target;
        const std::byte* src;
        std::uint64_t len;
    };
    std::vector<DataWrite> writes;
    buffers_.for_each([&](MicroBuffer& b) {
        if (!b.modified())
            return;
        if (b.allocated()) {
            writes.push_back({b.ref().offset, b.header_ptr(),
                              kObjHeaderSize + b.payload_cap()});
        } else {
            for (const Range& r : b.ranges())
                writes.push_back({b.ref().offset + kObjHeaderSize + r.off,
                                  b.payload_ptr() + r.off, r.len});
            if (checksums)
                writes.push_back({b.ref().offset + offsetof(ObjectHeader, checksum),
                                  b.header_ptr() + offsetof(ObjectHeader, checksum), 4});
        }
    });

    // Deltas come first, while the persistent bytes still hold old data.
    std::vector<std::pair<std::uint64_t, std::vector<std::byte>>> deltas;
    if (parity) {
        deltas.reserve(writes.size());
        for (const DataWrite& w : writes) {
            const std::byte* oldp = store.read_ptr(w.target, w.len);
            deltas.emplace_back(w.target, delta_compute({oldp, w.len}, {w.src, w.len}));
        }
    }

    for (const DataWrite& w : writes) {
        store.write(w.target, {w.src, w.len});
        store.persist(w.target, w.len);
    }

    // Allocator ops: read-modify-write of chunk metadata under the zone
    // lock; the parity delta can go in unordered because XOR commutes.
    auto apply_op = [&](std::uint32_t zone, const AllocOp& op) {
        std::vector<std::byte> oldb, newb;
        Range r;
        {
            std::lock_guard lk(pool_.zone(zone).mutex());
            r = apply_alloc_op(store, geom, zone, op, parity ? &oldb : nullptr,
                               parity ? &newb : nullptr);
        }
        if (parity) {
            auto d = delta_compute(oldb, newb);
            pool_.parity(zone).apply_data_delta(r.off, d);
            pool_.counters().parity_deltas++;
            pool_.counters().parity_bytes += d.size();
        }
    };
    for (const AllocReservation& r : allocs_) {
        if (r.large) {
            apply_op(r.zone, AllocOp{kOpLargeSet, r.chunk, r.span, 0});
        } else {
            if (r.chunk_fresh)
                apply_op(r.zone, AllocOp{kOpChunkInit, r.chunk, r.size_class, 0});
            apply_op(r.zone, AllocOp{kOpSlotSet, r.chunk, r.slot, 0});
        }
    }
    for (const FreeIntent& f : frees_) {
        if (f.large)
            apply_op(f.zone, AllocOp{kOpLargeClear, f.chunk, f.span, 0});
        else
            apply_op(f.zone, AllocOp{kOpSlotClear, f.chunk, f.slot, 0});
    }

    for (auto& [target, delta] : deltas) {
        pool_.parity(geom.zone_of(target)).apply_data_delta(target, delta);
        pool_.counters().parity_deltas++;
        pool_.counters().parity_bytes += delta.size();
    }
}

void Transaction::commit_top() {
    if (state_ != State::Active)
        require_active();

    bool canary_violation = false;
    buffers_.for_each([&](MicroBuffer& b) {
        if (!b.canary_ok())
            canary_violation = true;
    });
    if (canary_violation) {
        abort_internal();
        throw canary_error("micro-buffer canary overwritten; transaction aborted");
    }

    state_ = State::Committing;
    try {
        if (features_ge(pool_.options().features, Features::MLPC))
            refresh_checksums();

        std::vector<std::byte> blob;
        serialize_blob(blob);
        if (blob.empty()) {
            // Read-only transaction: zero durable bytes written.
            state_ = State::Done;
            release_buffers();
            return;
        }

        std::uint64_t entries = 0;
        for (std::uint64_t c = 0; c + kLogEntryHeaderSize <= blob.size();) {
            std::uint64_t len;
            std::memcpy(&len, blob.data() + c + 8, 8);
            c += align8(kLogEntryHeaderSize + len);
            ++entries;
        }
        pool_.counters().log_entries += entries;
        pool_.counters().bytes_logged += blob.size();

        slot_ = pool_.logmgr().acquire_slot();
        pool_.logmgr().seal(slot_, blob,
                            features_ge(pool_.options().features, Features::ML));
        apply_phase();
        pool_.logmgr().mark_done(slot_);
        pool_.logmgr().gc(slot_);
        pool_.logmgr().release_slot(slot_);
        slot_ = -1;

        for (const FreeIntent& f : frees_)
            pool_.zone(f.zone).release_freed(f);
        frees_.clear();
        allocs_.clear();
        pool_.counters().commits++;
        state_ = State::Done;
        release_buffers();
    } catch (crash_signal&) {
        throw; // the harness tears the thread state down via tx_detach_thread
    } catch (...) {
        abort_internal();
        throw;
    }
}

void Transaction::abort_internal() {
    if (state_ == State::Aborted || state_ == State::Done)
        return;
    for (const AllocReservation& r : allocs_)
        pool_.zone(r.zone).unreserve(r);
    allocs_.clear();
    frees_.clear();
    if (slot_ >= 0) {
        pool_.logmgr().abort_cleanup(slot_);
        pool_.logmgr().release_slot(slot_);
        slot_ = -1;
    }
    release_buffers();
    pool_.counters().aborts++;
    state_ = State::Aborted;
}

Transaction::~Transaction() { release_buffers(); }

// Out-of-line so the debug object-lock table stays internal to this file.
void Transaction::release_buffers() {
    buffers_.for_each([&](MicroBuffer& b) { dbg_release(&pool_, b.ref().offset); });
    buffers_.clear();
}

// ---------------------------------------------------------------------------
// Public API

void pgl_tx_begin(Pool& pool) {
    if (tls_tx) {
        if (&tls_tx->pool() != &pool)
            throw usage_error("a transaction is already active on another pool");
        tls_tx->require_active();
        tls_tx->depth_++;
        return;
    }
    pool.tx_enter();
    tls_tx.reset(new Transaction(pool));
}

void pgl_tx_commit() {
    Transaction* t = require_tx();
    if (t->state_ == Transaction::State::Aborted)
        throw tx_aborted("transaction aborted");
    if (t->depth_ == 1)
        t->commit_top();
    // Nested commits defer to the outermost scope.
}

void pgl_tx_end() {
    Transaction* t = require_tx();
    if (--t->depth_ > 0)
        return;
    if (t->state_ == Transaction::State::Active)
        t->abort_internal(); // end without commit discards
    Pool& p = t->pool_;
    tls_tx.reset();
    p.tx_exit();
}

void pgl_tx_abort() {
    Transaction* t = require_tx();
    if (t->state_ == Transaction::State::Active)
        t->abort_internal();
}

bool pgl_tx_active() {
    return tls_tx && tls_tx->state() == Transaction::State::Active;
}

std::byte* pgl_tx_open(ObjectRef ref) {
    return require_tx()->open_buffer(ref, true)->payload_ptr();
}

std::byte* pgl_tx_add_range(ObjectRef ref, std::uint64_t off, std::uint64_t len) {
    Transaction* t = require_tx();
    MicroBuffer* b = t->open_buffer(ref, true);
    if (!b->allocated()) {
        dbg_acquire(&t->pool(), ref.offset);
        b->add_range(off, len);
    }
    return b->payload_ptr() + off;
}

ObjectRef pgl_tx_alloc(std::uint64_t size, std::uint32_t type_id) {
    Transaction* t = require_tx();
    t->require_active();
    Pool& pool = t->pool_;
    static thread_local std::uint32_t rr =
        static_cast<std::uint32_t>(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    std::optional<AllocReservation> r;
    for (std::uint32_t i = 0; i < pool.zone_count() && !r; ++i)
        r = pool.zone((rr + i) % pool.zone_count()).reserve(size);
    if (!r) {
        t->abort_internal();
        throw space_error("allocation of " + std::to_string(size) +
                          " bytes: out of pool space");
    }
    t->allocs_.push_back(*r);
    ObjectRef ref{pool.uuid_lo(), r->obj_off};
    auto buf = std::make_unique<MicroBuffer>(ref, r->payload_cap, true);
    ObjectHeader h{r->payload_cap + kObjHeaderSize, type_id, 0};
    buf->set_header(h);
    dbg_acquire(&pool, ref.offset);
    t->buffers_.adopt(std::move(buf));
    pool.counters().objects_allocated++;
    pool.counters().bytes_allocated += r->payload_cap + kObjHeaderSize;
    return ref;
}

void pgl_tx_free(ObjectRef ref) {
    Transaction* t = require_tx();
    t->require_active();
    Pool& pool = t->pool_;
    if (ref.is_null() || ref.pool_uuid_lo != pool.uuid_lo()) {
        t->abort_internal();
        throw usage_error("free of an invalid ref");
    }
    // Allocated and freed in the same transaction: cancel both.
    if (MicroBuffer* b = t->buffers_.find(ref.offset); b && b->allocated()) {
        for (auto it = t->allocs_.begin(); it != t->allocs_.end(); ++it) {
            if (it->obj_off == ref.offset) {
                pool.zone(it->zone).unreserve(*it);
                t->allocs_.erase(it);
                break;
            }
        }
        dbg_release(&pool, ref.offset);
        t->buffers_.erase(ref.offset);
        return;
    }
    for (const FreeIntent& f : t->frees_) {
        if (f.obj_off == ref.offset) {
            t->abort_internal();
            throw usage_error("double free in one transaction");
        }
    }
    if (!pool.geometry().in_zones(ref.offset)) {
        t->abort_internal();
        throw bounds_error("free of an offset outside the zones");
    }
    auto fi = pool.zone(pool.geometry().zone_of(ref.offset)).make_free_intent(ref.offset);
    if (!fi) {
        t->abort_internal();
        throw usage_error("double free: object is not live");
    }
    if (t->buffers_.find(ref.offset)) {
        dbg_release(&pool, ref.offset);
        t->buffers_.erase(ref.offset); // freed object's staged changes are moot
    }
    t->frees_.push_back(*fi);
}

namespace {

const std::byte* verified_direct_payload(Pool& pool, ObjectRef ref) {
    auto place = pool.locate_place(ref);
    if (!place)
        throw usage_error("ref does not address a live object");
    auto& store = pool.store();
    auto valid = [&] {
        auto h = read_struct<ObjectHeader>(store, ref.offset);
        if (h.size != place->payload_cap + kObjHeaderSize)
            return false;
        const std::byte* payload = store.read_ptr(ref.offset + kObjHeaderSize,
                                                  place->payload_cap);
        return h.checksum == object_checksum(h.size, h.type_id,
                                             {payload, place->payload_cap});
    };
    if (!valid()) {
        FaultEvent ev{FaultEvent::Kind::ChecksumMismatch, ref.offset,
                      kObjHeaderSize + place->payload_cap};
        auto oc = pool.recovery().handle_fault(ev);
        if (oc != RecoveryManager::Outcome::Recovered || !valid())
            throw corruption_error("object at offset " + std::to_string(ref.offset) +
                                   " is corrupt and unrecoverable");
    }
    return store.read_ptr(ref.offset + kObjHeaderSize, place->payload_cap);
}

} // namespace

const std::byte* pgl_get(Pool& pool, ObjectRef ref) {
    if (ref.is_null())
        return nullptr;
    if (tls_tx && &tls_tx->pool() == &pool)
        return tls_tx->open_buffer(ref, true)->payload_ptr();

    if (pool.options().detect == DetectMode::Conservative &&
        features_ge(pool.options().features, Features::MLPC))
        return verified_direct_payload(pool, ref);

    const std::byte* hdr = pool.obj_locate(ref);
    std::uint64_t size;
    std::memcpy(&size, hdr, 8); // unverified read; used only for accounting
    std::uint64_t cap = pool.geometry().hdr.pool_size - ref.offset;
    if (size > cap)
        size = cap;
    pool.counters().vulnerable_total.fetch_add(size, std::memory_order_relaxed);
    pool.counters().vulnerable_window.fetch_add(size, std::memory_order_relaxed);
    return hdr + kObjHeaderSize;
}

std::byte* pgl_open(Pool& pool, ObjectRef ref) {
    if (tls_tx && &tls_tx->pool() == &pool)
        throw usage_error("pgl_open is for use outside transactions; use pgl_tx_open");
    if (ref.is_null())
        throw usage_error("cannot open the null ref");
    if (ref.pool_uuid_lo != pool.uuid_lo())
        throw usage_error("object ref belongs to a different pool");
    auto place = pool.locate_place(ref);
    if (!place)
        throw usage_error("ref does not address a live object");
    if (features_ge(pool.options().features, Features::MLPC))
        verified_direct_payload(pool, ref); // verify (and repair) before copying
    auto buf = std::make_unique<MicroBuffer>(ref, place->payload_cap, false);
    pool.store().read(ref.offset, {buf->header_ptr(), kObjHeaderSize + place->payload_cap});
    buf->snapshot_pristine();
    std::byte* p = buf->payload_ptr();
    tls_standalone[p] = StandaloneBuf{&pool, std::move(buf)};
    return p;
}

void pgl_commit(Pool& pool, std::byte* uobj) {
    auto it = tls_standalone.find(uobj);
    if (it == tls_standalone.end() || it->second.pool != &pool)
        throw usage_error("pgl_commit: not a micro-buffer from pgl_open on this pool");
    std::unique_ptr<MicroBuffer> buf = std::move(it->second.buf);
    tls_standalone.erase(it);

    auto diffs = buf->diff_ranges();
    if (diffs.empty())
        return; // nothing changed; no durable writes

    pgl_tx_begin(pool);
    try {
        Transaction* t = tls_tx.get();
        dbg_acquire(&pool, buf->ref().offset);
        MicroBuffer& adopted = t->buffers_.adopt(std::move(buf));
        for (const Range& r : diffs)
            adopted.add_range(r.off, r.len);
        pgl_tx_commit();
    } catch (crash_signal&) {
        throw;
    } catch (...) {
        pgl_tx_end();
        throw;
    }
    pgl_tx_end();
}

void pgl_discard(Pool& pool, std::byte* uobj) {
    auto it = tls_standalone.find(uobj);
    if (it == tls_standalone.end() || it->second.pool != &pool)
        throw usage_error("pgl_discard: not a micro-buffer from pgl_open on this pool");
    tls_standalone.erase(it);
}

} // namespace pgl
