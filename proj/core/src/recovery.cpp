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

#include "pgl/recovery.hpp"

#include "pgl/checksum.hpp"
#include "pgl/errors.hpp"
#include "pgl/tx.hpp"

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstring>
#include <random>

#include <sys/mman.h>
#include <unistd.h>

namespace pgl {

using namespace layout;

namespace {

/// Walk a pool range as (zone, column, len) segments confined to one row.
template <typename Fn>
void for_each_row_segment(const PoolGeometry& g, Range r, Fn&& fn) {
    std::uint64_t pos = r.off;
    std::uint64_t end = r.end();
    while (pos < end) {
        if (!g.in_zones(pos))
            throw bounds_error("range outside the zones region");
        std::uint32_t z = g.zone_of(pos);
        std::uint64_t zrel = (pos - g.zone_off(z)) % g.hdr.zone_size;
        std::uint64_t col = zrel % g.hdr.row_size;
        std::uint64_t n = std::min(end - pos, g.hdr.row_size - col);
        fn(z, pos, col, n);
        pos += n;
    }
}

// -- page-fault interceptor (media-error emulation) -------------------------

struct InterceptEntry {
    std::byte* base;
    std::uint64_t len;
    Pool* pool;
};

std::mutex g_icpt_mu;
std::vector<InterceptEntry> g_icpt;
struct sigaction g_icpt_old {};
bool g_icpt_installed = false;

void intercept_segv(int sig, siginfo_t* info, void*) {
    std::byte* addr = static_cast<std::byte*>(info->si_addr);
    Pool* pool = nullptr;
    std::byte* base = nullptr;
    std::uint64_t off = 0;
    {
        std::lock_guard lk(g_icpt_mu);
        for (const auto& e : g_icpt) {
            if (addr >= e.base && addr < e.base + e.len) {
                pool = e.pool;
                base = e.base;
                off = static_cast<std::uint64_t>(addr - e.base);
                break;
            }
        }
    }
    if (!pool) {
        ::sigaction(sig, &g_icpt_old, nullptr);
        return; // retry faults through the previous handler
    }
    std::uint64_t page = off & ~(kPageSize - 1);
    ::mprotect(base + page, kPageSize, PROT_READ | PROT_WRITE);
    try {
        FaultEvent ev{FaultEvent::Kind::MediaPage, page, kPageSize};
        pool->recovery().handle_fault(ev);
    } catch (...) {
        // Double fault or fault mid-commit: die and let post-crash
        // recovery handle it at the next open.
        ::_exit(86);
    }
    // Returning retries the faulting load against the repaired page.
}

} // namespace

RecoveryManager::RecoveryManager(Pool& pool) : pool_(pool) {}

RecoveryManager::~RecoveryManager() { unregister_interceptor(); }

void RecoveryManager::register_interceptor() {
    std::byte* base = pool_.store().raw_base();
    if (!base || interceptor_registered_)
        return;
    std::lock_guard lk(g_icpt_mu);
    if (!g_icpt_installed) {
        struct sigaction sa {};
        sa.sa_sigaction = intercept_segv;
        sa.sa_flags = SA_SIGINFO;
        sigemptyset(&sa.sa_mask);
        ::sigaction(SIGSEGV, &sa, &g_icpt_old);
        ::sigaction(SIGBUS, &sa, nullptr);
        g_icpt_installed = true;
    }
    g_icpt.push_back({base, pool_.store().length(), &pool_});
    interceptor_registered_ = true;
}

void RecoveryManager::unregister_interceptor() {
    if (!interceptor_registered_)
        return;
    std::lock_guard lk(g_icpt_mu);
    std::erase_if(g_icpt, [&](const InterceptEntry& e) { return e.pool == &pool_; });
    interceptor_registered_ = false;
}

// -- bad-page record ---------------------------------------------------------

void RecoveryManager::write_bad_pages(const std::vector<std::uint64_t>& pages) {
    auto& store = pool_.store();
    const auto& h = pool_.geometry().hdr;
    BadPageBlock bp{};
    bp.count = static_cast<std::uint32_t>(std::min<std::size_t>(pages.size(), kBadPageCap));
    for (std::uint32_t i = 0; i < bp.count; ++i)
        bp.entries[i] = {pages[i], 1};
    bp.checksum = struct_checksum(struct_bytes(bp), kBadPageChecksumOff);
    write_struct(store, h.badpage_off, bp);
    store.persist(h.badpage_off, sizeof(bp));
    write_struct(store, h.badpage_replica_off, bp);
    store.persist(h.badpage_replica_off, sizeof(bp));
}

void RecoveryManager::clear_bad_pages() { write_bad_pages({}); }

// -- repair primitives -------------------------------------------------------

bool RecoveryManager::repair_metadata_range(Range r) {
    auto& store = pool_.store();
    const auto& h = pool_.geometry().hdr;

    // Metadata regions are replicated pairwise; copy the twin's bytes over
    // the damaged range. Struct checksums get re-validated by the caller's
    // next read; redo-log entries carry their own checksums.
    struct Mirror {
        Range primary;
        std::int64_t twin_delta;
    };
    const Mirror mirrors[] = {
        {{kHeaderOff, kPageSize}, static_cast<std::int64_t>(kHeaderReplicaOff - kHeaderOff)},
        {{kHeaderReplicaOff, kPageSize}, -static_cast<std::int64_t>(kHeaderReplicaOff - kHeaderOff)},
        {{h.zone_meta_off, kPageSize},
         static_cast<std::int64_t>(h.zone_meta_replica_off - h.zone_meta_off)},
        {{h.zone_meta_replica_off, kPageSize},
         -static_cast<std::int64_t>(h.zone_meta_replica_off - h.zone_meta_off)},
        {{h.badpage_off, kPageSize},
         static_cast<std::int64_t>(h.badpage_replica_off - h.badpage_off)},
        {{h.badpage_replica_off, kPageSize},
         -static_cast<std::int64_t>(h.badpage_replica_off - h.badpage_off)},
        {{h.log_off, h.log_len / 2}, static_cast<std::int64_t>(h.log_len / 2)},
        {{h.log_off + h.log_len / 2, h.log_len / 2},
         -static_cast<std::int64_t>(h.log_len / 2)},
    };
    for (const Mirror& m : mirrors) {
        if (!m.primary.overlaps(r))
            continue;
        std::uint64_t s = std::max(m.primary.off, r.off);
        std::uint64_t e = std::min(m.primary.end(), r.end());
        std::vector<std::byte> twin(e - s);
        store.read(static_cast<std::uint64_t>(static_cast<std::int64_t>(s) + m.twin_delta),
                   twin);
        store.write(s, twin);
        store.persist(s, twin.size());
        return true;
    }
    return false;
}

void RecoveryManager::repair_zone_range(Range r) {
    auto excluded = pool_.logmgr().claimed_ranges();
    for_each_row_segment(pool_.geometry(), r,
                         [&](std::uint32_t z, std::uint64_t abs, std::uint64_t, std::uint64_t n) {
                             pool_.parity(z).reconstruct_member(abs, n, excluded);
                         });
}

bool RecoveryManager::verify_object(const ObjectPlace& p) const {
    const auto& store = pool_.store();
    auto h = read_struct<ObjectHeader>(store, p.obj_off);
    if (h.size != p.payload_cap + kObjHeaderSize)
        return false;
    if (!features_ge(pool_.options().features, Features::MLPC))
        return true;
    const std::byte* payload = store.read_ptr(p.obj_off + kObjHeaderSize, p.payload_cap);
    return h.checksum == object_checksum(h.size, h.type_id, {payload, p.payload_cap});
}

std::vector<Range> RecoveryManager::object_overlaps(Range r) const {
    // Collected as object slot ranges so the caller can re-verify them.
    std::vector<Range> out;
    const auto& g = pool_.geometry();
    for (std::uint32_t z = 0; z < pool_.zone_count(); ++z) {
        std::uint64_t zs = g.zone_off(z);
        Range zone_range{zs, g.data_bytes_per_zone()};
        if (!zone_range.overlaps(r))
            continue;
        const_cast<Pool&>(pool_).zone(z).for_each_live([&](const ObjectPlace& p) {
            Range obj{p.obj_off, p.payload_cap + kObjHeaderSize};
            if (obj.overlaps(r))
                out.push_back(obj);
        });
    }
    return out;
}

RecoveryManager::Outcome RecoveryManager::repair_targets(const std::vector<Range>& targets,
                                                         ScrubReport* rep) {
    const auto& g = pool_.geometry();
    Outcome oc = Outcome::Recovered;
    for (Range r : targets) {
        if (g.in_zones(r.off)) {
            repair_zone_range(r);
            // A repaired range must carry valid objects again; failure means
            // another member of the same column was corrupt too.
            for (Range obj : object_overlaps(r)) {
                auto place = pool_.zone(g.zone_of(obj.off)).locate_object(obj.off);
                if (place && !verify_object(*place)) {
                    oc = Outcome::Unrecoverable;
                    if (rep)
                        rep->unrecoverable++;
                }
            }
        } else {
            if (!repair_metadata_range(r))
                oc = Outcome::Unrecoverable;
        }
    }
    return oc;
}

RecoveryManager::Outcome RecoveryManager::handle_fault(const FaultEvent& ev) {
    std::unique_lock own(owner_mu_, std::try_to_lock);
    if (!own.owns_lock())
        throw fatal_fault("a second fault arrived while recovery was running");
    if (this_thread_committing(pool_))
        throw fatal_fault("fault detected inside the detector's own commit");

    auto t0 = std::chrono::steady_clock::now();
    pool_.freeze();

    std::vector<std::uint64_t> pages;
    for (std::uint64_t p = ev.offset & ~(kPageSize - 1); p < ev.offset + ev.len;
         p += kPageSize)
        pages.push_back(p);
    write_bad_pages(pages);

    Outcome oc = repair_targets({Range{ev.offset, ev.len}}, nullptr);

    clear_bad_pages();
    pool_.thaw();
    repair_us_ = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                                std::chrono::steady_clock::now() - t0)
                                                .count());
    return oc;
}

// -- crash recovery -----------------------------------------------------------

void RecoveryManager::crash_recover() {
    auto& lm = pool_.logmgr();
    auto& store = pool_.store();
    const auto& g = pool_.geometry();
    lm.rebuild_claims(); // overflow extents count as zeros until released

    // Phase 1: re-apply every committed transaction's entries. Markers stay
    // untouched, so a crash anywhere in here replays again from scratch.
    std::vector<Range> touched;
    for (std::uint32_t s = 0; s < lm.slot_count(); ++s) {
        auto img = lm.parse_slot(static_cast<int>(s));
        if (img.marker != kSlotLogsComplete && img.marker != kSlotDone)
            continue;
        if (!img.parse_ok) {
            if (img.marker == kSlotLogsComplete)
                throw corruption_error(
                    "redo log and replica both corrupt for a committed transaction");
            continue; // done: effects are already applied; clearing remains
        }
        for (const auto& e : img.entries) {
            std::uint32_t z = 0;
            if (g.in_cm_region(e.target, &z)) {
                if (e.payload.size() != sizeof(AllocOp))
                    throw corruption_error("malformed allocator op in redo log");
                AllocOp op{};
                std::memcpy(&op, e.payload.data(), sizeof(op));
                Range r = apply_alloc_op(store, g, z, op, nullptr, nullptr);
                range_set_insert(touched, r);
            } else {
                store.write(e.target, e.payload);
                store.persist(e.target, e.payload.size());
                range_set_insert(touched, Range{e.target, e.payload.size()});
            }
        }
    }

    // Phase 2: the replayed data is known-correct; rebuild the parity it
    // maps to from full columns before any marker moves.
    auto excluded = lm.claimed_ranges();
    for (Range r : touched) {
        for_each_row_segment(g, r,
                             [&](std::uint32_t z, std::uint64_t, std::uint64_t col,
                                 std::uint64_t n) {
                                 pool_.parity(z).recompute(col, n, excluded);
                             });
    }

    // Phase 3: garbage-collect every slot (idempotent per slot).
    for (std::uint32_t s = 0; s < lm.slot_count(); ++s)
        lm.recover_finish_slot(static_cast<int>(s), /*parity=*/true);
}

void RecoveryManager::replay_bad_pages() {
    const auto& h = pool_.geometry().hdr;
    auto bp = read_struct<BadPageBlock>(pool_.store(), h.badpage_off);
    if (bp.count == 0)
        return;
    std::vector<Range> targets;
    for (std::uint32_t i = 0; i < std::min(bp.count, kBadPageCap); ++i)
        if (bp.entries[i].state == 1)
            targets.push_back({bp.entries[i].page_off, kPageSize});
    repair_targets(targets, nullptr);
    clear_bad_pages();
}

void RecoveryManager::validate_chunk_meta() {
    auto& store = pool_.store();
    const auto& g = pool_.geometry();
    for (std::uint32_t z = 0; z < pool_.zone_count(); ++z) {
        for (std::uint32_t c = 0; c < g.chunk_count; ++c) {
            std::uint64_t off = g.cm_entry_off(z, c);
            auto rec = read_struct<ChunkMetaRec>(store, off);
            if (rec.cm_checksum == struct_checksum(struct_bytes(rec), kChunkMetaChecksumOff))
                continue;
            repair_zone_range(Range{off, sizeof(ChunkMetaRec)});
            rec = read_struct<ChunkMetaRec>(store, off);
            if (rec.cm_checksum != struct_checksum(struct_bytes(rec), kChunkMetaChecksumOff))
                throw corruption_error("chunk metadata unrecoverable in zone " +
                                       std::to_string(z));
        }
    }
}

// -- scrub / check ------------------------------------------------------------

ScrubReport RecoveryManager::scrub() {
    std::lock_guard own(owner_mu_);
    ScrubReport rep;
    auto& store = pool_.store();
    const auto& g = pool_.geometry();
    const auto& h = g.hdr;

    // Pool-level metadata: both copies must validate and match.
    {
        auto hp = read_struct<PoolHeader>(store, kHeaderOff);
        auto hr = read_struct<PoolHeader>(store, kHeaderReplicaOff);
        bool p_ok = hp.header_checksum == struct_checksum(struct_bytes(hp), kHeaderChecksumOff) &&
                    hp.magic == kMagic;
        bool r_ok = hr.header_checksum == struct_checksum(struct_bytes(hr), kHeaderChecksumOff) &&
                    hr.magic == kMagic;
        if (p_ok && !r_ok) {
            write_struct(store, kHeaderReplicaOff, hp);
            store.persist(kHeaderReplicaOff, sizeof(hp));
            rep.metadata_repaired++;
        } else if (!p_ok && r_ok) {
            write_struct(store, kHeaderOff, hr);
            store.persist(kHeaderOff, sizeof(hr));
            rep.metadata_repaired++;
        } else if (!p_ok && !r_ok) {
            rep.unrecoverable++;
        }
    }
    for (std::uint32_t z = 0; z < h.zone_count; ++z) {
        std::uint64_t off = h.zone_meta_off + z * sizeof(ZoneMetaRec);
        std::uint64_t roff = h.zone_meta_replica_off + z * sizeof(ZoneMetaRec);
        auto zm = read_struct<ZoneMetaRec>(store, off);
        auto zr = read_struct<ZoneMetaRec>(store, roff);
        bool ok = zm.meta_checksum == struct_checksum(struct_bytes(zm), kZoneMetaChecksumOff);
        bool rok = zr.meta_checksum == struct_checksum(struct_bytes(zr), kZoneMetaChecksumOff);
        if (ok && !rok) {
            write_struct(store, roff, zm);
            store.persist(roff, sizeof(zm));
            rep.metadata_repaired++;
        } else if (!ok && rok) {
            write_struct(store, off, zr);
            store.persist(off, sizeof(zr));
            rep.metadata_repaired++;
        } else if (!ok && !rok) {
            rep.unrecoverable++;
        }
    }

    for (std::uint32_t z = 0; z < pool_.zone_count(); ++z) {
        pool_.freeze(); // quiesce one zone batch at a time

        // Chunk metadata is parity-covered; reconstruct corrupt records.
        for (std::uint32_t c = 0; c < g.chunk_count; ++c) {
            std::uint64_t off = g.cm_entry_off(z, c);
            auto rec = read_struct<ChunkMetaRec>(store, off);
            if (rec.cm_checksum == struct_checksum(struct_bytes(rec), kChunkMetaChecksumOff))
                continue;
            rep.mismatches++;
            write_bad_pages({off & ~(kPageSize - 1)});
            repair_zone_range(Range{off, sizeof(ChunkMetaRec)});
            clear_bad_pages();
            rec = read_struct<ChunkMetaRec>(store, off);
            if (rec.cm_checksum == struct_checksum(struct_bytes(rec), kChunkMetaChecksumOff)) {
                rep.metadata_repaired++;
            } else {
                rep.unrecoverable++;
            }
        }

        std::vector<ObjectPlace> places;
        pool_.zone(z).for_each_live([&](const ObjectPlace& p) { places.push_back(p); });
        for (const ObjectPlace& p : places) {
            rep.objects_scanned++;
            if (verify_object(p))
                continue;
            rep.mismatches++;
            Range obj{p.obj_off, p.payload_cap + kObjHeaderSize};
            std::vector<std::uint64_t> pages;
            for (std::uint64_t pg = obj.off & ~(kPageSize - 1); pg < obj.end();
                 pg += kPageSize)
                pages.push_back(pg);
            write_bad_pages(pages);
            repair_zone_range(obj);
            clear_bad_pages();
            if (verify_object(p))
                rep.repaired++;
            else
                rep.unrecoverable++;
        }

        // Residual parity inconsistencies live in free space or the parity
        // row itself; the verified data rows are the truth to rebuild from.
        auto excluded = pool_.logmgr().claimed_ranges();
        auto bad = pool_.parity(z).check(excluded);
        for (const Range& b : bad) {
            pool_.parity(z).recompute(b.off, b.len, excluded);
            rep.parity_ranges_fixed++;
        }
        pool_.thaw();
    }
    return rep;
}

CheckReport RecoveryManager::check() {
    CheckReport rep;
    auto& store = pool_.store();
    const auto& g = pool_.geometry();
    const auto& h = g.hdr;

    auto hp = read_struct<PoolHeader>(store, kHeaderOff);
    auto hr = read_struct<PoolHeader>(store, kHeaderReplicaOff);
    if (hp.header_checksum != struct_checksum(struct_bytes(hp), kHeaderChecksumOff))
        rep.metadata_failures++;
    if (hr.header_checksum != struct_checksum(struct_bytes(hr), kHeaderChecksumOff))
        rep.metadata_failures++;
    for (std::uint32_t z = 0; z < h.zone_count; ++z) {
        auto zm = read_struct<ZoneMetaRec>(store, h.zone_meta_off + z * sizeof(ZoneMetaRec));
        if (zm.meta_checksum != struct_checksum(struct_bytes(zm), kZoneMetaChecksumOff))
            rep.metadata_failures++;
    }
    for (std::uint32_t z = 0; z < pool_.zone_count(); ++z) {
        for (std::uint32_t c = 0; c < g.chunk_count; ++c) {
            auto rec = read_struct<ChunkMetaRec>(store, g.cm_entry_off(z, c));
            if (rec.cm_checksum != struct_checksum(struct_bytes(rec), kChunkMetaChecksumOff))
                rep.metadata_failures++;
        }
        pool_.zone(z).for_each_live([&](const ObjectPlace& p) {
            rep.objects_scanned++;
            if (!verify_object(p))
                rep.checksum_failures++;
        });
        rep.parity_bad_ranges += pool_.parity_check_zone(z).size();
    }
    return rep;
}

// -- fault injection ----------------------------------------------------------

InjectReport RecoveryManager::inject_media_page(std::uint64_t page_off, bool protect_page) {
    if (page_off % kPageSize != 0)
        throw usage_error("media injection target must be page-aligned");
    auto& store = pool_.store();
    store.fill(page_off, kPageSize, std::byte{0}); // out-of-band erase
    store.persist(page_off, kPageSize);

    InjectReport rep;
    rep.kind = "media";
    rep.offset = page_off;
    rep.len = kPageSize;
    const auto& g = pool_.geometry();
    if (g.in_zones(page_off)) {
        rep.zone = g.zone_of(page_off);
        rep.parity_member = g.row_of(page_off) >= g.data_rows;
    }
    if (protect_page) {
        std::byte* base = store.raw_base();
        if (base && ::mprotect(base + page_off, kPageSize, PROT_NONE) == 0)
            rep.page_protected = true;
    }
    return rep;
}

InjectReport RecoveryManager::inject_scribble(std::uint64_t off, std::uint64_t len,
                                              std::uint64_t seed) {
    const auto& g = pool_.geometry();
    len = std::min(len, g.hdr.row_size); // scribbles up to one chunk-row
    if (off + len > g.hdr.pool_size)
        throw bounds_error("scribble outside the pool");
    std::vector<std::byte> junk(len);
    std::mt19937_64 rng(seed);
    for (auto& b : junk)
        b = static_cast<std::byte>(rng());
    pool_.store().write(off, junk); // out-of-band: no logs, no parity
    pool_.store().persist(off, len);

    InjectReport rep;
    rep.kind = "scribble";
    rep.offset = off;
    rep.len = len;
    if (g.in_zones(off)) {
        rep.zone = g.zone_of(off);
        rep.parity_member = g.row_of(off) >= g.data_rows;
    }
    return rep;
}

} // namespace pgl
