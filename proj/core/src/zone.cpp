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

#include "pgl/zone.hpp"

#include "pgl/checksum.hpp"
#include "pgl/errors.hpp"

#include <cassert>
#include <cstring>

namespace pgl {

using namespace layout;

ZoneAllocator::ZoneAllocator(PersistentStore& store, const PoolGeometry& geom,
                             std::uint32_t zone_id)
    : store_(store), geom_(geom), zone_id_(zone_id) {}

void ZoneAllocator::load() {
    std::lock_guard lk(mu_);
    chunks_.assign(geom_.chunk_count, {});
    partial_.clear();
    free_.clear();
    for (std::uint32_t c = 0; c < geom_.chunk_count; ++c) {
        auto rec = read_struct<ChunkMetaRec>(store_, geom_.cm_entry_off(zone_id_, c));
        ChunkView& v = chunks_[c];
        v.state = rec.state;
        v.size_class = rec.size_class;
        v.span = rec.span;
        if (rec.state == kChunkRun) {
            std::uint32_t slots = slots_per_chunk(rec.size_class, geom_.hdr.chunk_size);
            v.bitmap.assign((slots + 63) / 64, 0);
            std::memcpy(v.bitmap.data(), rec.alloc_bitmap.data(),
                        std::min<std::size_t>(v.bitmap.size() * 8, rec.alloc_bitmap.size()));
            std::uint32_t live = 0;
            for (std::uint32_t s = 0; s < slots; ++s)
                live += bit(v, s);
            v.free_slots = slots - live;
            if (v.free_slots > 0)
                partial_[rec.size_class].insert(c);
        } else if (rec.state == kChunkFree) {
            free_.insert(c);
        }
    }
}

std::optional<AllocReservation> ZoneAllocator::reserve(std::uint64_t payload_size) {
    std::lock_guard lk(mu_);
    AllocReservation r;
    r.zone = zone_id_;

    std::uint32_t cls = pick_size_class(payload_size, geom_.hdr.chunk_size);
    if (cls != 0) {
        r.size_class = cls;
        r.payload_cap = cls;
        std::uint32_t slots = slots_per_chunk(cls, geom_.hdr.chunk_size);
        auto it = partial_.find(cls);
        if (it != partial_.end() && !it->second.empty()) {
            r.chunk = *it->second.begin();
        } else if (!free_.empty()) {
            r.chunk = *free_.begin();
            free_.erase(free_.begin());
            ChunkView& v = chunks_[r.chunk];
            v.state = kChunkRun;
            v.size_class = cls;
            v.span = 0;
            v.free_slots = slots;
            v.bitmap.assign((slots + 63) / 64, 0);
            partial_[cls].insert(r.chunk);
            r.chunk_fresh = true;
        } else {
            return std::nullopt;
        }
        ChunkView& v = chunks_[r.chunk];
        std::uint32_t s = 0;
        while (s < slots && bit(v, s))
            ++s;
        assert(s < slots);
        set_bit(v, s, true);
        v.free_slots--;
        if (v.free_slots == 0)
            partial_[cls].erase(r.chunk);
        r.slot = s;
        r.obj_off = geom_.chunk_base(zone_id_, r.chunk) + std::uint64_t{s} * slot_stride_of(cls);
        return r;
    }

    // Large path: whole chunks, coalesced when the object spans several.
    std::uint64_t total = payload_size + kObjHeaderSize;
    std::uint32_t span =
        static_cast<std::uint32_t>((total + geom_.hdr.chunk_size - 1) / geom_.hdr.chunk_size);
    auto lead = find_contiguous_free(span);
    if (!lead)
        return std::nullopt;
    for (std::uint32_t c = *lead; c < *lead + span; ++c) {
        free_.erase(c);
        chunks_[c].state = (c == *lead) ? kChunkLargeLead : kChunkLargeCont;
        chunks_[c].span = (c == *lead) ? span : 0;
        chunks_[c].size_class = 0;
        chunks_[c].free_slots = 0;
    }
    r.large = true;
    r.chunk = *lead;
    r.span = span;
    r.obj_off = geom_.chunk_base(zone_id_, *lead);
    r.payload_cap = std::uint64_t{span} * geom_.hdr.chunk_size - kObjHeaderSize;
    return r;
}

std::optional<std::uint32_t> ZoneAllocator::find_contiguous_free(std::uint32_t span) const {
    if (span == 0)
        return std::nullopt;
    std::uint32_t run = 0;
    std::uint32_t run_start = 0;
    std::uint32_t prev = 0;
    bool first = true;
    for (std::uint32_t c : free_) {
        if (first || c != prev + 1) {
            run_start = c;
            run = 1;
        } else {
            ++run;
        }
        if (run >= span)
            return run_start;
        prev = c;
        first = false;
    }
    return std::nullopt;
}

void ZoneAllocator::unreserve(const AllocReservation& r) {
    std::lock_guard lk(mu_);
    if (r.large) {
        for (std::uint32_t c = r.chunk; c < r.chunk + r.span; ++c) {
            chunks_[c] = {};
            free_.insert(c);
        }
        return;
    }
    ChunkView& v = chunks_[r.chunk];
    set_bit(v, r.slot, false);
    v.free_slots++;
    std::uint32_t slots = slots_per_chunk(r.size_class, geom_.hdr.chunk_size);
    if (r.chunk_fresh && v.free_slots == slots) {
        partial_[r.size_class].erase(r.chunk);
        chunks_[r.chunk] = {};
        free_.insert(r.chunk);
    } else {
        partial_[r.size_class].insert(r.chunk);
    }
}

std::optional<ObjectPlace> ZoneAllocator::locate_locked(std::uint64_t obj_off) const {
    if (chunks_.empty()) // not loaded yet
        return std::nullopt;
    std::uint64_t zone_base = geom_.zone_off(zone_id_);
    if (obj_off < zone_base || obj_off >= zone_base + geom_.data_bytes_per_zone())
        return std::nullopt;
    std::uint32_t chunk = geom_.chunk_of(obj_off);
    if (chunk < geom_.cm_chunks) // chunk-metadata area, not an object
        return std::nullopt;
    const ChunkView& v = chunks_[chunk];
    ObjectPlace p;
    p.zone = zone_id_;
    p.chunk = chunk;
    p.obj_off = obj_off;
    if (v.state == kChunkRun) {
        std::uint64_t rel = obj_off - geom_.chunk_base(zone_id_, chunk);
        std::uint64_t stride = slot_stride_of(v.size_class);
        if (rel % stride != 0)
            return std::nullopt;
        std::uint32_t slot = static_cast<std::uint32_t>(rel / stride);
        if (slot >= slots_per_chunk(v.size_class, geom_.hdr.chunk_size) || !bit(v, slot))
            return std::nullopt;
        p.slot = slot;
        p.payload_cap = v.size_class;
        return p;
    }
    if (v.state == kChunkLargeLead && obj_off == geom_.chunk_base(zone_id_, chunk)) {
        p.large = true;
        p.span = v.span;
        p.payload_cap = std::uint64_t{v.span} * geom_.hdr.chunk_size - kObjHeaderSize;
        return p;
    }
    return std::nullopt;
}

std::optional<ObjectPlace> ZoneAllocator::locate_object(std::uint64_t obj_off) const {
    std::lock_guard lk(mu_);
    return locate_locked(obj_off);
}

std::optional<FreeIntent> ZoneAllocator::make_free_intent(std::uint64_t obj_off) const {
    std::lock_guard lk(mu_);
    auto p = locate_locked(obj_off);
    if (!p)
        return std::nullopt;
    FreeIntent f;
    f.zone = zone_id_;
    f.chunk = p->chunk;
    f.slot = p->slot;
    f.span = p->span;
    f.large = p->large;
    f.obj_off = obj_off;
    return f;
}

void ZoneAllocator::release_freed(const FreeIntent& f) {
    std::lock_guard lk(mu_);
    if (f.large) {
        for (std::uint32_t c = f.chunk; c < f.chunk + f.span; ++c) {
            chunks_[c] = {};
            free_.insert(c);
        }
        return;
    }
    ChunkView& v = chunks_[f.chunk];
    if (v.state != kChunkRun)
        return;
    set_bit(v, f.slot, false);
    v.free_slots++;
    partial_[v.size_class].insert(f.chunk);
}

void ZoneAllocator::for_each_live(const std::function<void(const ObjectPlace&)>& fn) const {
    std::lock_guard lk(mu_);
    if (chunks_.empty())
        return;
    for (std::uint32_t c = geom_.cm_chunks; c < geom_.chunk_count; ++c) {
        const ChunkView& v = chunks_[c];
        if (v.state == kChunkRun) {
            std::uint32_t slots = slots_per_chunk(v.size_class, geom_.hdr.chunk_size);
            for (std::uint32_t s = 0; s < slots; ++s) {
                if (!bit(v, s))
                    continue;
                ObjectPlace p;
                p.zone = zone_id_;
                p.chunk = c;
                p.slot = s;
                p.obj_off = geom_.chunk_base(zone_id_, c) + std::uint64_t{s} * slot_stride_of(v.size_class);
                p.payload_cap = v.size_class;
                fn(p);
            }
        } else if (v.state == kChunkLargeLead) {
            ObjectPlace p;
            p.zone = zone_id_;
            p.chunk = c;
            p.large = true;
            p.span = v.span;
            p.obj_off = geom_.chunk_base(zone_id_, c);
            p.payload_cap = std::uint64_t{v.span} * geom_.hdr.chunk_size - kObjHeaderSize;
            fn(p);
        }
    }
}

std::optional<Range> ZoneAllocator::claim_extent(std::uint64_t bytes) {
    std::lock_guard lk(mu_);
    std::uint32_t span =
        static_cast<std::uint32_t>((bytes + geom_.hdr.chunk_size - 1) / geom_.hdr.chunk_size);
    auto lead = find_contiguous_free(span);
    if (!lead)
        return std::nullopt;
    for (std::uint32_t c = *lead; c < *lead + span; ++c) {
        free_.erase(c);
        chunks_[c].state = kLogClaim;
    }
    return Range{geom_.chunk_base(zone_id_, *lead), std::uint64_t{span} * geom_.hdr.chunk_size};
}

void ZoneAllocator::release_extent(const Range& r) {
    std::lock_guard lk(mu_);
    std::uint32_t lead = geom_.chunk_of(r.off);
    std::uint32_t span = static_cast<std::uint32_t>(r.len / geom_.hdr.chunk_size);
    for (std::uint32_t c = lead; c < lead + span; ++c) {
        chunks_[c] = {};
        free_.insert(c);
    }
}

ZoneAllocator::Stats ZoneAllocator::stats() const {
    Stats st;
    for_each_live([&](const ObjectPlace& p) {
        st.live_objects++;
        st.live_bytes += p.payload_cap + kObjHeaderSize;
    });
    std::lock_guard lk(mu_);
    for (const ChunkView& v : chunks_) {
        if (v.state == kChunkFree)
            st.free_chunks++;
        else if (v.state == kChunkRun)
            st.run_chunks++;
    }
    return st;
}

// ---------------------------------------------------------------------------

namespace {

void refresh_cm_checksum(ChunkMetaRec& rec) {
    rec.cm_checksum = struct_checksum(struct_bytes(rec), kChunkMetaChecksumOff);
}

} // namespace

Range apply_alloc_op(PersistentStore& store, const PoolGeometry& geom,
                     std::uint32_t zone_id, const AllocOp& op,
                     std::vector<std::byte>* old_bytes,
                     std::vector<std::byte>* new_bytes) {
    std::uint32_t first = op.chunk_index;
    std::uint32_t n = 1;
    if (op.kind == kOpLargeSet || op.kind == kOpLargeClear)
        n = op.arg_a;
    if (first + n > geom.chunk_count || n == 0)
        throw corruption_error("allocator op addresses chunks outside the zone");

    Range range{geom.cm_entry_off(zone_id, first), std::uint64_t{n} * sizeof(ChunkMetaRec)};
    std::vector<std::byte> old(range.len);
    store.read(range.off, old);
    std::vector<std::byte> img = old;
    auto* recs = reinterpret_cast<ChunkMetaRec*>(img.data());

    switch (op.kind) {
    case kOpChunkInit:
        recs[0].state = kChunkRun;
        recs[0].size_class = op.arg_a;
        recs[0].span = 0;
        break;
    case kOpSlotSet:
        recs[0].alloc_bitmap[op.arg_a / 8] |= static_cast<std::uint8_t>(1u << (op.arg_a % 8));
        break;
    case kOpSlotClear:
        recs[0].alloc_bitmap[op.arg_a / 8] &= static_cast<std::uint8_t>(~(1u << (op.arg_a % 8)));
        break;
    case kOpLargeSet:
        for (std::uint32_t i = 0; i < n; ++i) {
            recs[i].state = (i == 0) ? kChunkLargeLead : kChunkLargeCont;
            recs[i].size_class = 0;
            recs[i].span = (i == 0) ? op.arg_a : 0;
            recs[i].alloc_bitmap.fill(0);
        }
        break;
    case kOpLargeClear:
        for (std::uint32_t i = 0; i < n; ++i) {
            recs[i].state = kChunkFree;
            recs[i].size_class = 0;
            recs[i].span = 0;
            recs[i].alloc_bitmap.fill(0);
        }
        break;
    default:
        throw corruption_error("unknown allocator op kind in redo log");
    }
    for (std::uint32_t i = 0; i < n; ++i)
        refresh_cm_checksum(recs[i]);

    store.write(range.off, img);
    store.persist(range.off, range.len);
    if (old_bytes)
        *old_bytes = std::move(old);
    if (new_bytes)
        *new_bytes = std::move(img);
    return range;
}

Range init_zone_chunk_meta(PersistentStore& store, const PoolGeometry& geom,
                           std::uint32_t zone_id) {
    std::vector<std::byte> img(geom.cm_bytes, std::byte{0});
    auto* recs = reinterpret_cast<ChunkMetaRec*>(img.data());
    for (std::uint32_t c = 0; c < geom.chunk_count; ++c) {
        ChunkMetaRec& r = recs[c];
        if (c < geom.cm_chunks) {
            // The metadata array itself occupies the leading chunks as a
            // permanent coalesced allocation.
            r.state = (c == 0) ? kChunkLargeLead : kChunkLargeCont;
            r.span = (c == 0) ? geom.cm_chunks : 0;
        } else {
            r.state = kChunkFree;
        }
        refresh_cm_checksum(r);
    }
    Range range{geom.cm_array_off(zone_id), geom.cm_bytes};
    store.write(range.off, img);
    store.persist(range.off, range.len);
    return range;
}

} // namespace pgl
