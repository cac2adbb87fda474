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

#pragma once

#include "pgl/layout.hpp"
#include "pgl/types.hpp"

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <vector>

namespace pgl {

/// A slot (or chunk span) handed out by reserve(). Volatile until the
/// owning transaction commits the matching allocator ops.
struct AllocReservation {
    std::uint32_t zone = 0;
    std::uint32_t chunk = 0; // lead chunk when large
    std::uint32_t slot = 0;
    std::uint32_t size_class = 0; // payload capacity (run allocations)
    std::uint32_t span = 0;       // chunks (large allocations)
    bool large = false;
    bool chunk_fresh = false; // this reservation turned a free chunk into a run
    std::uint64_t obj_off = 0;
    std::uint64_t payload_cap = 0;
};

struct FreeIntent {
    std::uint32_t zone = 0;
    std::uint32_t chunk = 0;
    std::uint32_t slot = 0;
    std::uint32_t span = 0;
    bool large = false;
    std::uint64_t obj_off = 0;
};

/// Resolved location of a (supposedly) live object.
struct ObjectPlace {
    std::uint32_t zone = 0;
    std::uint32_t chunk = 0;
    std::uint32_t slot = 0;
    std::uint32_t span = 0;
    bool large = false;
    std::uint64_t obj_off = 0;
    std::uint64_t payload_cap = 0;
};

/// Volatile allocator state for one zone, mirroring the persistent
/// ChunkMetaRec array plus in-flight reservations. Persistent chunk
/// metadata changes only at transaction commit, through logged allocator
/// ops applied under this zone's mutex.
class ZoneAllocator {
public:
    ZoneAllocator(PersistentStore& store, const layout::PoolGeometry& geom,
                  std::uint32_t zone_id);

    /// Build the volatile index from the (already validated) persistent
    /// chunk metadata.
    void load();

    std::uint32_t zone_id() const { return zone_id_; }
    std::mutex& mutex() { return mu_; }

    std::optional<AllocReservation> reserve(std::uint64_t payload_size);
    void unreserve(const AllocReservation& r);

    /// Validate liveness and describe the free; no state changes. Returns
    /// nullopt for a dead slot (double free) or an unresolvable offset.
    std::optional<FreeIntent> make_free_intent(std::uint64_t obj_off) const;

    /// Return a freed slot to circulation once the freeing transaction's
    /// logs are garbage-collected.
    void release_freed(const FreeIntent& f);

    std::optional<ObjectPlace> locate_object(std::uint64_t obj_off) const;
    bool is_live(std::uint64_t obj_off) const { return locate_object(obj_off).has_value(); }

    void for_each_live(const std::function<void(const ObjectPlace&)>& fn) const;

    /// Claim a contiguous run of free chunks for redo-log overflow. The
    /// chunks stay kChunkFree on media; the claim is owned by the log slot
    /// header that records it.
    std::optional<Range> claim_extent(std::uint64_t bytes);
    void release_extent(const Range& r);

    struct Stats {
        std::uint64_t live_objects = 0;
        std::uint64_t live_bytes = 0; // header + usable payload
        std::uint64_t free_chunks = 0;
        std::uint64_t run_chunks = 0;
    };
    Stats stats() const;

private:
    struct ChunkView {
        std::uint32_t state = layout::kChunkFree; // ChunkState or kLogClaim
        std::uint32_t size_class = 0;
        std::uint32_t span = 0;
        std::uint32_t free_slots = 0;
        std::vector<std::uint64_t> bitmap;
    };
    static constexpr std::uint32_t kLogClaim = 100; // volatile-only state

    bool bit(const ChunkView& c, std::uint32_t slot) const {
        return (c.bitmap[slot / 64] >> (slot % 64)) & 1;
    }
    void set_bit(ChunkView& c, std::uint32_t slot, bool v) {
        if (v)
            c.bitmap[slot / 64] |= (1ull << (slot % 64));
        else
            c.bitmap[slot / 64] &= ~(1ull << (slot % 64));
    }
    std::optional<std::uint32_t> find_contiguous_free(std::uint32_t span) const;
    std::optional<ObjectPlace> locate_locked(std::uint64_t obj_off) const;

    PersistentStore& store_;
    const layout::PoolGeometry& geom_;
    std::uint32_t zone_id_;

    mutable std::mutex mu_;
    std::vector<ChunkView> chunks_;
    std::map<std::uint32_t, std::set<std::uint32_t>> partial_; // class -> chunks with space
    std::set<std::uint32_t> free_;
};

/// Apply one logged allocator op to the persistent chunk metadata,
/// refreshing cm_checksum on every touched record. Safe to replay: ops are
/// idempotent and ops from different transactions commute. Returns the
/// pool-absolute CM byte range rewritten; old_bytes/new_bytes (when
/// non-null) receive the images for parity delta computation.
Range apply_alloc_op(PersistentStore& store, const layout::PoolGeometry& geom,
                     std::uint32_t zone_id, const layout::AllocOp& op,
                     std::vector<std::byte>* old_bytes,
                     std::vector<std::byte>* new_bytes);

/// Write an initial chunk-metadata array for a fresh zone: the leading
/// cm_chunks marked as a permanent large allocation, everything else free,
/// all checksums valid. Returns the pool-absolute range written.
Range init_zone_chunk_meta(PersistentStore& store, const layout::PoolGeometry& geom,
                           std::uint32_t zone_id);

} // namespace pgl
