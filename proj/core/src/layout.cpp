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

#include "pgl/layout.hpp"

#include "pgl/errors.hpp"

#include <algorithm>

namespace pgl {

void range_set_insert(std::vector<Range>& set, Range r) {
    if (r.empty())
        return;
    auto it = std::lower_bound(set.begin(), set.end(), r,
                               [](const Range& a, const Range& b) { return a.off < b.off; });
    // Merge with the predecessor if touching or overlapping.
    if (it != set.begin()) {
        auto prev = std::prev(it);
        if (prev->end() >= r.off) {
            prev->len = std::max(prev->end(), r.end()) - prev->off;
            it = prev;
        } else {
            it = set.insert(it, r);
        }
    } else {
        it = set.insert(it, r);
    }
    // Swallow successors the merged range now reaches.
    auto next = std::next(it);
    while (next != set.end() && it->end() >= next->off) {
        it->len = std::max(it->end(), next->end()) - it->off;
        next = set.erase(next);
    }
}

} // namespace pgl

namespace pgl::layout {

static void fill_derived(PoolGeometry& g) {
    const PoolHeader& h = g.hdr;
    g.chunks_per_row = static_cast<std::uint32_t>(h.row_size / h.chunk_size);
    g.data_rows = h.rows_per_zone - 1;
    g.chunk_count = g.chunks_per_row * g.data_rows;
    g.cm_bytes = std::uint64_t{g.chunk_count} * sizeof(ChunkMetaRec);
    g.cm_chunks = static_cast<std::uint32_t>((g.cm_bytes + h.chunk_size - 1) / h.chunk_size);
}

PoolGeometry design_pool(const CreateParams& p, std::uint64_t uuid_lo, std::uint64_t uuid_hi) {
    if (p.rows_per_zone < 2)
        throw layout_error("rows_per_zone must be at least 2 (one data row plus parity)");
    if (p.zone_count == 0 || p.zone_count > kMaxZones)
        throw layout_error("zone_count must be in [1, 64]");
    if (p.chunk_size < kPageSize || p.chunk_size % kPageSize != 0)
        throw layout_error("chunk_size must be a positive multiple of 4096");

    PoolGeometry g;
    PoolHeader& h = g.hdr;
    h.magic = kMagic;
    h.version = kVersion;
    h.zone_count = p.zone_count;
    h.uuid_lo = uuid_lo;
    h.uuid_hi = uuid_hi;
    h.rows_per_zone = p.rows_per_zone;
    h.chunk_size = p.chunk_size;
    h.root_offset = 0;
    h.zone_meta_off = kZoneMetaOff;
    h.zone_meta_replica_off = kZoneMetaReplicaOff;
    h.badpage_off = kBadPageOff;
    h.badpage_replica_off = kBadPageReplicaOff;
    h.log_off = kLogOff;
    h.log_len = kLogBytesPerZone * p.zone_count;
    h.zones_off = h.log_off + h.log_len;
    h.slot_stride = kSlotStride;
    h.slot_count = static_cast<std::uint32_t>((h.log_len / 2) / kSlotStride);

    if (p.pool_size <= h.zones_off)
        throw layout_error("pool too small for metadata and log regions");
    std::uint64_t budget = (p.pool_size - h.zones_off) / p.zone_count;
    std::uint64_t col_bytes = std::uint64_t{p.rows_per_zone} * p.chunk_size;
    std::uint64_t cpr = budget / col_bytes;
    if (cpr == 0)
        throw layout_error("pool too small for one chunk column per zone");
    h.row_size = cpr * p.chunk_size;
    h.zone_size = std::uint64_t{p.rows_per_zone} * h.row_size;
    h.pool_size = h.zones_off + std::uint64_t{p.zone_count} * h.zone_size;

    fill_derived(g);
    if (g.cm_chunks >= g.chunk_count)
        throw layout_error("zone too small to hold its own chunk metadata");
    return g;
}

PoolGeometry geometry_from_header(const PoolHeader& hdr) {
    PoolGeometry g;
    g.hdr = hdr;
    fill_derived(g);
    return g;
}

std::uint32_t pick_size_class(std::uint64_t payload, std::uint64_t chunk_size) {
    std::uint64_t c = kMinSizeClass;
    while (c + kObjHeaderSize <= chunk_size) {
        if (payload <= c)
            return static_cast<std::uint32_t>(c);
        c <<= 1;
    }
    return 0; // large path
}

} // namespace pgl::layout
