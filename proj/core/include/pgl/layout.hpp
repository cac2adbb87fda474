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

#include "pgl/store.hpp"
#include "pgl/types.hpp"

#include <array>
#include <bit>
#include <cstring>

// On-media layout. All integers little-endian; the build targets
// little-endian hosts only. See docs/LAYOUT.md for the full map.

static_assert(std::endian::native == std::endian::little,
              "pool layout requires a little-endian host");

namespace pgl::layout {

inline constexpr std::uint64_t kMagic = 0x314c4f4f504c4750ull; // "PGLPOOL1"
inline constexpr std::uint32_t kVersion = 1;

inline constexpr std::uint64_t kHeaderOff = 0;
inline constexpr std::uint64_t kHeaderReplicaOff = 4096;
inline constexpr std::uint64_t kZoneMetaOff = 8192;
inline constexpr std::uint64_t kZoneMetaReplicaOff = 12288;
inline constexpr std::uint64_t kBadPageOff = 16384;
inline constexpr std::uint64_t kBadPageReplicaOff = 20480;
inline constexpr std::uint64_t kLogOff = 24576;

inline constexpr std::uint64_t kLogBytesPerZone = 1ull << 20;
inline constexpr std::uint32_t kSlotStride = 65536;
inline constexpr std::uint64_t kSlotHeaderSize = 64;
inline constexpr std::uint32_t kMaxZones = 64;

inline constexpr std::uint64_t kObjHeaderSize = 16;
inline constexpr std::uint32_t kMinSizeClass = 64;

/// Primary pool header; a byte-identical replica lives at
/// kHeaderReplicaOff. Every layout offset a reader needs is recorded here.
struct PoolHeader {
    std::uint64_t magic;
    std::uint32_t version;
    std::uint32_t zone_count;
    std::uint64_t uuid_lo;
    std::uint64_t uuid_hi;
    std::uint64_t pool_size;
    std::uint32_t rows_per_zone;
    std::uint32_t slot_count;
    std::uint64_t chunk_size;
    std::uint64_t root_offset; // 0 = no root object yet
    std::uint64_t zone_meta_off;
    std::uint64_t zone_meta_replica_off;
    std::uint64_t badpage_off;
    std::uint64_t badpage_replica_off;
    std::uint64_t log_off;
    std::uint64_t log_len;
    std::uint64_t zones_off;
    std::uint64_t zone_size;
    std::uint64_t row_size;
    std::uint32_t slot_stride;
    std::uint32_t header_checksum; // over all other fields
};
static_assert(sizeof(PoolHeader) == 144);
inline constexpr std::size_t kHeaderChecksumOff = offsetof(PoolHeader, header_checksum);

/// Per-zone geometry record, replicated like the pool header.
struct ZoneMetaRec {
    std::uint32_t zone_id;
    std::uint32_t rows;
    std::uint64_t row_size;
    std::uint64_t zone_off;
    std::uint64_t chunk_size;
    std::uint32_t chunk_count; // data-row chunks only
    std::uint32_t cm_chunks;   // leading chunks holding the ChunkMetaRec array
    std::uint64_t reserved0;
    std::uint64_t reserved1;
    std::uint32_t meta_checksum;
    std::uint32_t pad;
};
static_assert(sizeof(ZoneMetaRec) == 64);
inline constexpr std::size_t kZoneMetaChecksumOff = offsetof(ZoneMetaRec, meta_checksum);

enum ChunkState : std::uint32_t {
    kChunkFree = 0,
    kChunkRun = 1,       // subdivided into size-class slots
    kChunkLargeLead = 2, // first chunk of a coalesced allocation
    kChunkLargeCont = 3, // continuation of a coalesced allocation
};

/// Chunk allocation record. The array of these lives in the first chunks of
/// each zone's row 0, inside a data row, so zone parity can recover it.
struct ChunkMetaRec {
    std::uint32_t state;
    std::uint32_t size_class; // payload bytes per slot (kChunkRun only)
    std::uint32_t span;       // chunks in the allocation (kChunkLargeLead only)
    std::uint32_t cm_checksum;
    std::array<std::uint8_t, 512> alloc_bitmap; // one bit per slot
};
static_assert(sizeof(ChunkMetaRec) == 528);
inline constexpr std::size_t kChunkMetaChecksumOff = offsetof(ChunkMetaRec, cm_checksum);

/// Persistent object header preceding every object's payload.
struct ObjectHeader {
    std::uint64_t size; // header + usable payload, i.e. the whole slot
    std::uint32_t type_id;
    std::uint32_t checksum; // object_checksum(size, type_id, payload)
};
static_assert(sizeof(ObjectHeader) == kObjHeaderSize);

/// Redo-log slot states. Transitions happen only via atomic 8-byte stores
/// followed by a persist.
enum SlotMarker : std::uint64_t {
    kSlotEmpty = 0,
    kSlotLogsComplete = 1,
    kSlotDone = 2,
};

/// Header of one transaction-log slot. Entries follow at +kSlotHeaderSize.
/// When the serialized log exceeds the slot, it moves wholesale into an
/// overflow extent claimed from zone heap space (overflow_off/len), whose
/// bytes are treated as zeros by all parity arithmetic while claimed.
struct SlotHeader {
    std::uint64_t marker;
    std::uint64_t log_bytes;
    std::uint64_t overflow_off; // pool-absolute; 0 = none
    std::uint64_t overflow_len; // total extent bytes (primary + replica halves)
    std::uint64_t reserved[4];
};
static_assert(sizeof(SlotHeader) == kSlotHeaderSize);

// Log entry wire format, 8-byte aligned start:
//   [u64 target_offset][u64 length][u32 checksum][payload]
// checksum covers target_offset, length, and the payload.
inline constexpr std::uint64_t kLogEntryHeaderSize = 20;

inline constexpr std::uint64_t align8(std::uint64_t v) { return (v + 7) & ~std::uint64_t{7}; }

/// Allocator intents are logged as 16-byte structured payloads targeting
/// the ChunkMetaRec they mutate; replay applies them semantically (and
/// refreshes cm_checksum) so entries from different transactions commute.
/// An entry whose target_offset falls inside a zone's ChunkMetaRec array is
/// one of these; everything else is a raw byte write.
struct AllocOp {
    std::uint32_t kind;
    std::uint32_t chunk_index;
    std::uint32_t arg_a; // slot index / size class / span
    std::uint32_t arg_b;
};
static_assert(sizeof(AllocOp) == 16);

enum AllocOpKind : std::uint32_t {
    kOpSlotSet = 1,    // arg_a = slot
    kOpSlotClear = 2,  // arg_a = slot
    kOpChunkInit = 3,  // arg_a = size class
    kOpLargeSet = 4,   // arg_a = span
    kOpLargeClear = 5, // arg_a = span
};

/// Persistent record of pages under repair, kept so corruption recovery can
/// re-execute idempotently after a crash. Replicated like other metadata.
struct BadPageEntry {
    std::uint64_t page_off;
    std::uint64_t state; // 1 = repair pending
};

inline constexpr std::uint32_t kBadPageCap = 254;

struct BadPageBlock {
    std::uint32_t count;
    std::uint32_t checksum;
    std::array<BadPageEntry, kBadPageCap> entries;
};
static_assert(sizeof(BadPageBlock) == 4072);
inline constexpr std::size_t kBadPageChecksumOff = offsetof(BadPageBlock, checksum);

// ---------------------------------------------------------------------------

/// Pool creation parameters. Zone size is derived from what remains after
/// metadata and the log region, rounded down to a whole number of chunk
/// columns; the file is sized so metadata + logs + zones tile it exactly.
struct CreateParams {
    std::uint64_t pool_size = 64ull << 20;
    std::uint32_t rows_per_zone = 100;
    std::uint64_t chunk_size = 262144;
    std::uint32_t zone_count = 1;
};

/// Validated header plus everything derived from it.
struct PoolGeometry {
    PoolHeader hdr{};

    std::uint32_t chunks_per_row = 0;
    std::uint32_t data_rows = 0;
    std::uint32_t chunk_count = 0; // per zone
    std::uint32_t cm_chunks = 0;   // per zone
    std::uint64_t cm_bytes = 0;    // chunk_count * sizeof(ChunkMetaRec)

    std::uint64_t zone_off(std::uint32_t z) const {
        return hdr.zones_off + std::uint64_t{z} * hdr.zone_size;
    }
    std::uint64_t data_bytes_per_zone() const {
        return std::uint64_t{data_rows} * hdr.row_size;
    }
    std::uint64_t parity_off(std::uint32_t z) const {
        return zone_off(z) + data_bytes_per_zone();
    }

    bool in_zones(std::uint64_t off) const {
        return off >= hdr.zones_off && off < hdr.zones_off + std::uint64_t{hdr.zone_count} * hdr.zone_size;
    }
    std::uint32_t zone_of(std::uint64_t off) const {
        return static_cast<std::uint32_t>((off - hdr.zones_off) / hdr.zone_size);
    }
    /// Row index within the zone; data_rows = the parity row.
    std::uint32_t row_of(std::uint64_t off) const {
        return static_cast<std::uint32_t>(((off - hdr.zones_off) % hdr.zone_size) / hdr.row_size);
    }
    std::uint64_t column_of(std::uint64_t off) const {
        return ((off - hdr.zones_off) % hdr.zone_size) % hdr.row_size;
    }

    std::uint64_t chunk_base(std::uint32_t z, std::uint32_t chunk) const {
        std::uint32_t row = chunk / chunks_per_row;
        std::uint32_t col = chunk % chunks_per_row;
        return zone_off(z) + std::uint64_t{row} * hdr.row_size + std::uint64_t{col} * hdr.chunk_size;
    }
    std::uint32_t chunk_of(std::uint64_t off) const {
        std::uint64_t zrel = (off - hdr.zones_off) % hdr.zone_size;
        std::uint32_t row = static_cast<std::uint32_t>(zrel / hdr.row_size);
        std::uint64_t in_row = zrel % hdr.row_size;
        return row * chunks_per_row + static_cast<std::uint32_t>(in_row / hdr.chunk_size);
    }

    std::uint64_t cm_array_off(std::uint32_t z) const { return zone_off(z); }
    std::uint64_t cm_entry_off(std::uint32_t z, std::uint32_t chunk) const {
        return cm_array_off(z) + std::uint64_t{chunk} * sizeof(ChunkMetaRec);
    }
    /// Does this pool offset land in some zone's ChunkMetaRec array?
    bool in_cm_region(std::uint64_t off, std::uint32_t* zone_out = nullptr) const {
        if (!in_zones(off))
            return false;
        std::uint32_t z = zone_of(off);
        if (off < cm_array_off(z) || off >= cm_array_off(z) + cm_bytes)
            return false;
        if (zone_out)
            *zone_out = z;
        return true;
    }

    std::uint64_t slot_off(std::uint32_t i) const {
        return hdr.log_off + std::uint64_t{i} * hdr.slot_stride;
    }
    std::uint64_t slot_replica_off(std::uint32_t i) const {
        return hdr.log_off + hdr.log_len / 2 + std::uint64_t{i} * hdr.slot_stride;
    }
    std::uint64_t slot_capacity() const { return hdr.slot_stride - kSlotHeaderSize; }
};

/// Build a fresh header + geometry for pool_create. Throws layout_error if
/// the parameters cannot fit at least one chunk column per zone.
PoolGeometry design_pool(const CreateParams& p, std::uint64_t uuid_lo, std::uint64_t uuid_hi);

/// Recompute derived fields from a header already validated by checksum.
PoolGeometry geometry_from_header(const PoolHeader& hdr);

// Size classes: payload capacities are powers of two from kMinSizeClass up;
// a slot occupies (class + header) bytes. Requests too large for the top
// class take whole chunks (coalesced when span > 1).

/// Smallest class whose payload capacity holds `payload` bytes, or 0 if the
/// request needs the large (whole-chunk) path.
std::uint32_t pick_size_class(std::uint64_t payload, std::uint64_t chunk_size);

inline std::uint64_t slot_stride_of(std::uint32_t size_class) {
    return std::uint64_t{size_class} + kObjHeaderSize;
}
inline std::uint32_t slots_per_chunk(std::uint32_t size_class, std::uint64_t chunk_size) {
    return static_cast<std::uint32_t>(chunk_size / slot_stride_of(size_class));
}

// Small helpers for memcpy-able on-media structs.

template <typename T>
T read_struct(const PersistentStore& s, std::uint64_t off) {
    T t;
    std::memcpy(&t, s.read_ptr(off, sizeof(T)), sizeof(T));
    return t;
}

template <typename T>
void write_struct(PersistentStore& s, std::uint64_t off, const T& t) {
    s.write(off, std::span<const std::byte>(reinterpret_cast<const std::byte*>(&t), sizeof(T)));
}

template <typename T>
std::span<const std::byte> struct_bytes(const T& t) {
    return {reinterpret_cast<const std::byte*>(&t), sizeof(T)};
}

} // namespace pgl::layout
