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

#include <cstddef>
#include <cstdint>
#include <vector>

namespace pgl {

inline constexpr std::uint64_t kPageSize = 4096;

/// Durable object identifier: pool id (low 64 bits of the pool UUID) plus
/// the byte offset of the object header from the start of the pool file.
/// The only kind of cross-object link that may be stored persistently.
struct ObjectRef {
    std::uint64_t pool_uuid_lo = 0;
    std::uint64_t offset = 0;

    constexpr bool is_null() const { return offset == 0; }
    constexpr bool operator==(const ObjectRef&) const = default;
};

inline constexpr ObjectRef kNullRef{};

/// Half-open byte range [off, off + len).
struct Range {
    std::uint64_t off = 0;
    std::uint64_t len = 0;

    constexpr std::uint64_t end() const { return off + len; }
    constexpr bool empty() const { return len == 0; }
    constexpr bool contains(std::uint64_t p) const { return p >= off && p < end(); }
    constexpr bool overlaps(const Range& o) const {
        return off < o.end() && o.off < end();
    }
    constexpr bool operator==(const Range&) const = default;
};

/// Insert a range into a sorted, coalesced range set, merging overlapping
/// and adjacent entries.
void range_set_insert(std::vector<Range>& set, Range r);

/// Library feature levels used for overhead comparisons. Full protection
/// (parity plus checksums) is the default; the lower levels exist so the
/// cost of each mechanism can be measured in isolation.
enum class Features : std::uint8_t {
    Baseline, ///< micro-buffering and redo logs only
    ML,       ///< + metadata and log replication
    MLP,      ///< + object parity
    MLPC,     ///< + object checksums (default)
};

inline constexpr bool features_ge(Features a, Features b) {
    return static_cast<int>(a) >= static_cast<int>(b);
}

/// Checksum verification policy for reads that bypass micro-buffering.
enum class DetectMode : std::uint8_t {
    Default,      ///< verify only when an object is micro-buffered
    Scrub,        ///< Default, plus a periodic whole-pool scrub
    Conservative, ///< verify on every access
};

/// What tx_begin does while the pool is frozen for recovery.
enum class FreezePolicy : std::uint8_t {
    Block, ///< wait until the pool thaws
    Fail,  ///< throw frozen_error
};

} // namespace pgl
