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

#include <memory>
#include <shared_mutex>
#include <span>
#include <vector>

namespace pgl {

/// delta[i] = old[i] XOR new[i]. Applying a delta twice is the identity.
std::vector<std::byte> delta_compute(std::span<const std::byte> old_bytes,
                                     std::span<const std::byte> new_bytes);

/// Row/column arithmetic for one zone. A range column is the vertical slice
/// [c, c+len) across every row; the XOR of the data rows over a column
/// equals the parity row's slice (with log-claimed ranges counted as zero).
struct ParityGeometry {
    std::uint64_t zone_off = 0;
    std::uint64_t row_size = 0;
    std::uint32_t data_rows = 0;
    std::uint64_t lock_granule = 8192;

    std::uint64_t parity_base() const { return zone_off + std::uint64_t{data_rows} * row_size; }
    std::uint64_t column_of(std::uint64_t pool_off) const {
        return (pool_off - zone_off) % row_size;
    }
    std::uint32_t row_of(std::uint64_t pool_off) const {
        return static_cast<std::uint32_t>((pool_off - zone_off) / row_size);
    }
    std::uint64_t member_off(std::uint32_t row, std::uint64_t column) const {
        return zone_off + std::uint64_t{row} * row_size + column;
    }
    std::uint32_t lock_count() const {
        return static_cast<std::uint32_t>((row_size + lock_granule - 1) / lock_granule);
    }
};

/// Maintains one zone's parity row.
///
/// Deltas below the threshold are applied with word-sized atomic XOR under
/// shared range locks, so concurrent committers touching the same parity
/// bytes need no ordering; larger deltas take the range locks exclusively
/// and use plain wide XOR. Parity is persisted immediately after each
/// application, before the owning transaction clears its commit marker.
class ParityEngine {
public:
    ParityEngine(PersistentStore& store, ParityGeometry geom,
                 std::uint64_t atomic_threshold);

    const ParityGeometry& geom() const { return geom_; }

    /// Fold a modified data range into parity. data_off addresses the data
    /// row bytes (pool-absolute); the range may cross row boundaries and is
    /// split into per-row column segments internally.
    void apply_data_delta(std::uint64_t data_off, std::span<const std::byte> delta);

    /// Apply a delta at a column offset of this zone's parity row.
    void apply(std::uint64_t column_off, std::span<const std::byte> delta);

    /// Rebuild parity over columns [column_off, +len) from a full-column
    /// XOR of the data rows, substituting zeros for excluded (log-claimed)
    /// pool ranges. Used by crash recovery; needs exclusive pool access.
    void recompute(std::uint64_t column_off, std::uint64_t len,
                   std::span<const Range> excluded);

    /// Rebuild one column member (a data-row range or the matching parity
    /// range) from the other members, write it back, and persist. The
    /// target range must not cross a row boundary.
    void reconstruct_member(std::uint64_t member_off, std::uint64_t len,
                            std::span<const Range> excluded);

    /// XOR of every member of each column, zeros substituted for excluded
    /// ranges; returns the column ranges where the result is nonzero.
    std::vector<Range> check(std::span<const Range> excluded) const;

private:
    void apply_segment(std::uint64_t column_off, std::span<const std::byte> delta,
                       bool exclusive);
    void xor_column_window(std::vector<std::byte>& acc, std::uint32_t row,
                           std::uint64_t column_off,
                           std::span<const Range> excluded,
                           std::uint64_t skip_member_off) const;

    PersistentStore& store_;
    ParityGeometry geom_;
    std::uint64_t threshold_;
    mutable std::vector<std::shared_mutex> locks_;
};

} // namespace pgl
