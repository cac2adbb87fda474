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

#include "pgl/pool.hpp"

#include <mutex>
#include <string>

namespace pgl {

struct FaultEvent {
    enum class Kind : std::uint8_t { MediaPage, ChecksumMismatch, MetadataMismatch };
    Kind kind = Kind::MediaPage;
    std::uint64_t offset = 0; // MediaPage: 4096-aligned
    std::uint64_t len = kPageSize;
};

struct ScrubReport {
    std::uint64_t objects_scanned = 0;
    std::uint64_t mismatches = 0;
    std::uint64_t repaired = 0;
    std::uint64_t unrecoverable = 0;
    std::uint64_t metadata_repaired = 0;
    std::uint64_t parity_ranges_fixed = 0;
};

struct CheckReport {
    std::uint64_t parity_bad_ranges = 0;
    std::uint64_t checksum_failures = 0;
    std::uint64_t metadata_failures = 0;
    std::uint64_t objects_scanned = 0;
    bool ok() const {
        return parity_bad_ranges == 0 && checksum_failures == 0 && metadata_failures == 0;
    }
};

struct InjectReport {
    std::string kind;
    std::uint64_t offset = 0;
    std::uint64_t len = 0;
    std::uint32_t zone = 0;
    bool parity_member = false;
    bool page_protected = false;
};

/// Online corruption recovery, crash recovery, scrubbing, and fault
/// injection for one pool. One recovery owner at a time; a second
/// simultaneous fault (or a fault detected inside the detector's own
/// commit) raises fatal_fault, on the expectation that the process dies
/// and post-crash recovery runs at the next open.
class RecoveryManager {
public:
    explicit RecoveryManager(Pool& pool);
    ~RecoveryManager();

    enum class Outcome : std::uint8_t { Recovered, Unrecoverable };

    /// Freeze the pool, persist bad-page records, rebuild the affected
    /// column members from parity, verify the objects they carry, clear the
    /// records, thaw. Idempotent under crash: pending records re-execute at
    /// the next open.
    Outcome handle_fault(const FaultEvent& ev);

    /// Redo-log replay at pool open: committed transactions (marker =
    /// logs-complete) are re-applied from their checksummed entries and the
    /// affected parity column ranges are recomputed from full-column XOR;
    /// anything else is discarded untouched.
    void crash_recover();

    /// Re-execute repairs recorded in the bad-page block (idempotent).
    void replay_bad_pages();

    /// Verify pool/zone/chunk metadata and every live object's checksum,
    /// repairing mismatches from parity and replicas; then recompute parity
    /// over any residual inconsistent column ranges.
    ScrubReport scrub();

    /// Verification only; repairs nothing.
    CheckReport check();

    /// Zero one page out-of-band, optionally revoking read access through
    /// the OS page-protection facility so the next load faults like a
    /// poisoned page (file-mapped pools only).
    InjectReport inject_media_page(std::uint64_t page_off, bool protect_page);

    /// Overwrite [off, off+len) with seeded random bytes out-of-band;
    /// len is capped at one chunk-row.
    InjectReport inject_scribble(std::uint64_t off, std::uint64_t len, std::uint64_t seed);

    std::uint64_t last_repair_us() const { return repair_us_.load(); }

    /// Register this pool with the process-wide page-fault interceptor
    /// (done automatically when PoolOptions::media_interceptor is set).
    void register_interceptor();
    void unregister_interceptor();

    /// Validate every chunk-metadata record, reconstructing corrupt ones
    /// from parity. Called during pool open before the allocator loads.
    void validate_chunk_meta();

private:
    Outcome repair_targets(const std::vector<Range>& targets, ScrubReport* rep);
    void repair_zone_range(Range r); // row-splits and reconstructs from parity
    bool repair_metadata_range(Range r);
    bool verify_object(const ObjectPlace& p) const;
    std::vector<Range> object_overlaps(Range r) const;
    void write_bad_pages(const std::vector<std::uint64_t>& pages);
    void clear_bad_pages();

    Pool& pool_;
    std::mutex owner_mu_;
    std::atomic<std::uint64_t> repair_us_{0};
    bool interceptor_registered_ = false;
};

} // namespace pgl
