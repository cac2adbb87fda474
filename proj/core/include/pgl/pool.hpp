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
#include "pgl/parity.hpp"
#include "pgl/store.hpp"
#include "pgl/types.hpp"
#include "pgl/zone.hpp"

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace pgl {

class TxLogManager;
class RecoveryManager;

/// Runtime options; none of these are recorded in the pool file.
struct PoolOptions {
    Features features = Features::MLPC;
    DetectMode detect = DetectMode::Default;
    std::uint32_t scrub_interval = 100000; // transactions between scrubs
    FreezePolicy freeze_policy = FreezePolicy::Block;
    bool media_interceptor = false; // install the page-fault interceptor
    std::uint64_t parity_atomic_threshold = 8192;
    std::uint64_t parity_lock_granule = 8192;
};

/// Cumulative commit-path statistics, mostly for tests and the bench
/// harness.
struct PoolCounters {
    std::atomic<std::uint64_t> commits{0};
    std::atomic<std::uint64_t> aborts{0};
    std::atomic<std::uint64_t> log_entries{0};
    std::atomic<std::uint64_t> bytes_logged{0};
    std::atomic<std::uint64_t> parity_deltas{0};
    std::atomic<std::uint64_t> parity_bytes{0};
    std::atomic<std::uint64_t> bytes_allocated{0};
    std::atomic<std::uint64_t> objects_allocated{0};
    std::atomic<std::uint64_t> vulnerable_total{0};
    std::atomic<std::uint64_t> vulnerable_window{0};
};

/// One mapped (or simulated) pool file: metadata with replicas, the
/// transaction-log region, and parity-protected zones.
class Pool {
public:
    static std::unique_ptr<Pool> create(const std::string& path,
                                        const layout::CreateParams& params,
                                        PoolOptions opts = {});
    static std::unique_ptr<Pool> create_simulated(const layout::CreateParams& params,
                                                  PoolOptions opts = {});
    static std::unique_ptr<Pool> open(const std::string& path, PoolOptions opts = {});
    /// Open over an existing store (typically a SimStore after a simulated
    /// crash). Runs the same validation and crash recovery as open().
    static std::unique_ptr<Pool> open_from_store(std::unique_ptr<PersistentStore> store,
                                                 PoolOptions opts = {});

    ~Pool();
    Pool(const Pool&) = delete;
    Pool& operator=(const Pool&) = delete;

    const layout::PoolGeometry& geometry() const { return geom_; }
    const PoolOptions& options() const { return opts_; }
    PersistentStore& store() { return *store_; }
    const PersistentStore& store() const { return *store_; }
    std::uint64_t uuid_lo() const { return geom_.hdr.uuid_lo; }
    const std::string& path() const { return path_; }
    std::uint64_t create_zero_fill_ms() const { return zero_fill_ms_; }

    ObjectRef make_ref(std::uint64_t off) const { return ObjectRef{uuid_lo(), off}; }

    /// Translate a ref to the in-process address of its ObjectHeader.
    /// Returns nullptr for the null ref; throws bounds_error if the offset
    /// is outside the pool's data rows (including the parity row and the
    /// metadata regions). Does not check liveness.
    const std::byte* obj_locate(ObjectRef ref) const;

    /// Resolve a ref against the allocator; nullopt when not live.
    std::optional<ObjectPlace> locate_place(ObjectRef ref) const;

    // -- root object --------------------------------------------------------

    ObjectRef root() const;
    /// Return the root object, creating it (zeroed, with the given payload
    /// size and type) on first use.
    ObjectRef root(std::uint64_t payload_size, std::uint32_t type_id);

    // -- freeze gate ---------------------------------------------------------

    /// Block new transactions and wait until outstanding ones (other than
    /// the caller's own, if any) complete. Single owner at a time.
    void freeze();
    void thaw();
    bool frozen() const { return frozen_.load(std::memory_order_acquire); }

    // -- components ---------------------------------------------------------

    std::uint32_t zone_count() const { return geom_.hdr.zone_count; }
    ZoneAllocator& zone(std::uint32_t z) { return *zones_[z]; }
    ParityEngine& parity(std::uint32_t z) { return *parity_[z]; }
    TxLogManager& logmgr() { return *logmgr_; }
    RecoveryManager& recovery() { return *recovery_; }

    /// Column ranges of zone z where the XOR invariant fails (log-claimed
    /// ranges excluded).
    std::vector<Range> parity_check_zone(std::uint32_t z);

    PoolCounters& counters() { return counters_; }

    /// Rewrite both header copies from the in-memory header (after a root
    /// update or a repair).
    void rewrite_headers();

    /// Tear the pool down without flushing and hand back the store; used by
    /// crash-test harnesses to reopen over a post-crash image.
    std::unique_ptr<PersistentStore> release_store();

    // Transaction begin/end gate (called by the transaction layer).
    void tx_enter();
    void tx_exit();

private:
    Pool(std::unique_ptr<PersistentStore> store, PoolOptions opts, std::string path);

    void init_fresh(const layout::PoolGeometry& g);
    void load_existing();
    void validate_metadata_blocks();
    void build_components();
    void set_root_offset(std::uint64_t off);

    std::unique_ptr<PersistentStore> store_;
    PoolOptions opts_;
    std::string path_;
    layout::PoolGeometry geom_;
    std::uint64_t zero_fill_ms_ = 0;

    std::vector<std::unique_ptr<ZoneAllocator>> zones_;
    std::vector<std::unique_ptr<ParityEngine>> parity_;
    std::unique_ptr<TxLogManager> logmgr_;
    std::unique_ptr<RecoveryManager> recovery_;

    std::atomic<bool> frozen_{false};
    std::atomic<std::uint32_t> active_txs_{0};
    std::mutex gate_mu_;
    std::condition_variable gate_cv_;
    std::mutex header_mu_;
    std::mutex root_mu_;

    PoolCounters counters_;
};

/// True when the calling thread has an active transaction on this pool
/// (used by the freeze gate to avoid waiting on itself).
bool this_thread_in_tx(const Pool& pool);

/// True when the calling thread's transaction on this pool has started its
/// commit; online recovery is impossible past that point.
bool this_thread_committing(const Pool& pool);

} // namespace pgl
