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

#include "pgl/mbuf.hpp"
#include "pgl/pool.hpp"

#include <span>
#include <vector>

namespace pgl {

// ---------------------------------------------------------------------------
// Redo-log slots
//
// Each committing transaction owns one slot: a 64-byte header (commit
// marker, byte count, overflow extent) followed by checksummed entries, with
// a byte-identical replica slot in the second half of the log region. Logs
// larger than a slot move wholesale into an overflow extent claimed from
// zone heap space; extent bytes count as zeros in all parity arithmetic
// until the slot releases them.

class TxLogManager {
public:
    explicit TxLogManager(Pool& pool);

    int acquire_slot(); // blocks until a slot frees up
    void release_slot(int slot);

    /// Write the serialized log (+ replica when replicate is set), persist
    /// it, then publish the slot with marker = logs-complete.
    void seal(int slot, std::span<const std::byte> blob, bool replicate);

    void mark_done(int slot);
    /// Garbage-collect a done slot: release any overflow extent (zeroing
    /// its bytes), clear the header, set marker = empty.
    void gc(int slot);
    /// Cleanup for an abort after seal() partially ran: restores parity
    /// consistency over any claimed extent and clears the slot.
    void abort_cleanup(int slot);

    /// Pool ranges currently occupied by overflow log entries. Parity
    /// checks and reconstruction treat these as zeros.
    std::vector<Range> claimed_ranges() const;

    std::uint32_t slot_count() const { return geom_.hdr.slot_count; }

    // -- recovery support ---------------------------------------------------

    struct Entry {
        std::uint64_t target = 0;
        std::vector<std::byte> payload;
    };
    struct SlotImage {
        std::uint64_t marker = layout::kSlotEmpty;
        layout::SlotHeader header{};
        std::vector<Entry> entries;
        bool parse_ok = true;
    };
    /// Read and checksum-verify a slot's entries, falling back to the
    /// replica per entry. parse_ok is false when both copies of some entry
    /// are corrupt.
    SlotImage parse_slot(int slot) const;

    /// Rebuild the volatile claimed-extent table from slot headers.
    void rebuild_claims();

    /// Finish a slot during crash recovery: publish done, zero any overflow
    /// extent and rebuild the parity columns it spanned, then clear the
    /// slot. Idempotent from any crash point inside it.
    void recover_finish_slot(int slot, bool parity);

private:
    void write_slot_header(int slot, const layout::SlotHeader& h, bool replica_too);
    std::uint64_t entry_area(int slot, bool replica) const;

    Pool& pool_;
    const layout::PoolGeometry& geom_;

    mutable std::mutex mu_;
    std::condition_variable slot_cv_;
    std::vector<bool> busy_;
    std::vector<Range> extents_; // by slot; len 0 = none
};

// ---------------------------------------------------------------------------
// Transactions
//
// One top-level transaction per thread, with nesting by depth count. All
// object writes stage in micro-buffers; durable effects happen only inside
// commit, in this order: refresh checksums, persist+replicate redo logs,
// publish the logs-complete marker, write back object ranges, fold deltas
// into parity, publish done, garbage-collect.

class Transaction {
public:
    enum class State : std::uint8_t { Active, Committing, Aborted, Done };

    Pool& pool() const { return pool_; }
    State state() const { return state_; }
    int depth() const { return depth_; }

private:
    friend void pgl_tx_begin(Pool&);
    friend void pgl_tx_commit();
    friend void pgl_tx_end();
    friend void pgl_tx_abort();
    friend bool pgl_tx_active();
    friend std::byte* pgl_tx_open(ObjectRef);
    friend std::byte* pgl_tx_add_range(ObjectRef, std::uint64_t, std::uint64_t);
    friend ObjectRef pgl_tx_alloc(std::uint64_t, std::uint32_t);
    friend void pgl_tx_free(ObjectRef);
    friend const std::byte* pgl_get(Pool&, ObjectRef);
    friend void pgl_commit(Pool&, std::byte*);
    friend bool this_thread_in_tx(const Pool&);
    friend void tx_detach_thread();
    friend class TxFriend; // test access

    explicit Transaction(Pool& pool) : pool_(pool) {}

public:
    ~Transaction();

private:
    MicroBuffer* open_buffer(ObjectRef ref, bool verify);
    void commit_top();
    void abort_internal();
    void serialize_blob(std::vector<std::byte>& blob) const;
    void apply_phase();
    void refresh_checksums();
    void release_buffers();
    void require_active() const;

    Pool& pool_;
    State state_ = State::Active;
    int depth_ = 1;
    bool commit_ran_ = false;
    BufferIndex buffers_;
    std::vector<AllocReservation> allocs_;
    std::vector<FreeIntent> frees_;
    int slot_ = -1;
};

void pgl_tx_begin(Pool& pool);
void pgl_tx_commit();
void pgl_tx_end();
void pgl_tx_abort();
bool pgl_tx_active();

/// Micro-buffered access to an object inside the current transaction;
/// returns the shadow payload address. Verifies (and repairs) object
/// integrity on first open.
std::byte* pgl_tx_open(ObjectRef ref);

/// pgl_tx_open plus marking [off, off+len) of the payload as modified.
std::byte* pgl_tx_add_range(ObjectRef ref, std::uint64_t off, std::uint64_t len);

ObjectRef pgl_tx_alloc(std::uint64_t size, std::uint32_t type_id);
void pgl_tx_free(ObjectRef ref);

/// Read access. Outside a transaction this is the raw persistent address
/// (checksum-verified only in conservative mode); inside, the object's
/// micro-buffer. Returns the payload address, nullptr for the null ref.
const std::byte* pgl_get(Pool& pool, ObjectRef ref);

/// Single-object updates without an explicit transaction: pgl_open returns
/// a verified micro-buffer; pgl_commit diffs it against its open-time copy
/// and commits the changed ranges in an implicit transaction. pgl_discard
/// drops the buffer without writing anything.
std::byte* pgl_open(Pool& pool, ObjectRef ref);
void pgl_commit(Pool& pool, std::byte* uobj);
void pgl_discard(Pool& pool, std::byte* uobj);

/// Drop the calling thread's transaction state without touching the store;
/// for crash-test harnesses after a simulated crash unwound a commit.
void tx_detach_thread();

/// RAII transaction scope: aborts on destruction unless commit() ran.
class TxScope {
public:
    explicit TxScope(Pool& pool) { pgl_tx_begin(pool); }
    ~TxScope() {
        if (!done_) {
            try {
                pgl_tx_end();
            } catch (...) {
            }
        }
    }
    TxScope(const TxScope&) = delete;
    TxScope& operator=(const TxScope&) = delete;

    void commit() {
        pgl_tx_commit();
        pgl_tx_end();
        done_ = true;
    }
    void abort() {
        pgl_tx_abort();
        pgl_tx_end();
        done_ = true;
    }

private:
    bool done_ = false;
};

} // namespace pgl
