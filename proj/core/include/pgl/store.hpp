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

#include "pgl/types.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace pgl {

/// Persistence abstraction over a pool of bytes.
///
/// The durability contract, not any particular hardware instruction, is the
/// module boundary:
///   - persist(off, len) makes all prior stores to the range durable and
///     orders them before anything stored afterwards;
///   - atomic_store64 updates an aligned 8-byte unit indivisibly, so a crash
///     observes the old or the new value, never a mix;
///   - plain writes reach durability in independent 8-byte units, each of
///     which a crash may keep or drop (strictly more adversarial than
///     cache-line-granular hardware).
///
/// All mutation goes through this interface so the simulated backend can
/// model crashes; reads may use raw pointers obtained from read_ptr().
class PersistentStore {
public:
    enum class Backend : std::uint8_t { FileMapped, Simulated };

    virtual ~PersistentStore() = default;

    virtual Backend backend() const = 0;
    std::uint64_t length() const { return length_; }

    // -- reads ------------------------------------------------------------

    /// Pointer into the live image; valid for [off, off+len). The pointer
    /// stays valid for the lifetime of the store.
    virtual const std::byte* read_ptr(std::uint64_t off, std::uint64_t len) const = 0;

    void read(std::uint64_t off, std::span<std::byte> out) const;
    std::uint64_t read_u64(std::uint64_t off) const;
    std::uint32_t read_u32(std::uint64_t off) const;

    // -- mutation ---------------------------------------------------------

    virtual void write(std::uint64_t off, std::span<const std::byte> data) = 0;
    virtual void fill(std::uint64_t off, std::uint64_t len, std::byte v) = 0;

    /// Plain (non-atomic) range XOR; callers must hold exclusive ownership
    /// of the range.
    virtual void xor_bytes(std::uint64_t off, std::span<const std::byte> delta) = 0;

    /// Atomic 8-byte fetch-XOR at an aligned offset. Safe for concurrent
    /// use on overlapping words.
    virtual void xor_word_atomic(std::uint64_t off, std::uint64_t delta) = 0;

    virtual void atomic_store64(std::uint64_t off, std::uint64_t value) = 0;

    /// Durability and ordering point for [off, off+len). Empty ranges are
    /// no-ops.
    virtual void persist(std::uint64_t off, std::uint64_t len) = 0;

    /// Mutable mapping base for backends that have one (page-protection
    /// fault injection needs it); nullptr otherwise.
    virtual std::byte* raw_base() { return nullptr; }

protected:
    void check_range(std::uint64_t off, std::uint64_t len) const;
    std::uint64_t length_ = 0;
};

/// Map a pool file into the process. length must be a multiple of the page
/// size. With create set, the file is created (or truncated) and zero-filled;
/// the fill is the one-time initialization cost of a parity-coded pool.
std::unique_ptr<PersistentStore> map_pool(const std::string& path,
                                          std::uint64_t length, bool create);

/// In-DRAM backend that models crash behavior for randomized testing.
///
/// Every mutation lands in the live image and marks the covered 8-byte
/// units pending; persist() moves pending units into the committed image.
/// A crash keeps each pending unit independently with probability 1/2,
/// which samples the 2^k possible post-crash images uniformly.
class SimStore final : public PersistentStore {
public:
    explicit SimStore(std::uint64_t length);
    /// Rebuild a store around an existing byte image (all units committed).
    explicit SimStore(std::vector<std::byte> image);

    Backend backend() const override { return Backend::Simulated; }

    const std::byte* read_ptr(std::uint64_t off, std::uint64_t len) const override;
    void write(std::uint64_t off, std::span<const std::byte> data) override;
    void fill(std::uint64_t off, std::uint64_t len, std::byte v) override;
    void xor_bytes(std::uint64_t off, std::span<const std::byte> delta) override;
    void xor_word_atomic(std::uint64_t off, std::uint64_t delta) override;
    void atomic_store64(std::uint64_t off, std::uint64_t value) override;
    void persist(std::uint64_t off, std::uint64_t len) override;

    // -- crash testing ----------------------------------------------------

    /// Offsets of units whose live value is not yet durable.
    std::vector<std::uint64_t> pending_units() const;

    /// Post-crash image with a uniformly sampled subset of pending units
    /// applied. Does not modify the store.
    std::vector<std::byte> crash_image(std::uint64_t seed) const;

    /// Post-crash image applying exactly the pending units whose index in
    /// pending_units() has its bit set in keep_mask (for exhaustive
    /// enumeration of small k).
    std::vector<std::byte> crash_image_subset(std::uint64_t keep_mask) const;

    /// Transition this store to a sampled post-crash state in place.
    void crash(std::uint64_t seed);

    /// Arm a crash point: the n-th subsequent mutating operation (writes,
    /// fills, XORs, atomic stores, and persists all count) throws
    /// crash_signal before taking effect. Pass 0 to disarm.
    void arm_crash_after(std::uint64_t n);

    /// Mutating operations performed so far (for choosing crash points).
    std::uint64_t mutation_count() const { return ops_.load(); }

private:
    void mark_pending(std::uint64_t off, std::uint64_t len);
    void tick();

    mutable std::mutex mu_;
    std::vector<std::byte> current_;
    std::vector<std::byte> committed_;
    std::map<std::uint64_t, bool> pending_; // unit offset -> true
    std::atomic<std::uint64_t> ops_{0};
    std::atomic<std::uint64_t> crash_at_{0}; // 0 = disarmed
    std::atomic<bool> dead_{false};          // fired crash point, pre-crash()
};

/// Post-crash image of a simulated store (every pending unit independently
/// kept or dropped). Errors on a file-mapped backend.
std::vector<std::byte> crash_and_recover_image(PersistentStore& store,
                                               std::uint64_t seed);

} // namespace pgl
