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
#include <unordered_map>
#include <vector>

namespace pgl {

/// The per-process canary constant. Randomized at startup so a stray writer
/// cannot forge it deterministically.
std::uint64_t mbuf_canary_value();

/// Volatile shadow copy of one object, where all transactional writes
/// stage. Allocated from the ordinary process heap so memory-debugging
/// tools see it; guarded by canary words on both sides of the shadow (a
/// leading one in the buffer header and a trailing one past the payload),
/// checked before anything is written back.
///
/// In-heap layout: [canary][ObjectHeader shadow][payload, capacity bytes][canary]
class MicroBuffer {
public:
    MicroBuffer(ObjectRef ref, std::uint64_t payload_cap, bool allocated);

    ObjectRef ref() const { return ref_; }
    std::uint64_t payload_cap() const { return cap_; }
    bool allocated() const { return allocated_; }
    bool modified() const { return allocated_ || !ranges_.empty(); }

    std::byte* header_ptr() { return buf_.get() + 8; }
    const std::byte* header_ptr() const { return buf_.get() + 8; }
    std::byte* payload_ptr() { return buf_.get() + 8 + layout::kObjHeaderSize; }
    const std::byte* payload_ptr() const { return buf_.get() + 8 + layout::kObjHeaderSize; }

    layout::ObjectHeader header() const;
    void set_header(const layout::ObjectHeader& h);

    /// Record a payload range as to-be-modified; coalesced with neighbors.
    void add_range(std::uint64_t off, std::uint64_t len);
    const std::vector<Range>& ranges() const { return ranges_; }

    bool canary_ok() const;

    /// Keep a pristine copy of the payload for later whole-buffer diffing
    /// (single-object commits outside an explicit transaction).
    void snapshot_pristine();
    bool has_pristine() const { return pristine_ != nullptr; }

    /// Byte ranges where the payload differs from the pristine snapshot,
    /// with sub-word gaps merged.
    std::vector<Range> diff_ranges() const;

private:
    ObjectRef ref_;
    std::uint64_t cap_;
    bool allocated_;
    std::vector<Range> ranges_;
    std::unique_ptr<std::byte[]> buf_;
    std::unique_ptr<std::byte[]> pristine_;
};

/// Per-transaction index: at most one micro-buffer per object, invisible
/// outside the owning transaction.
class BufferIndex {
public:
    MicroBuffer* find(std::uint64_t obj_off);
    MicroBuffer& adopt(std::unique_ptr<MicroBuffer> buf);
    void erase(std::uint64_t obj_off) { bufs_.erase(obj_off); }
    std::size_t size() const { return bufs_.size(); }
    void clear();

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& [off, b] : bufs_)
            fn(*b);
    }

private:
    std::unordered_map<std::uint64_t, std::unique_ptr<MicroBuffer>> bufs_;
};

} // namespace pgl
