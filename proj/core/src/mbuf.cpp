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

#include "pgl/mbuf.hpp"

#include "pgl/errors.hpp"

#include <cstring>
#include <random>

namespace pgl {

std::uint64_t mbuf_canary_value() {
    static const std::uint64_t v = [] {
        std::random_device rd;
        return (std::uint64_t{rd()} << 32) ^ rd() ^ 0x9e3779b97f4a7c15ull;
    }();
    return v;
}

MicroBuffer::MicroBuffer(ObjectRef ref, std::uint64_t payload_cap, bool allocated)
    : ref_(ref), cap_(payload_cap), allocated_(allocated) {
    std::size_t total = 8 + layout::kObjHeaderSize + cap_ + 8;
    buf_ = std::make_unique<std::byte[]>(total);
    std::uint64_t canary = mbuf_canary_value();
    std::memcpy(buf_.get(), &canary, 8);
    std::memcpy(buf_.get() + total - 8, &canary, 8);
    if (allocated_)
        std::memset(header_ptr(), 0, layout::kObjHeaderSize + cap_);
}

layout::ObjectHeader MicroBuffer::header() const {
    layout::ObjectHeader h;
    std::memcpy(&h, header_ptr(), sizeof(h));
    return h;
}

void MicroBuffer::set_header(const layout::ObjectHeader& h) {
    std::memcpy(header_ptr(), &h, sizeof(h));
}

void MicroBuffer::add_range(std::uint64_t off, std::uint64_t len) {
    if (off + len > cap_)
        throw bounds_error("add_range outside object payload");
    range_set_insert(ranges_, Range{off, len});
}

bool MicroBuffer::canary_ok() const {
    std::uint64_t front, back;
    std::memcpy(&front, buf_.get(), 8);
    std::memcpy(&back, buf_.get() + 8 + layout::kObjHeaderSize + cap_, 8);
    return front == mbuf_canary_value() && back == mbuf_canary_value();
}

void MicroBuffer::snapshot_pristine() {
    pristine_ = std::make_unique<std::byte[]>(cap_);
    std::memcpy(pristine_.get(), payload_ptr(), cap_);
}

std::vector<Range> MicroBuffer::diff_ranges() const {
    std::vector<Range> out;
    if (!pristine_)
        return out;
    const std::byte* a = pristine_.get();
    const std::byte* b = payload_ptr();
    std::uint64_t i = 0;
    while (i < cap_) {
        if (a[i] == b[i]) {
            ++i;
            continue;
        }
        std::uint64_t j = i + 1;
        while (j < cap_ && a[j] != b[j])
            ++j;
        range_set_insert(out, Range{i, j - i});
        i = j;
    }
    // Merge runs separated by less than a word; per-byte log entries are
    // not worth their headers.
    std::vector<Range> merged;
    for (const Range& r : out) {
        if (!merged.empty() && r.off - merged.back().end() < 8)
            merged.back().len = r.end() - merged.back().off;
        else
            merged.push_back(r);
    }
    return merged;
}

MicroBuffer* BufferIndex::find(std::uint64_t obj_off) {
    auto it = bufs_.find(obj_off);
    return it == bufs_.end() ? nullptr : it->second.get();
}

MicroBuffer& BufferIndex::adopt(std::unique_ptr<MicroBuffer> buf) {
    auto off = buf->ref().offset;
    auto [it, inserted] = bufs_.emplace(off, std::move(buf));
    if (!inserted)
        throw usage_error("object already has a micro-buffer in this transaction");
    return *it->second;
}

void BufferIndex::clear() { bufs_.clear(); }

} // namespace pgl
