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

#include "pgl/store.hpp"

#include "pgl/errors.hpp"

#include <cerrno>
#include <cstring>
#include <random>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

namespace pgl {

void PersistentStore::check_range(std::uint64_t off, std::uint64_t len) const {
    if (off > length_ || len > length_ - off)
        throw bounds_error("store range [" + std::to_string(off) + ", +" +
                           std::to_string(len) + ") outside pool of " +
                           std::to_string(length_) + " bytes");
}

void PersistentStore::read(std::uint64_t off, std::span<std::byte> out) const {
    std::memcpy(out.data(), read_ptr(off, out.size()), out.size());
}

std::uint64_t PersistentStore::read_u64(std::uint64_t off) const {
    std::uint64_t v;
    std::memcpy(&v, read_ptr(off, 8), 8);
    return v;
}

std::uint32_t PersistentStore::read_u32(std::uint64_t off) const {
    std::uint32_t v;
    std::memcpy(&v, read_ptr(off, 4), 4);
    return v;
}

namespace {

/// mmap-backed pool file. persist() is a no-op: dirty pages of a shared
/// mapping survive process death in the page cache, and the full msync
/// happens on close. Machine-crash durability is out of scope for the
/// emulated backend; the simulated store models that regime instead.
class MappedStore final : public PersistentStore {
public:
    MappedStore(const std::string& path, std::uint64_t length, bool create) {
        if (length == 0 || length % kPageSize != 0)
            throw layout_error("pool length must be a positive multiple of 4096");
        int flags = O_RDWR | (create ? O_CREAT | O_TRUNC : 0);
        fd_ = ::open(path.c_str(), flags, 0644);
        if (fd_ < 0)
            throw io_error("open " + path + ": " + std::strerror(errno));
        if (create) {
            if (::ftruncate(fd_, static_cast<off_t>(length)) != 0) {
                int e = errno;
                ::close(fd_);
                throw io_error("ftruncate " + path + ": " + std::strerror(e));
            }
        } else {
            struct stat st{};
            if (::fstat(fd_, &st) != 0 || static_cast<std::uint64_t>(st.st_size) < length) {
                ::close(fd_);
                throw io_error("pool file " + path + " shorter than requested length");
            }
        }
        void* p = ::mmap(nullptr, length, PROT_READ | PROT_WRITE, MAP_SHARED, fd_, 0);
        if (p == MAP_FAILED) {
            int e = errno;
            ::close(fd_);
            throw io_error("mmap " + path + ": " + std::strerror(e));
        }
        base_ = static_cast<std::byte*>(p);
        length_ = length;
        if (create)
            std::memset(base_, 0, length); // zero-fill is the pool init cost
    }

    ~MappedStore() override {
        ::msync(base_, length_, MS_SYNC);
        ::munmap(base_, length_);
        ::close(fd_);
    }

    Backend backend() const override { return Backend::FileMapped; }

    const std::byte* read_ptr(std::uint64_t off, std::uint64_t len) const override {
        check_range(off, len);
        return base_ + off;
    }

    void write(std::uint64_t off, std::span<const std::byte> data) override {
        check_range(off, data.size());
        std::memcpy(base_ + off, data.data(), data.size());
    }

    void fill(std::uint64_t off, std::uint64_t len, std::byte v) override {
        check_range(off, len);
        std::memset(base_ + off, static_cast<int>(v), len);
    }

    void xor_bytes(std::uint64_t off, std::span<const std::byte> delta) override {
        check_range(off, delta.size());
        std::byte* dst = base_ + off;
        std::size_t n = delta.size();
        std::size_t i = 0;
        for (; i + 8 <= n; i += 8) {
            std::uint64_t d, v;
            std::memcpy(&d, delta.data() + i, 8);
            std::memcpy(&v, dst + i, 8);
            v ^= d;
            std::memcpy(dst + i, &v, 8);
        }
        for (; i < n; ++i)
            dst[i] ^= delta[i];
    }

    void xor_word_atomic(std::uint64_t off, std::uint64_t delta) override {
        check_range(off, 8);
        if (off % 8 != 0)
            throw usage_error("xor_word_atomic: misaligned offset");
        auto* w = reinterpret_cast<std::uint64_t*>(base_ + off);
        std::atomic_ref<std::uint64_t>(*w).fetch_xor(delta, std::memory_order_relaxed);
    }

    void atomic_store64(std::uint64_t off, std::uint64_t value) override {
        check_range(off, 8);
        if (off % 8 != 0)
            throw usage_error("atomic_store64: misaligned offset");
        auto* w = reinterpret_cast<std::uint64_t*>(base_ + off);
        std::atomic_ref<std::uint64_t>(*w).store(value, std::memory_order_release);
    }

    void persist(std::uint64_t off, std::uint64_t len) override {
        check_range(off, len);
        std::atomic_thread_fence(std::memory_order_release);
    }

    std::byte* raw_base() override { return base_; }

private:
    int fd_ = -1;
    std::byte* base_ = nullptr;
};

} // namespace

std::unique_ptr<PersistentStore> map_pool(const std::string& path,
                                          std::uint64_t length, bool create) {
    return std::make_unique<MappedStore>(path, length, create);
}

// ---------------------------------------------------------------------------
// SimStore

SimStore::SimStore(std::uint64_t length) {
    if (length == 0 || length % kPageSize != 0)
        throw layout_error("pool length must be a positive multiple of 4096");
    current_.assign(length, std::byte{0});
    committed_.assign(length, std::byte{0});
    length_ = length;
}

SimStore::SimStore(std::vector<std::byte> image) {
    if (image.empty() || image.size() % kPageSize != 0)
        throw layout_error("image length must be a positive multiple of 4096");
    length_ = image.size();
    committed_ = image;
    current_ = std::move(image);
}

const std::byte* SimStore::read_ptr(std::uint64_t off, std::uint64_t len) const {
    check_range(off, len);
    return current_.data() + off;
}

void SimStore::tick() {
    if (dead_.load(std::memory_order_relaxed))
        throw crash_signal{ops_.load()};
    std::uint64_t n = ops_.fetch_add(1) + 1;
    std::uint64_t at = crash_at_.load();
    if (at != 0 && n >= at) {
        crash_at_.store(0);
        // Dead until crash(): cleanup attempts during unwind must not
        // reach the post-crash image.
        dead_.store(true);
        throw crash_signal{n};
    }
}

void SimStore::mark_pending(std::uint64_t off, std::uint64_t len) {
    if (len == 0)
        return;
    std::uint64_t first = off & ~std::uint64_t{7};
    std::uint64_t last = (off + len - 1) & ~std::uint64_t{7};
    for (std::uint64_t u = first; u <= last; u += 8)
        pending_[u] = true;
}

void SimStore::write(std::uint64_t off, std::span<const std::byte> data) {
    check_range(off, data.size());
    tick();
    std::lock_guard lk(mu_);
    std::memcpy(current_.data() + off, data.data(), data.size());
    mark_pending(off, data.size());
}

void SimStore::fill(std::uint64_t off, std::uint64_t len, std::byte v) {
    check_range(off, len);
    tick();
    std::lock_guard lk(mu_);
    std::memset(current_.data() + off, static_cast<int>(v), len);
    mark_pending(off, len);
}

void SimStore::xor_bytes(std::uint64_t off, std::span<const std::byte> delta) {
    check_range(off, delta.size());
    tick();
    std::lock_guard lk(mu_);
    for (std::size_t i = 0; i < delta.size(); ++i)
        current_[off + i] ^= delta[i];
    mark_pending(off, delta.size());
}

void SimStore::xor_word_atomic(std::uint64_t off, std::uint64_t delta) {
    check_range(off, 8);
    if (off % 8 != 0)
        throw usage_error("xor_word_atomic: misaligned offset");
    tick();
    std::lock_guard lk(mu_);
    std::uint64_t v;
    std::memcpy(&v, current_.data() + off, 8);
    v ^= delta;
    std::memcpy(current_.data() + off, &v, 8);
    pending_[off] = true;
}

void SimStore::atomic_store64(std::uint64_t off, std::uint64_t value) {
    check_range(off, 8);
    if (off % 8 != 0)
        throw usage_error("atomic_store64: misaligned offset");
    tick();
    std::lock_guard lk(mu_);
    std::memcpy(current_.data() + off, &value, 8);
    pending_[off] = true;
}

void SimStore::persist(std::uint64_t off, std::uint64_t len) {
    check_range(off, len);
    if (len == 0)
        return;
    tick();
    std::lock_guard lk(mu_);
    // Flush every unit the range touches, like a cache-line write-back.
    std::uint64_t first = off & ~std::uint64_t{7};
    std::uint64_t last = (off + len - 1) & ~std::uint64_t{7};
    auto it = pending_.lower_bound(first);
    while (it != pending_.end() && it->first <= last) {
        std::memcpy(committed_.data() + it->first, current_.data() + it->first, 8);
        it = pending_.erase(it);
    }
}

std::vector<std::uint64_t> SimStore::pending_units() const {
    std::lock_guard lk(mu_);
    std::vector<std::uint64_t> out;
    out.reserve(pending_.size());
    for (auto& [u, _] : pending_)
        out.push_back(u);
    return out;
}

std::vector<std::byte> SimStore::crash_image(std::uint64_t seed) const {
    std::lock_guard lk(mu_);
    std::vector<std::byte> img = committed_;
    std::mt19937_64 rng(seed);
    for (auto& [u, _] : pending_) {
        if (rng() & 1)
            std::memcpy(img.data() + u, current_.data() + u, 8);
    }
    return img;
}

std::vector<std::byte> SimStore::crash_image_subset(std::uint64_t keep_mask) const {
    std::lock_guard lk(mu_);
    std::vector<std::byte> img = committed_;
    std::size_t i = 0;
    for (auto& [u, _] : pending_) {
        if (i < 64 && (keep_mask >> i) & 1)
            std::memcpy(img.data() + u, current_.data() + u, 8);
        ++i;
    }
    return img;
}

void SimStore::crash(std::uint64_t seed) {
    auto img = crash_image(seed);
    std::lock_guard lk(mu_);
    committed_ = img;
    current_ = std::move(img);
    pending_.clear();
    crash_at_.store(0);
    dead_.store(false);
}

void SimStore::arm_crash_after(std::uint64_t n) {
    dead_.store(false);
    crash_at_.store(n == 0 ? 0 : ops_.load() + n);
}

std::vector<std::byte> crash_and_recover_image(PersistentStore& store,
                                               std::uint64_t seed) {
    auto* sim = dynamic_cast<SimStore*>(&store);
    if (!sim)
        throw usage_error("crash_and_recover_image requires the simulated backend");
    return sim->crash_image(seed);
}

} // namespace pgl
