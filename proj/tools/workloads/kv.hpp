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

#include "pgl/pgl.hpp"

#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace pgl::kv {

enum class Structure : std::uint8_t { List, Ctree, Skiplist, Hashmap };

std::optional<Structure> parse_structure(const std::string& name);
const char* structure_name(Structure s);

// Object type ids.
inline constexpr std::uint32_t kTypeRoot = 1;
inline constexpr std::uint32_t kTypeListNode = 2;
inline constexpr std::uint32_t kTypeCtreeNode = 3;
inline constexpr std::uint32_t kTypeSkipNode = 4;
inline constexpr std::uint32_t kTypeHashTable = 5;
inline constexpr std::uint32_t kTypeHashEntry = 6;

inline constexpr std::uint32_t kSkipMaxHeight = 24;

/// Persistent key-value structures over one pool. Every insertion or
/// removal runs as one transaction; lookups read the persistent objects
/// directly. Mutations of one structure serialize on a per-structure lock
/// (concurrent transactions must not modify the same object).
class Store {
public:
    explicit Store(Pool& pool);

    Pool& pool() { return pool_; }

    /// Insert (or update) key -> value. Returns true when a new key was
    /// added. The list variant treats keys as its values.
    bool insert(Structure s, std::uint64_t key, std::uint64_t value);
    bool remove(Structure s, std::uint64_t key);
    std::optional<std::uint64_t> lookup(Structure s, std::uint64_t key);

    /// Full scan, for verification.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> collect(Structure s);
    std::uint64_t count(Structure s);

private:
    struct RootLinks {
        ObjectRef list_head;
        ObjectRef ctree_root;
        ObjectRef skip_head;
        ObjectRef hash_table;
    };
    static_assert(sizeof(RootLinks) == 64);

    RootLinks read_root() const;

    bool list_insert(std::uint64_t key);
    bool list_remove(std::uint64_t key);
    std::optional<std::uint64_t> list_lookup(std::uint64_t key) const;

    bool ctree_insert(std::uint64_t key, std::uint64_t value);
    bool ctree_remove(std::uint64_t key);
    std::optional<std::uint64_t> ctree_lookup(std::uint64_t key) const;

    bool skip_insert(std::uint64_t key, std::uint64_t value);
    bool skip_remove(std::uint64_t key);
    std::optional<std::uint64_t> skip_lookup(std::uint64_t key) const;
    ObjectRef skip_head_or_create();

    bool hash_insert(std::uint64_t key, std::uint64_t value);
    bool hash_remove(std::uint64_t key);
    std::optional<std::uint64_t> hash_lookup(std::uint64_t key) const;
    ObjectRef hash_table_or_create();

    Pool& pool_;
    ObjectRef root_;
    mutable std::shared_mutex locks_[4];
};

} // namespace pgl::kv
