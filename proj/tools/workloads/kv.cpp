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

#include "kv.hpp"

#include <bit>
#include <cstring>
#include <mutex>

namespace pgl::kv {

namespace {

struct ListNode {
    std::uint64_t value;
    ObjectRef next;
};
static_assert(sizeof(ListNode) == 24);

constexpr std::uint64_t kLeaf = ~std::uint64_t{0};

struct CtreeNode {
    std::uint64_t meta; // kLeaf, or the crit-bit index (63 = MSB)
    std::uint64_t key;
    std::uint64_t value;
    ObjectRef child[2];
};
static_assert(sizeof(CtreeNode) == 56);

struct SkipNode {
    std::uint64_t key;
    std::uint64_t value;
    std::uint32_t height;
    std::uint32_t pad;
    ObjectRef next[kSkipMaxHeight];
};
static_assert(sizeof(SkipNode) == 408);

struct HashEntry {
    std::uint64_t key;
    std::uint64_t value;
    std::uint64_t hash;
    ObjectRef next;
};
static_assert(sizeof(HashEntry) == 40);

constexpr std::uint64_t kHashTableHdrBytes = 16; // nbuckets + count
constexpr std::uint64_t kHashInitialBuckets = 64;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

template <typename T>
T get_node(Pool& pool, ObjectRef r) {
    T t;
    std::memcpy(&t, pgl_get(pool, r), sizeof(T));
    return t;
}

template <typename T>
void put_field(ObjectRef obj, std::uint64_t field_off, const T& v) {
    std::byte* p = pgl_tx_add_range(obj, field_off, sizeof(T));
    std::memcpy(p, &v, sizeof(T));
}

int bit_of(std::uint64_t key, std::uint64_t bit) {
    return static_cast<int>((key >> bit) & 1);
}

std::uint32_t skip_height(std::uint64_t key) {
    std::uint64_t x = splitmix64(key ^ 0xa0761c5d09b4d5f7ull);
    std::uint32_t h = 1;
    while ((x & 1) && h < kSkipMaxHeight) {
        ++h;
        x >>= 1;
    }
    return h;
}

} // namespace

std::optional<Structure> parse_structure(const std::string& name) {
    if (name == "list")
        return Structure::List;
    if (name == "ctree")
        return Structure::Ctree;
    if (name == "skiplist")
        return Structure::Skiplist;
    if (name == "hashmap")
        return Structure::Hashmap;
    return std::nullopt;
}

const char* structure_name(Structure s) {
    switch (s) {
    case Structure::List:
        return "list";
    case Structure::Ctree:
        return "ctree";
    case Structure::Skiplist:
        return "skiplist";
    case Structure::Hashmap:
        return "hashmap";
    }
    return "?";
}

Store::Store(Pool& pool) : pool_(pool) {
    root_ = pool_.root(sizeof(RootLinks), kTypeRoot);
}

Store::RootLinks Store::read_root() const {
    RootLinks rl;
    std::memcpy(&rl, pgl_get(pool_, root_), sizeof(rl));
    return rl;
}

bool Store::insert(Structure s, std::uint64_t key, std::uint64_t value) {
    std::unique_lock lk(locks_[static_cast<int>(s)]);
    switch (s) {
    case Structure::List:
        return list_insert(key);
    case Structure::Ctree:
        return ctree_insert(key, value);
    case Structure::Skiplist:
        return skip_insert(key, value);
    case Structure::Hashmap:
        return hash_insert(key, value);
    }
    return false;
}

bool Store::remove(Structure s, std::uint64_t key) {
    std::unique_lock lk(locks_[static_cast<int>(s)]);
    switch (s) {
    case Structure::List:
        return list_remove(key);
    case Structure::Ctree:
        return ctree_remove(key);
    case Structure::Skiplist:
        return skip_remove(key);
    case Structure::Hashmap:
        return hash_remove(key);
    }
    return false;
}

std::optional<std::uint64_t> Store::lookup(Structure s, std::uint64_t key) {
    std::shared_lock lk(locks_[static_cast<int>(s)]);
    switch (s) {
    case Structure::List:
        return list_lookup(key);
    case Structure::Ctree:
        return ctree_lookup(key);
    case Structure::Skiplist:
        return skip_lookup(key);
    case Structure::Hashmap:
        return hash_lookup(key);
    }
    return std::nullopt;
}

// -- linked list (value == key) -----------------------------------------------

bool Store::list_insert(std::uint64_t key) {
    if (list_lookup(key))
        return false;
    RootLinks rl = read_root();
    TxScope tx(pool_);
    ObjectRef node = pgl_tx_alloc(sizeof(ListNode), kTypeListNode);
    ListNode n{key, rl.list_head};
    std::byte* p = pgl_tx_add_range(node, 0, sizeof(n));
    std::memcpy(p, &n, sizeof(n));
    put_field(root_, offsetof(RootLinks, list_head), node);
    tx.commit();
    return true;
}

bool Store::list_remove(std::uint64_t key) {
    RootLinks rl = read_root();
    ObjectRef prev = kNullRef;
    ObjectRef cur = rl.list_head;
    while (!cur.is_null()) {
        ListNode n = get_node<ListNode>(pool_, cur);
        if (n.value == key) {
            TxScope tx(pool_);
            if (prev.is_null())
                put_field(root_, offsetof(RootLinks, list_head), n.next);
            else
                put_field(prev, offsetof(ListNode, next), n.next);
            pgl_tx_free(cur);
            tx.commit();
            return true;
        }
        prev = cur;
        cur = n.next;
    }
    return false;
}

std::optional<std::uint64_t> Store::list_lookup(std::uint64_t key) const {
    ObjectRef cur = read_root().list_head;
    while (!cur.is_null()) {
        ListNode n = get_node<ListNode>(pool_, cur);
        if (n.value == key)
            return n.value;
        cur = n.next;
    }
    return std::nullopt;
}

// -- crit-bit tree -------------------------------------------------------------

bool Store::ctree_insert(std::uint64_t key, std::uint64_t value) {
    RootLinks rl = read_root();
    if (rl.ctree_root.is_null()) {
        TxScope tx(pool_);
        ObjectRef leaf = pgl_tx_alloc(sizeof(CtreeNode), kTypeCtreeNode);
        CtreeNode n{kLeaf, key, value, {kNullRef, kNullRef}};
        std::memcpy(pgl_tx_add_range(leaf, 0, sizeof(n)), &n, sizeof(n));
        put_field(root_, offsetof(RootLinks, ctree_root), leaf);
        tx.commit();
        return true;
    }

    // Descend to the closest leaf.
    ObjectRef cur = rl.ctree_root;
    CtreeNode n = get_node<CtreeNode>(pool_, cur);
    while (n.meta != kLeaf) {
        cur = n.child[bit_of(key, n.meta)];
        n = get_node<CtreeNode>(pool_, cur);
    }
    if (n.key == key) {
        if (n.value == value)
            return false;
        TxScope tx(pool_);
        put_field(cur, offsetof(CtreeNode, value), value);
        tx.commit();
        return false;
    }

    std::uint64_t d =
        63 - static_cast<std::uint64_t>(std::countl_zero(n.key ^ key));
    // Walk again to the insertion point: above the first node whose bit is
    // below the new crit-bit (bits decrease root-to-leaf).
    ObjectRef parent = kNullRef;
    int pdir = 0;
    cur = rl.ctree_root;
    n = get_node<CtreeNode>(pool_, cur);
    while (n.meta != kLeaf && n.meta > d) {
        parent = cur;
        pdir = bit_of(key, n.meta);
        cur = n.child[pdir];
        n = get_node<CtreeNode>(pool_, cur);
    }

    TxScope tx(pool_);
    ObjectRef leaf = pgl_tx_alloc(sizeof(CtreeNode), kTypeCtreeNode);
    CtreeNode ln{kLeaf, key, value, {kNullRef, kNullRef}};
    std::memcpy(pgl_tx_add_range(leaf, 0, sizeof(ln)), &ln, sizeof(ln));

    ObjectRef inner = pgl_tx_alloc(sizeof(CtreeNode), kTypeCtreeNode);
    CtreeNode in{d, 0, 0, {kNullRef, kNullRef}};
    in.child[bit_of(key, d)] = leaf;
    in.child[1 - bit_of(key, d)] = cur;
    std::memcpy(pgl_tx_add_range(inner, 0, sizeof(in)), &in, sizeof(in));

    if (parent.is_null())
        put_field(root_, offsetof(RootLinks, ctree_root), inner);
    else
        put_field(parent, offsetof(CtreeNode, child) + pdir * sizeof(ObjectRef), inner);
    tx.commit();
    return true;
}

bool Store::ctree_remove(std::uint64_t key) {
    RootLinks rl = read_root();
    if (rl.ctree_root.is_null())
        return false;
    ObjectRef grand = kNullRef, parent = kNullRef, cur = rl.ctree_root;
    int gdir = 0, pdir = 0;
    CtreeNode pn{}, n = get_node<CtreeNode>(pool_, cur);
    while (n.meta != kLeaf) {
        grand = parent;
        gdir = pdir;
        parent = cur;
        pn = n;
        pdir = bit_of(key, n.meta);
        cur = n.child[pdir];
        n = get_node<CtreeNode>(pool_, cur);
    }
    if (n.key != key)
        return false;

    TxScope tx(pool_);
    if (parent.is_null()) {
        put_field(root_, offsetof(RootLinks, ctree_root), kNullRef);
    } else {
        ObjectRef sibling = pn.child[1 - pdir];
        if (grand.is_null())
            put_field(root_, offsetof(RootLinks, ctree_root), sibling);
        else
            put_field(grand, offsetof(CtreeNode, child) + gdir * sizeof(ObjectRef), sibling);
        pgl_tx_free(parent);
    }
    pgl_tx_free(cur);
    tx.commit();
    return true;
}

std::optional<std::uint64_t> Store::ctree_lookup(std::uint64_t key) const {
    ObjectRef cur = read_root().ctree_root;
    if (cur.is_null())
        return std::nullopt;
    CtreeNode n = get_node<CtreeNode>(pool_, cur);
    while (n.meta != kLeaf) {
        cur = n.child[bit_of(key, n.meta)];
        n = get_node<CtreeNode>(pool_, cur);
    }
    if (n.key == key)
        return n.value;
    return std::nullopt;
}

// -- skiplist -------------------------------------------------------------------

ObjectRef Store::skip_head_or_create() {
    RootLinks rl = read_root();
    if (!rl.skip_head.is_null())
        return rl.skip_head;
    TxScope tx(pool_);
    ObjectRef head = pgl_tx_alloc(sizeof(SkipNode), kTypeSkipNode);
    SkipNode h{};
    h.height = kSkipMaxHeight;
    std::memcpy(pgl_tx_add_range(head, 0, sizeof(h)), &h, sizeof(h));
    put_field(root_, offsetof(RootLinks, skip_head), head);
    tx.commit();
    return head;
}

namespace {
std::uint64_t skip_next_off(std::uint32_t lvl) {
    return offsetof(SkipNode, next) + std::uint64_t{lvl} * sizeof(ObjectRef);
}
} // namespace

bool Store::skip_insert(std::uint64_t key, std::uint64_t value) {
    ObjectRef head = skip_head_or_create();
    ObjectRef preds[kSkipMaxHeight];
    ObjectRef succs[kSkipMaxHeight];
    ObjectRef cur = head;
    SkipNode cn = get_node<SkipNode>(pool_, cur);
    for (int lvl = kSkipMaxHeight - 1; lvl >= 0; --lvl) {
        for (;;) {
            ObjectRef nxt = cn.next[lvl];
            if (nxt.is_null())
                break;
            SkipNode nn = get_node<SkipNode>(pool_, nxt);
            if (nn.key >= key)
                break;
            cur = nxt;
            cn = nn;
        }
        preds[lvl] = cur;
        succs[lvl] = cn.next[lvl];
    }
    if (!succs[0].is_null()) {
        SkipNode cand = get_node<SkipNode>(pool_, succs[0]);
        if (cand.key == key) {
            if (cand.value == value)
                return false;
            TxScope tx(pool_);
            put_field(succs[0], offsetof(SkipNode, value), value);
            tx.commit();
            return false;
        }
    }

    std::uint32_t h = skip_height(key);
    TxScope tx(pool_);
    ObjectRef node = pgl_tx_alloc(sizeof(SkipNode), kTypeSkipNode);
    SkipNode n{};
    n.key = key;
    n.value = value;
    n.height = h;
    for (std::uint32_t lvl = 0; lvl < h; ++lvl)
        n.next[lvl] = succs[lvl];
    std::memcpy(pgl_tx_add_range(node, 0, sizeof(n)), &n, sizeof(n));
    for (std::uint32_t lvl = 0; lvl < h; ++lvl)
        put_field(preds[lvl], skip_next_off(lvl), node);
    tx.commit();
    return true;
}

bool Store::skip_remove(std::uint64_t key) {
    RootLinks rl = read_root();
    if (rl.skip_head.is_null())
        return false;
    ObjectRef preds[kSkipMaxHeight];
    ObjectRef cur = rl.skip_head;
    SkipNode cn = get_node<SkipNode>(pool_, cur);
    for (int lvl = kSkipMaxHeight - 1; lvl >= 0; --lvl) {
        for (;;) {
            ObjectRef nxt = cn.next[lvl];
            if (nxt.is_null())
                break;
            SkipNode nn = get_node<SkipNode>(pool_, nxt);
            if (nn.key >= key)
                break;
            cur = nxt;
            cn = nn;
        }
        preds[lvl] = cur;
    }
    ObjectRef victim = get_node<SkipNode>(pool_, preds[0]).next[0];
    if (victim.is_null())
        return false;
    SkipNode vn = get_node<SkipNode>(pool_, victim);
    if (vn.key != key)
        return false;

    TxScope tx(pool_);
    for (std::uint32_t lvl = 0; lvl < vn.height; ++lvl) {
        SkipNode pn = get_node<SkipNode>(pool_, preds[lvl]);
        if (pn.next[lvl] == victim)
            put_field(preds[lvl], skip_next_off(lvl), vn.next[lvl]);
    }
    pgl_tx_free(victim);
    tx.commit();
    return true;
}

std::optional<std::uint64_t> Store::skip_lookup(std::uint64_t key) const {
    ObjectRef head = read_root().skip_head;
    if (head.is_null())
        return std::nullopt;
    ObjectRef cur = head;
    SkipNode cn = get_node<SkipNode>(pool_, cur);
    for (int lvl = kSkipMaxHeight - 1; lvl >= 0; --lvl) {
        for (;;) {
            ObjectRef nxt = cn.next[lvl];
            if (nxt.is_null())
                break;
            SkipNode nn = get_node<SkipNode>(pool_, nxt);
            if (nn.key > key)
                break;
            if (nn.key == key)
                return nn.value;
            cur = nxt;
            cn = nn;
        }
    }
    return std::nullopt;
}

// -- hashmap ---------------------------------------------------------------------

namespace {
std::uint64_t bucket_off(std::uint64_t idx) {
    return kHashTableHdrBytes + idx * sizeof(ObjectRef);
}
} // namespace

ObjectRef Store::hash_table_or_create() {
    RootLinks rl = read_root();
    if (!rl.hash_table.is_null())
        return rl.hash_table;
    TxScope tx(pool_);
    std::uint64_t bytes = kHashTableHdrBytes + kHashInitialBuckets * sizeof(ObjectRef);
    ObjectRef table = pgl_tx_alloc(bytes, kTypeHashTable);
    std::byte* p = pgl_tx_add_range(table, 0, bytes);
    std::uint64_t n = kHashInitialBuckets;
    std::memcpy(p, &n, 8); // count and buckets stay zero
    put_field(root_, offsetof(RootLinks, hash_table), table);
    tx.commit();
    return table;
}

bool Store::hash_insert(std::uint64_t key, std::uint64_t value) {
    ObjectRef table = hash_table_or_create();
    const std::byte* tp = pgl_get(pool_, table);
    std::uint64_t nbuckets, count;
    std::memcpy(&nbuckets, tp, 8);
    std::memcpy(&count, tp + 8, 8);
    std::uint64_t hash = splitmix64(key);
    std::uint64_t idx = hash % nbuckets;

    ObjectRef head;
    std::memcpy(&head, tp + bucket_off(idx), sizeof(head));
    for (ObjectRef cur = head; !cur.is_null();) {
        HashEntry e = get_node<HashEntry>(pool_, cur);
        if (e.key == key) {
            if (e.value == value)
                return false;
            TxScope tx(pool_);
            put_field(cur, offsetof(HashEntry, value), value);
            tx.commit();
            return false;
        }
        cur = e.next;
    }

    if (count + 1 > nbuckets) {
        // Grow: rebuild into a table twice the size, rehoming every entry,
        // all inside the insert's transaction.
        std::uint64_t new_n = nbuckets * 2;
        TxScope tx(pool_);
        std::uint64_t bytes = kHashTableHdrBytes + new_n * sizeof(ObjectRef);
        ObjectRef nt = pgl_tx_alloc(bytes, kTypeHashTable);
        std::vector<ObjectRef> nb(new_n, kNullRef);

        for (std::uint64_t b = 0; b < nbuckets; ++b) {
            ObjectRef cur;
            std::memcpy(&cur, pgl_get(pool_, table) + bucket_off(b), sizeof(cur));
            while (!cur.is_null()) {
                HashEntry e = get_node<HashEntry>(pool_, cur);
                std::uint64_t ni = e.hash % new_n;
                put_field(cur, offsetof(HashEntry, next), nb[ni]);
                nb[ni] = cur;
                cur = e.next;
            }
        }
        ObjectRef fresh = pgl_tx_alloc(sizeof(HashEntry), kTypeHashEntry);
        std::uint64_t ni = hash % new_n;
        HashEntry fe{key, value, hash, nb[ni]};
        std::memcpy(pgl_tx_add_range(fresh, 0, sizeof(fe)), &fe, sizeof(fe));
        nb[ni] = fresh;

        std::byte* ntp = pgl_tx_add_range(nt, 0, bytes);
        std::uint64_t newcount = count + 1;
        std::memcpy(ntp, &new_n, 8);
        std::memcpy(ntp + 8, &newcount, 8);
        std::memcpy(ntp + kHashTableHdrBytes, nb.data(), new_n * sizeof(ObjectRef));

        put_field(root_, offsetof(RootLinks, hash_table), nt);
        pgl_tx_free(table);
        tx.commit();
        return true;
    }

    TxScope tx(pool_);
    ObjectRef fresh = pgl_tx_alloc(sizeof(HashEntry), kTypeHashEntry);
    HashEntry fe{key, value, hash, head};
    std::memcpy(pgl_tx_add_range(fresh, 0, sizeof(fe)), &fe, sizeof(fe));
    put_field(table, bucket_off(idx), fresh);
    std::uint64_t newcount = count + 1;
    put_field(table, 8, newcount);
    tx.commit();
    return true;
}

bool Store::hash_remove(std::uint64_t key) {
    RootLinks rl = read_root();
    if (rl.hash_table.is_null())
        return false;
    ObjectRef table = rl.hash_table;
    const std::byte* tp = pgl_get(pool_, table);
    std::uint64_t nbuckets, count;
    std::memcpy(&nbuckets, tp, 8);
    std::memcpy(&count, tp + 8, 8);
    std::uint64_t hash = splitmix64(key);
    std::uint64_t idx = hash % nbuckets;

    ObjectRef prev = kNullRef;
    ObjectRef cur;
    std::memcpy(&cur, tp + bucket_off(idx), sizeof(cur));
    while (!cur.is_null()) {
        HashEntry e = get_node<HashEntry>(pool_, cur);
        if (e.key == key) {
            TxScope tx(pool_);
            if (prev.is_null())
                put_field(table, bucket_off(idx), e.next);
            else
                put_field(prev, offsetof(HashEntry, next), e.next);
            std::uint64_t newcount = count - 1;
            put_field(table, 8, newcount);
            pgl_tx_free(cur);
            tx.commit();
            return true;
        }
        prev = cur;
        cur = e.next;
    }
    return false;
}

std::optional<std::uint64_t> Store::hash_lookup(std::uint64_t key) const {
    RootLinks rl = read_root();
    if (rl.hash_table.is_null())
        return std::nullopt;
    const std::byte* tp = pgl_get(pool_, rl.hash_table);
    std::uint64_t nbuckets;
    std::memcpy(&nbuckets, tp, 8);
    std::uint64_t hash = splitmix64(key);
    ObjectRef cur;
    std::memcpy(&cur, tp + bucket_off(hash % nbuckets), sizeof(cur));
    while (!cur.is_null()) {
        HashEntry e = get_node<HashEntry>(pool_, cur);
        if (e.key == key)
            return e.value;
        cur = e.next;
    }
    return std::nullopt;
}

// -- scans -----------------------------------------------------------------------

std::vector<std::pair<std::uint64_t, std::uint64_t>> Store::collect(Structure s) {
    std::shared_lock lk(locks_[static_cast<int>(s)]);
    std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
    RootLinks rl = read_root();
    switch (s) {
    case Structure::List: {
        for (ObjectRef cur = rl.list_head; !cur.is_null();) {
            ListNode n = get_node<ListNode>(pool_, cur);
            out.emplace_back(n.value, n.value);
            cur = n.next;
        }
        break;
    }
    case Structure::Ctree: {
        std::vector<ObjectRef> stack;
        if (!rl.ctree_root.is_null())
            stack.push_back(rl.ctree_root);
        while (!stack.empty()) {
            ObjectRef cur = stack.back();
            stack.pop_back();
            CtreeNode n = get_node<CtreeNode>(pool_, cur);
            if (n.meta == kLeaf) {
                out.emplace_back(n.key, n.value);
            } else {
                stack.push_back(n.child[0]);
                stack.push_back(n.child[1]);
            }
        }
        break;
    }
    case Structure::Skiplist: {
        if (rl.skip_head.is_null())
            break;
        SkipNode h = get_node<SkipNode>(pool_, rl.skip_head);
        for (ObjectRef cur = h.next[0]; !cur.is_null();) {
            SkipNode n = get_node<SkipNode>(pool_, cur);
            out.emplace_back(n.key, n.value);
            cur = n.next[0];
        }
        break;
    }
    case Structure::Hashmap: {
        if (rl.hash_table.is_null())
            break;
        const std::byte* tp = pgl_get(pool_, rl.hash_table);
        std::uint64_t nbuckets;
        std::memcpy(&nbuckets, tp, 8);
        for (std::uint64_t b = 0; b < nbuckets; ++b) {
            ObjectRef cur;
            std::memcpy(&cur, pgl_get(pool_, rl.hash_table) + bucket_off(b), sizeof(cur));
            while (!cur.is_null()) {
                HashEntry e = get_node<HashEntry>(pool_, cur);
                out.emplace_back(e.key, e.value);
                cur = e.next;
            }
        }
        break;
    }
    }
    return out;
}

std::uint64_t Store::count(Structure s) { return collect(s).size(); }

} // namespace pgl::kv
