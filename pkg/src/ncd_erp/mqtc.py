"""Minimum quartet tree clustering.

A tree over ``n`` leaves is stored as an ``(2n - 2, 3)`` adjacency array:
rows ``0..n-1`` are leaves (one neighbour in column 0, the rest ``-1``) and
rows ``n..2n-3`` are internal nodes with exactly three neighbours.

For every 4-subset of leaves the tree realizes exactly one of the pairings
ab|cd, ac|bd, ad|bc; it is the pairing with the smallest sum of leaf-to-leaf
path lengths (four-point condition). The tree cost adds up the distance sums
of the realized pairings, and the score normalizes it between the cheapest and
the dearest pairing per quartet:

    S(T) = (worst - cost(T)) / (worst - best)

The search is a strict-improvement hill climb over three mutations (leaf swap,
subtree swap, subtree transfer). It stops after ``budget`` consecutive
rejected proposals or ``max_proposals`` proposals in total.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numba
import numpy as np

DEFAULT_BUDGET = 2000
DEFAULT_MAX_PROPOSALS = 200_000

_MASK64 = (1 << 64) - 1


def mix64(*values: int) -> int:
    """Fold integers into one 64-bit seed with the splitmix64 finalizer."""
    h = 0x9E3779B97F4A7C15
    for v in values:
        h = (h ^ (int(v) & _MASK64)) & _MASK64
        h = (h + 0x9E3779B97F4A7C15) & _MASK64
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        h = z ^ (z >> 31)
    return h


# -- numba kernels ---------------------------------------------------------------

@numba.njit(cache=True)
def _next(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _randint(state, k):
    return np.int64(_next(state) % np.uint64(k))


@numba.njit(cache=True)
def _degree(adj, v):
    d = 0
    for j in range(3):
        if adj[v, j] >= 0:
            d += 1
    return d


@numba.njit(cache=True)
def _replace(adj, node, old, new):
    for j in range(3):
        if adj[node, j] == old:
            adj[node, j] = new
            return


@numba.njit(cache=True)
def _in_subtree(adj, parent, root, target, stack):
    """Whether ``target`` lies on ``root``'s side once edge parent-root is cut."""
    top = 0
    stack[0] = root
    stack[1] = parent  # pairs of (node, came_from)
    top = 2
    while top > 0:
        came = stack[top - 1]
        node = stack[top - 2]
        top -= 2
        if node == target:
            return True
        for j in range(3):
            nb = adj[node, j]
            if nb >= 0 and nb != came:
                stack[top] = nb
                stack[top + 1] = node
                top += 2
    return False


@numba.njit(cache=True)
def _leaf_paths(adj, n, out, queue, dist):
    """Edge counts between all leaf pairs, by BFS from every leaf."""
    m = adj.shape[0]
    for s in range(n):
        for v in range(m):
            dist[v] = -1
        dist[s] = 0
        head = 0
        tail = 1
        queue[0] = s
        while head < tail:
            v = queue[head]
            head += 1
            for j in range(3):
                nb = adj[v, j]
                if nb >= 0 and dist[nb] < 0:
                    dist[nb] = dist[v] + 1
                    queue[tail] = nb
                    tail += 1
        for t in range(n):
            out[s, t] = dist[t]


@numba.njit(cache=True)
def _pair_weights(adj, n, weights, work):
    """Number of quartets in which each leaf pair is one side of the realized split.

    Pair (a, b) sits opposite pair (c, e) exactly when c and e fall in the same
    subtree hanging off the a-b path, so its weight is the sum of
    ``size * (size - 1) / 2`` over the hanging subtrees along that path.
    """
    m = adj.shape[0]
    parent = work[0]
    order = work[1]
    size = work[2]
    acc = work[3]
    came = work[4]
    stack = work[5]
    # leaf counts below every node with the tree hung from node n
    root = n
    parent[root] = -1
    top = 1
    stack[0] = root
    k = 0
    while top > 0:
        top -= 1
        v = stack[top]
        order[k] = v
        k += 1
        for j in range(3):
            w = adj[v, j]
            if w >= 0 and w != parent[v]:
                parent[w] = v
                stack[top] = w
                top += 1
    for i in range(m - 1, -1, -1):
        v = order[i]
        if v < n:
            size[v] = 1
        else:
            t = 0
            for j in range(3):
                w = adj[v, j]
                if w != parent[v]:
                    t += size[w]
            size[v] = t
    for a in range(n):
        acc[a] = 0
        came[a] = -1
        top = 1
        stack[0] = a
        while top > 0:
            top -= 1
            u = stack[top]
            for j in range(3):
                w = adj[u, j]
                if w < 0 or w == came[u]:
                    continue
                extra = 0
                if u >= n:
                    # the third neighbour of u hangs off the path
                    for z in range(3):
                        h = adj[u, z]
                        if h != w and h != came[u]:
                            s = size[h] if parent[h] == u else n - size[u]
                            extra = s * (s - 1) // 2
                acc[w] = acc[u] + extra
                came[w] = u
                if w < n:
                    weights[a, w] = acc[w]
                else:
                    stack[top] = w
                    top += 1


@numba.njit(cache=True)
def _cost(adj, n, d, weights, work):
    _pair_weights(adj, n, weights, work)
    total = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            total += d[a, b] * weights[a, b]
    return total


@numba.njit(cache=True)
def _bounds(d, n):
    best = 0.0
    worst = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            for c in range(b + 1, n):
                for e in range(c + 1, n):
                    s1 = d[a, b] + d[c, e]
                    s2 = d[a, c] + d[b, e]
                    s3 = d[a, e] + d[b, c]
                    best += min(s1, min(s2, s3))
                    worst += max(s1, max(s2, s3))
    return best, worst


@numba.njit(cache=True)
def _random_tree(n, state):
    adj = -np.ones((2 * n - 2, 3), dtype=np.int64)
    hub = n
    for leaf in range(3):
        adj[leaf, 0] = hub
        adj[hub, leaf] = leaf
    # edges as (child-side, hub-side) pairs; subdivided in place
    eu = np.empty(2 * n - 3, dtype=np.int64)
    ev = np.empty(2 * n - 3, dtype=np.int64)
    for k in range(3):
        eu[k] = k
        ev[k] = hub
    n_edges = 3
    for leaf in range(3, n):
        w = n + leaf - 2
        k = _randint(state, n_edges)
        a = eu[k]
        b = ev[k]
        _replace(adj, a, b, w)
        _replace(adj, b, a, w)
        adj[w, 0] = a
        adj[w, 1] = b
        adj[w, 2] = leaf
        adj[leaf, 0] = w
        ev[k] = w
        eu[n_edges] = w
        ev[n_edges] = b
        eu[n_edges + 1] = leaf
        ev[n_edges + 1] = w
        n_edges += 2
    return adj


@numba.njit(cache=True)
def _leaf_swap(adj, n, state):
    a = _randint(state, n)
    b = _randint(state, n - 1)
    if b >= a:
        b += 1
    pa = adj[a, 0]
    pb = adj[b, 0]
    if pa == pb:
        return False
    _replace(adj, pa, a, b)
    _replace(adj, pb, b, a)
    adj[a, 0] = pb
    adj[b, 0] = pa
    return True


@numba.njit(cache=True)
def _pick_edge(adj, state):
    """Random directed edge (parent, root): ``root`` is the subtree being moved."""
    m = adj.shape[0]
    v = _randint(state, m)
    deg = _degree(adj, v)
    u = adj[v, _randint(state, deg)]
    return u, v


@numba.njit(cache=True)
def _subtree_swap(adj, state, stack):
    u, v = _pick_edge(adj, state)
    x, w = _pick_edge(adj, state)
    if v == w or u == x:
        return False
    if _in_subtree(adj, u, v, w, stack) or _in_subtree(adj, u, v, x, stack):
        return False
    if _in_subtree(adj, x, w, v, stack) or _in_subtree(adj, x, w, u, stack):
        return False
    _replace(adj, u, v, w)
    _replace(adj, x, w, v)
    _replace(adj, v, u, x)
    _replace(adj, w, x, u)
    return True


@numba.njit(cache=True)
def _subtree_transfer(adj, n, state, stack):
    u, v = _pick_edge(adj, state)
    if u < n:
        return False
    p = -1
    q = -1
    for j in range(3):
        nb = adj[u, j]
        if nb != v:
            if p < 0:
                p = nb
            else:
                q = nb
    # detach: p and q become adjacent, u hangs off v alone
    _replace(adj, p, u, q)
    _replace(adj, q, u, p)
    m = adj.shape[0]
    for _ in range(64):
        a = _randint(state, m)
        if a == u or _in_subtree(adj, u, v, a, stack):
            continue
        b = adj[a, _randint(state, _degree(adj, a))]
        if (a == p and b == q) or (a == q and b == p):
            break
        _replace(adj, a, b, u)
        _replace(adj, b, a, u)
        adj[u, 0] = v
        adj[u, 1] = a
        adj[u, 2] = b
        return True
    # no move: restore the original attachment
    _replace(adj, p, q, u)
    _replace(adj, q, p, u)
    return False


@numba.njit(cache=True)
def _mutate(adj, n, state, stack):
    kind = _randint(state, 3)
    if kind == 0:
        return _leaf_swap(adj, n, state)
    if kind == 1:
        return _subtree_swap(adj, state, stack)
    return _subtree_transfer(adj, n, state, stack)


@numba.njit(cache=True)
def _climb(adj, n, d, budget, max_proposals, state):
    m = adj.shape[0]
    weights = np.zeros((n, n), dtype=np.int64)
    work = np.empty((6, m), dtype=np.int64)
    stack = np.empty(4 * m + 4, dtype=np.int64)
    cost = _cost(adj, n, d, weights, work)
    trace = np.empty(256, dtype=np.float64)
    trace[0] = cost
    n_trace = 1
    trial = adj.copy()
    rejected = 0
    proposals = 0
    while rejected < budget and proposals < max_proposals:
        proposals += 1
        trial[:, :] = adj
        improved = False
        if _mutate(trial, n, state, stack):
            c = _cost(trial, n, d, weights, work)
            if c < cost:
                improved = True
                cost = c
                adj[:, :] = trial
                if n_trace == trace.size:
                    bigger = np.empty(2 * trace.size, dtype=np.float64)
                    bigger[:n_trace] = trace
                    trace = bigger
                trace[n_trace] = cost
                n_trace += 1
        if improved:
            rejected = 0
        else:
            rejected += 1
    return cost, proposals, trace[:n_trace]


@numba.njit(cache=True)
def _tree_cost(adj, n, d):
    weights = np.zeros((n, n), dtype=np.int64)
    return _cost(adj, n, d, weights, np.empty((6, adj.shape[0]), dtype=np.int64))


# -- public API ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuartetTree:
    """Unrooted ternary tree with leaves bound to object ids (leaf ``i`` is ``ids[i]``)."""

    ids: tuple[str, ...]
    adj: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        adj = np.array(self.adj, dtype=np.int64)
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)
        check_tree(self.adj, len(self.ids))

    @property
    def n(self) -> int:
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, QuartetTree):
            return NotImplemented
        return set(self.ids) == set(other.ids) and self.splits() == other.splits()

    __hash__ = None

    def neighbors(self, v: int) -> list[int]:
        return [int(x) for x in self.adj[v] if x >= 0]

    def edges(self) -> list[tuple[int, int]]:
        return [(v, w) for v in range(len(self.adj)) for w in self.neighbors(v) if v < w]

    def leaf_path_edges(self) -> np.ndarray:
        n = self.n
        m = len(self.adj)
        out = np.empty((n, n), dtype=np.int64)
        _leaf_paths(np.ascontiguousarray(self.adj), n, out, np.empty(m, np.int64), np.empty(m, np.int64))
        return out

    def splits(self) -> frozenset:
        """Leaf bipartitions induced by internal edges; identifies the topology."""
        out = set()
        for v, w in self.edges():
            if v < self.n or w < self.n:
                continue
            side = frozenset(self.ids[i] for i in self._side(w, v) if i < self.n)
            if min(self.ids) in side:
                side = frozenset(self.ids) - side
            out.add(side)
        return frozenset(out)

    def _side(self, parent: int, root: int) -> list[int]:
        seen = [root]
        stack = [(root, parent)]
        while stack:
            node, came = stack.pop()
            for nb in self.neighbors(node):
                if nb != came:
                    seen.append(nb)
                    stack.append((nb, node))
        return seen

    def to_newick(self) -> str:
        """Serialize, rooted at the first internal node for writing only."""
        def label(i):
            s = self.ids[i]
            return s if re.fullmatch(r"[A-Za-z0-9_.\-]+", s) else "'" + s.replace("'", "''") + "'"

        def walk(v, came):
            if v < self.n:
                return label(v)
            kids = [walk(nb, v) for nb in self.neighbors(v) if nb != came]
            return "(" + ",".join(kids) + ")"

        return walk(self.n, -1) + ";"

    @classmethod
    def from_newick(cls, text: str) -> QuartetTree:
        return _parse_newick(text)


def check_tree(adj: np.ndarray, n: int) -> None:
    if n < 4:
        raise ValueError(f"a quartet tree needs at least 4 leaves, got {n}")
    if adj.shape != (2 * n - 2, 3):
        raise ValueError(f"adjacency must have shape {(2 * n - 2, 3)}")
    m = 2 * n - 2
    for v in range(m):
        nbs = [int(x) for x in adj[v] if x >= 0]
        want = 1 if v < n else 3
        if len(nbs) != want or len(set(nbs)) != want:
            raise ValueError(f"node {v} has degree {len(nbs)}, expected {want}")
        for w in nbs:
            if not 0 <= w < m or v not in adj[w]:
                raise ValueError(f"edge {v}-{w} is not symmetric")
        if v < n and (adj[v, 1] != -1 or adj[v, 2] != -1):
            raise ValueError(f"leaf {v} must use column 0 only")
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w >= 0 and int(w) not in seen:
                seen.add(int(w))
                stack.append(int(w))
    # m nodes, m - 1 edges and connected: acyclic
    if len(seen) != m:
        raise ValueError("tree is not connected")


@dataclass(frozen=True)
class TreeScore:
    s: float
    cost: float
    best: float
    worst: float
    proposals: int = 0
    restarts: int = 1


def _matrix_values(m, ids) -> np.ndarray:
    """Matrix values reordered to ``ids`` with a zero diagonal."""
    pos = {ident: i for i, ident in enumerate(m.ids)}
    if len(ids) != len(pos) or set(ids) != set(pos):
        raise ValueError("tree leaves do not match distance matrix ids")
    order = [pos[i] for i in ids]
    d = np.array(m.values[np.ix_(order, order)], dtype=np.float64)
    np.fill_diagonal(d, 0.0)
    return d


def normalized_score(cost: float, best: float, worst: float) -> float:
    if worst <= best:
        return 1.0
    return min(1.0, max(0.0, (worst - cost) / (worst - best)))


def quartet_cost(tree: QuartetTree, m) -> TreeScore:
    d = _matrix_values(m, tree.ids)
    n = tree.n
    cost = _tree_cost(np.ascontiguousarray(tree.adj), n, d)
    best, worst = _bounds(d, n)
    return TreeScore(normalized_score(cost, best, worst), cost, best, worst)


def random_tree(ids, seed: int) -> QuartetTree:
    state = np.array([mix64(seed)], dtype=np.uint64)
    return QuartetTree(ids, _random_tree(len(ids), state))


def mutate(tree: QuartetTree, seed: int) -> tuple[QuartetTree, bool]:
    """One random mutation; returns the new tree and whether anything changed."""
    adj = np.array(tree.adj)
    state = np.array([mix64(seed)], dtype=np.uint64)
    changed = _mutate(adj, tree.n, state, np.empty(4 * len(adj) + 4, dtype=np.int64))
    return QuartetTree(tree.ids, adj), bool(changed)


def all_trees(n: int):
    """Every unrooted ternary topology on leaves ``0..n-1``, (2n-5)!! in total."""
    if n < 4:
        raise ValueError("need at least 4 leaves")
    start = -np.ones((2 * n - 2, 3), dtype=np.int64)
    for leaf in range(3):
        start[leaf, 0] = n
        start[n, leaf] = leaf

    def grow(adj, leaf):
        if leaf == n:
            yield adj
            return
        w = n + leaf - 2
        edges = [(v, int(x)) for v in range(w) for x in adj[v] if 0 <= x < w and v < x]
        for a, b in edges:
            nxt = adj.copy()
            _replace(nxt, a, b, w)
            _replace(nxt, b, a, w)
            nxt[w] = (a, b, leaf)
            nxt[leaf, 0] = w
            yield from grow(nxt, leaf + 1)

    yield from grow(start, 3)


def exhaustive_best(m) -> tuple[QuartetTree, TreeScore]:
    """Lowest-cost tree by enumeration; first tree found wins ties."""
    n = len(m.ids)
    d = _matrix_values(m, m.ids)
    best_adj = None
    best_cost = np.inf
    for adj in all_trees(n):
        c = _tree_cost(adj, n, d)
        if c < best_cost:
            best_adj, best_cost = adj, c
    lo, hi = _bounds(d, n)
    return QuartetTree(m.ids, best_adj), TreeScore(normalized_score(best_cost, lo, hi), best_cost, lo, hi, 3, 1)


def climb(m, seed: int, budget: int = DEFAULT_BUDGET, max_proposals: int = DEFAULT_MAX_PROPOSALS):
    """Single hill-climbing run; returns ``(tree, score, accepted_costs)``."""
    n = len(m.ids)
    d = _matrix_values(m, m.ids)
    state = np.array([mix64(seed)], dtype=np.uint64)
    adj = _random_tree(n, state)
    cost, proposals, trace = _climb(adj, n, d, budget, max_proposals, state)
    lo, hi = _bounds(d, n)
    score = TreeScore(normalized_score(cost, lo, hi), cost, lo, hi, int(proposals), 1)
    return QuartetTree(m.ids, adj), score, trace


def restart_seed(seed: int, restart: int) -> int:
    """Seed of restart ``k``: the splitmix64 fold of ``(seed, k)``."""
    return mix64(seed, restart)


def cluster_tree(
    m,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    restarts: int = 1,
    max_proposals: int = DEFAULT_MAX_PROPOSALS,
) -> tuple[QuartetTree, TreeScore]:
    """Best tree over ``restarts`` independent climbs (lowest restart index wins ties).

    With four leaves all three topologies are scored directly.
    """
    n = len(m.ids)
    if n < 4:
        raise ValueError(f"cluster_tree needs at least 4 objects, got {n}")
    if budget < 1 or restarts < 1:
        raise ValueError("budget and restarts must be >= 1")
    if n == 4:
        return exhaustive_best(m)
    best = None
    total = 0
    for k in range(restarts):
        tree, score, _ = climb(m, restart_seed(seed, k), budget, max_proposals)
        total += score.proposals
        if best is None or score.cost < best[1].cost:
            best = (tree, score)
    tree, score = best
    return tree, TreeScore(score.s, score.cost, score.best, score.worst, total, restarts)


# -- Newick parsing ------------------------------------------------------------

_TOKEN = re.compile(r"\s*('(?:[^']|'')*'|[(),;:]|[^(),;:\s']+)")


def _parse_newick(text: str) -> QuartetTree:
    tokens = [t for t in _TOKEN.findall(text.strip()) if t]
    pos = 0

    def parse():
        nonlocal pos
        if tokens[pos] == "(":
            pos += 1
            kids = [parse()]
            while tokens[pos] == ",":
                pos += 1
                kids.append(parse())
            if tokens[pos] != ")":
                raise ValueError("malformed Newick: expected ')'")
            pos += 1
            node = ("internal", kids)
        else:
            tok = tokens[pos]
            pos += 1
            name = tok[1:-1].replace("''", "'") if tok.startswith("'") else tok
            node = ("leaf", name)
        # skip internal labels and branch lengths
        while pos < len(tokens) and tokens[pos] not in (",", ")", ";"):
            pos += 1
        return node

    root = parse()
    if pos >= len(tokens) or tokens[pos] != ";":
        raise ValueError("malformed Newick: missing ';'")
    if root[0] != "internal":
        raise ValueError("Newick tree has a single leaf")

    leaves: list[str] = []
    edges: list[tuple[int, int]] = []
    counter = [0]

    def collect(node):
        if node[0] == "leaf":
            leaves.append(node[1])
            return ("L", len(leaves) - 1)
        me = ("I", counter[0])
        counter[0] += 1
        for kid in node[1]:
            edges.append((me, collect(kid)))
        return me

    top = collect(root)
    n = len(leaves)
    # a rooted binary tree has a degree-2 root; splice it out
    root_edges = [e for e in edges if e[0] == top]
    if len(root_edges) == 2:
        edges = [e for e in edges if e[0] != top] + [(root_edges[0][1], root_edges[1][1])]
    internal = sorted({x for e in edges for x in e if x[0] == "I"}, key=lambda x: x[1])
    index = {("L", i): i for i in range(n)}
    index.update({node: n + k for k, node in enumerate(internal)})
    if len(internal) != n - 2:
        raise ValueError("Newick tree is not binary/ternary")
    adj = -np.ones((2 * n - 2, 3), dtype=np.int64)
    fill = [0] * (2 * n - 2)
    for a, b in edges:
        for x, y in ((index[a], index[b]), (index[b], index[a])):
            if fill[x] >= 3:
                raise ValueError("Newick node with more than three neighbours")
            adj[x, fill[x]] = y
            fill[x] += 1
    return QuartetTree(leaves, adj)
