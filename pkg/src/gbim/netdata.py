"""Network and preference data: graph structures, file ingestion, dataset construction.

Holds the three inputs every other module consumes: a weighted directed
social graph, an undirected item association graph, and a dense user-item
preference matrix. Also provides the ingestion pipeline that turns raw
interaction triples into the item graph (cosine similarity with a cutoff)
and the preference matrix (item-based collaborative filtering), plus a
synthetic Erdos-Renyi generator and a plain-text bundle format for reuse
across CLI commands.

All objects are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """Structurally invalid data (bad ids, counts, ranges)."""


class ParseError(ValueError):
    """Malformed input file; message carries the offending line number."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class SocialGraph:
    """Weighted directed user network.

    Edge weights live in (0, 1]. In reciprocal mode every edge into node j
    carries weight 1/in_degree(j), the convention used for all experiments.
    """

    def __init__(self, n: int, edges):
        if n < 0:
            raise ValidationError(f"negative user count {n}")
        edges = list(edges)
        self.n = int(n)
        src = np.array([e[0] for e in edges], dtype=np.int64)
        dst = np.array([e[1] for e in edges], dtype=np.int64)
        w = np.array([e[2] for e in edges], dtype=np.float64)
        if edges:
            if src.min(initial=0) < 0 or dst.min(initial=0) < 0:
                raise ValidationError("negative user id in edge list")
            if src.max(initial=-1) >= n or dst.max(initial=-1) >= n:
                raise ValidationError("user id out of range")
            if np.any(src == dst):
                i = int(np.argmax(src == dst))
                raise ValidationError(f"self-loop on user {src[i]}")
            if len({(int(s), int(t)) for s, t in zip(src, dst)}) != len(edges):
                raise ValidationError("duplicate directed edge")
            if not np.all(np.isfinite(w)) or np.any(w <= 0) or np.any(w > 1):
                raise ValidationError("edge weight outside (0, 1]")
        self.sources = _freeze(src)
        self.targets = _freeze(dst)
        self.weights = _freeze(w)
        self.in_degree = _freeze(np.bincount(dst, minlength=n).astype(np.int64))
        self.out_degree = _freeze(np.bincount(src, minlength=n).astype(np.int64))
        # adjacency indexable from both ends, in input edge order per node
        out_adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        in_adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for s, t, wt in zip(src.tolist(), dst.tolist(), w.tolist()):
            out_adj[s].append((t, wt))
            in_adj[t].append((s, wt))
        self._out_adj = out_adj
        self._in_adj = in_adj

    @property
    def edge_count(self) -> int:
        return len(self.sources)

    def out_neighbors(self, u: int) -> list[tuple[int, float]]:
        """(target, weight) pairs for edges leaving u."""
        return self._out_adj[u]

    def in_neighbors(self, u: int) -> list[tuple[int, float]]:
        """(source, weight) pairs for edges entering u."""
        return self._in_adj[u]

    @classmethod
    def with_reciprocal_weights(cls, n: int, arcs) -> "SocialGraph":
        """Build from (src, dst) arcs, assigning each weight as 1/in_degree(dst)."""
        arcs = [(int(s), int(t)) for s, t in arcs]
        indeg = np.zeros(n, dtype=np.int64)
        for _, t in arcs:
            if not 0 <= t < n:
                raise ValidationError(f"user id {t} out of range")
            indeg[t] += 1
        return cls(n, [(s, t, 1.0 / indeg[t]) for s, t in arcs])


class ItemGraph:
    """Undirected item association network."""

    def __init__(self, m: int, edges):
        if m < 0:
            raise ValidationError(f"negative item count {m}")
        pairs = []
        seen = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValidationError(f"self-loop on item {a}")
            if not (0 <= a < m and 0 <= b < m):
                raise ValidationError(f"item id out of range in edge ({a}, {b})")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValidationError(f"duplicate item edge {key}")
            seen.add(key)
            pairs.append(key)
        self.m = int(m)
        self.edges = tuple(sorted(pairs))
        adj: list[list[int]] = [[] for _ in range(m)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        self._adj = [sorted(v) for v in adj]

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, j: int) -> list[int]:
        """Items adjacent to j, ascending."""
        return self._adj[j]

    def degree(self, j: int) -> int:
        return len(self._adj[j])


class PreferenceMatrix:
    """Dense n x m matrix of user-item preferences in [0, 1]."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("preference matrix must be 2-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValidationError("non-finite preference value")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError("preference value outside [0, 1]")
        self.values = _freeze(values.copy())
        self.n, self.m = values.shape

    def check_dims(self, social: SocialGraph, items: ItemGraph) -> None:
        if self.n != social.n or self.m != items.m:
            raise ValidationError(
                f"preference matrix is {self.n}x{self.m}, "
                f"graphs are {social.n} users x {items.m} items"
            )


@dataclass(frozen=True)
class InteractionTable:
    """Raw (user, item, value) triples; ingestion input only."""

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.values)):
            raise ValidationError("interaction columns have unequal lengths")
        if len(self.users):
            if self.users.min() < 0 or self.items.min() < 0:
                raise ValidationError("negative id in interaction table")
            if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
                raise ValidationError("interaction value must be finite and >= 0")

    def __len__(self) -> int:
        return len(self.users)

    @classmethod
    def from_triples(cls, triples) -> "InteractionTable":
        triples = list(triples)
        return cls(
            users=np.array([t[0] for t in triples], dtype=np.int64),
            items=np.array([t[1] for t in triples], dtype=np.int64),
            values=np.array([t[2] for t in triples], dtype=np.float64),
        )


def _data_lines(path):
    """Yield (lineno, tokens) for non-blank, non-comment lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def load_social_graph(path, weight_mode: str = "reciprocal-in-degree",
                      n: int | None = None) -> SocialGraph:
    """Read an edge-list file, one "src dst [weight]" per line.

    In reciprocal-in-degree mode any explicit weights in the file are
    ignored and recomputed as 1/in_degree. Node count defaults to
    max id + 1 unless given.
    """
    if weight_mode not in ("explicit", "reciprocal-in-degree"):
        raise ValidationError(f"unknown weight_mode {weight_mode!r}")
    arcs: list[tuple[int, int]] = []
    weights: list[float] = []
    for lineno, tok in _data_lines(path):
        if len(tok) not in (2, 3):
            raise ParseError(f"{path}:{lineno}: expected 'src dst [weight]', got {len(tok)} fields")
        try:
            s, t = int(tok[0]), int(tok[1])
            w = float(tok[2]) if len(tok) == 3 else math.nan
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if s == t:
            raise ParseError(f"{path}:{lineno}: self-loop on user {s}")
        if weight_mode == "explicit" and len(tok) != 3:
            raise ParseError(f"{path}:{lineno}: explicit mode requires a weight field")
        arcs.append((s, t))
        weights.append(w)
    count = n if n is not None else (max((max(s, t) for s, t in arcs), default=-1) + 1)
    if weight_mode == "reciprocal-in-degree":
        return SocialGraph.with_reciprocal_weights(count, arcs)
    return SocialGraph(count, [(s, t, w) for (s, t), w in zip(arcs, weights)])


def load_interactions(path) -> InteractionTable:
    """Read "user item value" triples, one per line."""
    triples = []
    for lineno, tok in _data_lines(path):
        if len(tok) != 3:
            raise ParseError(f"{path}:{lineno}: expected 'user item value', got {len(tok)} fields")
        try:
            triples.append((int(tok[0]), int(tok[1]), float(tok[2])))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return InteractionTable.from_triples(triples)


def _interaction_columns(interactions: InteractionTable, m: int) -> np.ndarray:
    """Dense (n_users x m) value matrix from the triple table."""
    if len(interactions) and interactions.items.max() >= m:
        raise ValidationError(
            f"item id {interactions.items.max()} out of range for m={m}")
    n_users = int(interactions.users.max()) + 1 if len(interactions) else 0
    mat = np.zeros((n_users, m), dtype=np.float64)
    mat[interactions.users, interactions.items] = interactions.values
    return mat


def _cosine_item_similarity(interactions: InteractionTable, m: int) -> np.ndarray:
    """m x m cosine similarity of item interaction vectors (raw values,
    no mean-centering); items nobody interacted with have all-zero rows."""
    cols = _interaction_columns(interactions, m)
    norms = np.linalg.norm(cols, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    unit = cols / safe
    sim = unit.T @ unit
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    return sim


def build_item_graph(interactions: InteractionTable, m: int,
                     threshold: float = 0.5) -> ItemGraph:
    """Connect item pairs whose interaction-vector cosine exceeds threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside [0, 1]")
    sim = _cosine_item_similarity(interactions, m)
    a_idx, b_idx = np.where(np.triu(sim, k=1) > threshold)
    return ItemGraph(m, list(zip(a_idx.tolist(), b_idx.tolist())))


def build_preference_matrix(interactions: InteractionTable, n: int, m: int,
                            fill: float = 0.1) -> PreferenceMatrix:
    """Item-based collaborative filtering followed by per-user min-max scaling.

    The raw prediction for (user i, item j) is the similarity-weighted
    average of i's observed values over items similar to j (positive
    cosine weight, including j itself when rated). Each user's row is then
    min-max normalized into [0, 1]. Users with no interactions get the
    constant `fill`; a user whose predictions are all equal maps to 1.0
    when that common value is positive, else 0.0.
    """
    if len(interactions):
        if interactions.users.max() >= n:
            raise ValidationError(f"user id {interactions.users.max()} out of range for n={n}")
        if interactions.items.max() >= m:
            raise ValidationError(f"item id {interactions.items.max()} out of range for m={m}")
    if not 0.0 <= fill <= 1.0:
        raise ValidationError(f"fill value {fill} outside [0, 1]")
    sim = _cosine_item_similarity(interactions, m)
    prefs = np.full((n, m), fill, dtype=np.float64)
    by_user: dict[int, list[int]] = {}
    for idx, u in enumerate(interactions.users.tolist()):
        by_user.setdefault(u, []).append(idx)
    for u, rows in by_user.items():
        rated = interactions.items[rows]
        vals = interactions.values[rows]
        weights = sim[:, rated]                      # m x |rated|
        weights = np.where(weights > 0, weights, 0.0)
        denom = weights.sum(axis=1)
        raw = np.zeros(m, dtype=np.float64)
        has = denom > 0
        raw[has] = (weights[has] @ vals) / denom[has]
        lo, hi = raw.min(), raw.max()
        if hi > lo:
            prefs[u] = (raw - lo) / (hi - lo)
        else:
            prefs[u] = 1.0 if hi > 0 else 0.0
    return PreferenceMatrix(prefs)


def _sample_distinct(total: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` distinct integers from range(total), deterministic given rng."""
    if count > total:
        raise ValidationError(f"cannot draw {count} distinct items from {total}")
    # choice without replacement would materialize range(total); rejection
    # sampling is cheap while the request is sparse
    if total <= 4_000_000 or count * 4 > total:
        return rng.choice(total, size=count, replace=False)
    chosen: set[int] = set()
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        draw = rng.integers(0, total, size=max(count - filled, 1024))
        for v in draw.tolist():
            if v not in chosen:
                chosen.add(v)
                out[filled] = v
                filled += 1
                if filled == count:
                    break
    return out


def generate_synthetic(n: int, edge_count: int, m: int, item_edge_count: int,
                       seed: int) -> tuple[SocialGraph, ItemGraph, PreferenceMatrix]:
    """Random instance: G(n, M) directed user graph with reciprocal weights,
    uniform random undirected item edges, i.i.d. uniform preferences."""
    if n < 1 or m < 1:
        raise ValidationError("need at least one user and one item")
    if edge_count > n * (n - 1):
        raise ValidationError(f"{edge_count} directed edges impossible with n={n}")
    if item_edge_count > m * (m - 1) // 2:
        raise ValidationError(f"{item_edge_count} undirected edges impossible with m={m}")
    rng = np.random.default_rng(seed)
    # directed edge id e -> (src, dst): src = e // (n-1), dst skips src
    codes = _sample_distinct(n * (n - 1), edge_count, rng) if n > 1 else np.empty(0, np.int64)
    src = codes // (n - 1) if n > 1 else codes
    rem = codes % (n - 1) if n > 1 else codes
    dst = rem + (rem >= src)
    social = SocialGraph.with_reciprocal_weights(n, zip(src.tolist(), dst.tolist()))
    pair_codes = (_sample_distinct(m * (m - 1) // 2, item_edge_count, rng)
                  if m > 1 else np.empty(0, np.int64))
    # undirected pair id -> (a, b), a < b, row-major over the strict upper triangle
    a = (np.ceil((2 * m - 1 - np.sqrt((2 * m - 1) ** 2 - 8.0 * (pair_codes + 1))) / 2) - 1
         ).astype(np.int64) if len(pair_codes) else np.empty(0, np.int64)
    offset = a * (2 * m - a - 1) // 2
    b = pair_codes - offset + a + 1
    items = ItemGraph(m, zip(a.tolist(), b.tolist()))
    prefs = PreferenceMatrix(rng.random((n, m)))
    return social, items, prefs


# ---------------------------------------------------------------------------
# dataset bundle: one plain-text file holding both graphs and the matrix
# ---------------------------------------------------------------------------

BUNDLE_VERSION = 1


def save_bundle(path, social: SocialGraph, items: ItemGraph,
                prefs: PreferenceMatrix) -> None:
    """Write the bundle file. Floats are written with repr, so loading
    reproduces them bit-exactly and equal inputs produce equal bytes."""
    prefs.check_dims(social, items)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# multiplex influence dataset bundle\n")
        fh.write(f"version {BUNDLE_VERSION}\n")
        fh.write(f"users {social.n}\n")
        fh.write(f"items {items.m}\n")
        fh.write(f"user_edges {social.edge_count}\n")
        for s, t, w in zip(social.sources.tolist(), social.targets.tolist(),
                           social.weights.tolist()):
            fh.write(f"{s} {t} {w!r}\n")
        fh.write(f"item_edges {items.edge_count}\n")
        for a, b in items.edges:
            fh.write(f"{a} {b}\n")
        fh.write(f"preferences {prefs.n} {prefs.m}\n")
        for row in prefs.values:
            fh.write(" ".join(repr(v) for v in row.tolist()) + "\n")


def load_bundle(path) -> tuple[SocialGraph, ItemGraph, PreferenceMatrix]:
    lines = _data_lines(path)

    def expect(keyword: str, nfields: int) -> list[str]:
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise ParseError(f"{path}: truncated bundle, expected '{keyword}'") from None
        if tok[0] != keyword or len(tok) != nfields + 1:
            raise ParseError(f"{path}:{lineno}: expected '{keyword}' with {nfields} fields")
        return tok[1:]

    version = int(expect("version", 1)[0])
    if version != BUNDLE_VERSION:
        raise ParseError(f"{path}: unsupported bundle version {version}")
    n = int(expect("users", 1)[0])
    m = int(expect("items", 1)[0])
    n_edges = int(expect("user_edges", 1)[0])
    user_edges = []
    for _ in range(n_edges):
        lineno, tok = next(lines, (None, None))
        if tok is None or len(tok) != 3:
            raise ParseError(f"{path}: bad user edge line (line {lineno})")
        user_edges.append((int(tok[0]), int(tok[1]), float(tok[2])))
    m_edges = int(expect("item_edges", 1)[0])
    item_edges = []
    for _ in range(m_edges):
        lineno, tok = next(lines, (None, None))
        if tok is None or len(tok) != 2:
            raise ParseError(f"{path}: bad item edge line (line {lineno})")
        item_edges.append((int(tok[0]), int(tok[1])))
    pn, pm = (int(v) for v in expect("preferences", 2))
    if pn != n or pm != m:
        raise ParseError(f"{path}: preference shape {pn}x{pm} does not match graphs")
    rows = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        lineno, tok = next(lines, (None, None))
        if tok is None or len(tok) != m:
            raise ParseError(f"{path}: bad preference row (line {lineno})")
        rows[i] = [float(v) for v in tok]
    social = SocialGraph(n, user_edges)
    items = ItemGraph(m, item_edges)
    prefs = PreferenceMatrix(rows)
    prefs.check_dims(social, items)
    return social, items, prefs


def bundle_stats(social: SocialGraph, items: ItemGraph) -> dict[str, int]:
    """Counts in the order the dataset tables are usually reported."""
    return {
        "users": social.n,
        "user_edges": social.edge_count,
        "items": items.m,
        "item_edges": items.edge_count,
    }
