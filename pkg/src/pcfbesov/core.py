"""Combinatorial encodings of p.c.f. self-similar sets.

A fractal is described purely combinatorially: N contraction branches, a
prototype vertex set with boundary flags, a gluing table identifying
branch-image vertices, resistance weights and a boundary energy matrix.
No geometric realization is ever needed; partitions, glued vertex graphs,
the self-similar measure and the dimension triple all derive from this data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DisconnectedGluing,
    InvalidLaplacian,
    LevelTooLarge,
    SchemaError,
)

Word = tuple[int, ...]

# Slack factor for the partition comparison r_w <= r^m; weight products and
# powers of r drift by a few ulp relative to each other.
_PARTITION_TOL = 1.0 + 1e-9

_SCHEMA_KEYS = {"name", "branches", "v0", "boundary", "gluings", "r", "H"}
_OPTIONAL_KEYS = {"anchors"}


@dataclass(frozen=True)
class FractalDescriptor:
    """Combinatorial i.f.s.: branches, prototype vertices, gluings, (H, r).

    `gluings` entries (i, a, j, b) state that branch i's image of prototype
    vertex a coincides with branch j's image of prototype vertex b (branches
    1-based, prototype vertices 0-based).  `anchors` entries (i, a, c) state
    that branch i maps prototype vertex a onto prototype vertex c; by default
    branch i fixes prototype vertex i-1, which covers every built-in preset.
    """

    name: str
    nbranches: int
    v0size: int
    boundary: tuple[int, ...]
    gluings: tuple[tuple[int, int, int, int], ...]
    r: tuple[float, ...]
    H: np.ndarray
    anchors: tuple[tuple[int, int, int], ...] = field(default=())

    @property
    def interior(self) -> tuple[int, ...]:
        return tuple(q for q in range(self.v0size) if q not in set(self.boundary))

    @property
    def rmin(self) -> float:
        return min(self.r)

    def edge_pairs(self) -> list[tuple[int, int]]:
        """Prototype vertex pairs carrying positive conductance."""
        pairs = []
        for a in range(self.v0size):
            for b in range(a + 1, self.v0size):
                if self.H[a, b] > 0.0:
                    pairs.append((a, b))
        return pairs

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "branches": self.nbranches,
            "v0": self.v0size,
            "boundary": list(self.boundary),
            "gluings": [list(g) for g in self.gluings],
            "r": list(self.r),
            "H": [[float(x) for x in row] for row in self.H],
            "anchors": [list(a) for a in self.anchors],
        }

    def content_hash(self) -> str:
        import hashlib

        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _default_anchors(nbranches: int, v0size: int) -> list[tuple[int, int, int]]:
    # Branch i fixes prototype vertex i-1 (the fixed-point convention all
    # presets follow).
    return [(i, i - 1, i - 1) for i in range(1, min(nbranches, v0size) + 1)]


def _close_anchors(
    anchors: Iterable[tuple[int, int, int]],
    gluings: Iterable[tuple[int, int, int, int]],
    v0size: int,
) -> tuple[tuple[int, int, int], ...]:
    """Propagate anchors through gluings: if branch slot (i,a) lands on
    prototype c and (i,a) is glued to (j,b) then (j,b) lands on c too."""
    target: dict[tuple[int, int], int] = {}
    for i, a, c in anchors:
        key = (i, a)
        if key in target and target[key] != c:
            raise SchemaError(f"conflicting anchors for branch slot {key}")
        target[key] = c
    changed = True
    while changed:
        changed = False
        for i, a, j, b in gluings:
            for src, dst in (((i, a), (j, b)), ((j, b), (i, a))):
                if src in target:
                    c = target[src]
                    if dst not in target:
                        target[dst] = c
                        changed = True
                    elif target[dst] != c:
                        raise SchemaError(
                            f"gluing {(i, a, j, b)} identifies distinct "
                            f"prototype vertices {target[dst]} and {c}"
                        )
    covered = {c for c in target.values()}
    missing = [c for c in range(v0size) if c not in covered]
    if missing:
        raise SchemaError(
            f"prototype vertices {missing} have no anchor; every prototype "
            "vertex must appear as a branch image (add 'anchors' entries)"
        )
    return tuple(sorted((i, a, c) for (i, a), c in target.items()))


def _validate_laplacian(H: np.ndarray) -> None:
    n = H.shape[0]
    if H.shape != (n, n):
        raise InvalidLaplacian("H must be square")
    if not np.allclose(H, H.T, atol=1e-12, rtol=0.0):
        raise InvalidLaplacian("H must be symmetric")
    off = H - np.diag(np.diag(H))
    if np.any(off < -1e-12):
        raise InvalidLaplacian("off-diagonal entries of H must be nonnegative")
    if np.max(np.abs(H.sum(axis=1))) > 1e-10:
        raise InvalidLaplacian("rows of H must sum to zero")
    # Kernel is exactly the constants iff the positive-conductance graph
    # is connected.
    adj = off > 0.0
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in np.nonzero(adj[u])[0]:
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    if not seen.all():
        raise InvalidLaplacian("conductance graph of H is disconnected")


def _validate_descriptor(desc: FractalDescriptor) -> None:
    if desc.nbranches < 2:
        raise SchemaError("need at least two branches")
    if desc.v0size < 2:
        raise SchemaError("need at least two prototype vertices")
    if not desc.boundary:
        raise SchemaError("boundary set must be nonempty")
    if any(q < 0 or q >= desc.v0size for q in desc.boundary):
        raise SchemaError("boundary indices out of range")
    if len(set(desc.boundary)) != len(desc.boundary):
        raise SchemaError("boundary indices must be distinct")
    if len(desc.r) != desc.nbranches:
        raise SchemaError("need one resistance weight per branch")
    if any(not (0.0 < ri < 1.0) for ri in desc.r):
        raise SchemaError("resistance weights must lie in (0, 1)")
    if desc.H.shape != (desc.v0size, desc.v0size):
        raise SchemaError("H has the wrong shape")
    for g in desc.gluings:
        i, a, j, b = g
        if not (1 <= i <= desc.nbranches and 1 <= j <= desc.nbranches):
            raise SchemaError(f"gluing {g} has branch index out of range")
        if i == j:
            raise SchemaError(f"gluing {g} must identify distinct branches")
        if not (0 <= a < desc.v0size and 0 <= b < desc.v0size):
            raise SchemaError(f"gluing {g} has prototype index out of range")
    _validate_laplacian(desc.H)
    # Level-1 cell graph must be connected through the gluing relations.
    adj: dict[int, set[int]] = {i: set() for i in range(1, desc.nbranches + 1)}
    for i, _, j, _ in desc.gluings:
        adj[i].add(j)
        adj[j].add(i)
    seen = {1}
    stack = [1]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != desc.nbranches:
        raise DisconnectedGluing(
            f"gluing relations reach only cells {sorted(seen)}"
        )


def make_descriptor(
    name: str,
    branches: int,
    v0: int,
    boundary: Sequence[int],
    gluings: Sequence[Sequence[int]],
    r: Sequence[float],
    H: Sequence[Sequence[float]],
    anchors: Sequence[Sequence[int]] | None = None,
) -> FractalDescriptor:
    """Build and validate a descriptor from plain Python data."""
    Hm = np.array(H, dtype=float)
    Hm.flags.writeable = False
    raw_anchors = (
        [tuple(int(x) for x in a) for a in anchors]
        if anchors is not None
        else _default_anchors(int(branches), int(v0))
    )
    glu = tuple(tuple(int(x) for x in g) for g in gluings)
    desc = FractalDescriptor(
        name=str(name),
        nbranches=int(branches),
        v0size=int(v0),
        boundary=tuple(int(q) for q in boundary),
        gluings=glu,
        r=tuple(float(x) for x in r),
        H=Hm,
        anchors=(),
    )
    _validate_descriptor(desc)
    closed = _close_anchors(raw_anchors, glu, int(v0))
    for i, a, c in closed:
        if not (1 <= i <= desc.nbranches and 0 <= a < desc.v0size and 0 <= c < desc.v0size):
            raise SchemaError(f"anchor {(i, a, c)} out of range")
    object.__setattr__(desc, "anchors", closed)
    return desc


def load_descriptor(source) -> FractalDescriptor:
    """Load a descriptor from a dict, JSON text, or a path to a JSON file."""
    if isinstance(source, FractalDescriptor):
        return source
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}") from exc
        else:
            try:
                with open(text, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
            except OSError as exc:
                raise SchemaError(f"cannot read descriptor: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("descriptor document must be a JSON object")
    keys = set(doc)
    missing = _SCHEMA_KEYS - keys
    if missing:
        raise SchemaError(f"missing keys: {sorted(missing)}")
    unknown = keys - _SCHEMA_KEYS - _OPTIONAL_KEYS
    if unknown:
        raise SchemaError(f"unknown keys: {sorted(unknown)}")
    try:
        return make_descriptor(
            doc["name"],
            doc["branches"],
            doc["v0"],
            doc["boundary"],
            doc["gluings"],
            doc["r"],
            doc["H"],
            doc.get("anchors"),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed descriptor field: {exc}") from exc


# ---------------------------------------------------------------------------
# Presets


def _interval_descriptor() -> FractalDescriptor:
    return make_descriptor(
        "interval",
        branches=2,
        v0=2,
        boundary=[0, 1],
        gluings=[[1, 1, 2, 0]],
        r=[0.5, 0.5],
        H=[[-1.0, 1.0], [1.0, -1.0]],
    )


def _sg_descriptor() -> FractalDescriptor:
    return make_descriptor(
        "sg",
        branches=3,
        v0=3,
        boundary=[0, 1, 2],
        gluings=[[1, 1, 2, 0], [1, 2, 3, 0], [2, 2, 3, 1]],
        r=[0.6, 0.6, 0.6],
        H=[[-2.0, 1.0, 1.0], [1.0, -2.0, 1.0], [1.0, 1.0, -2.0]],
    )


def _vicsek_descriptor(k: int = 1) -> FractalDescriptor:
    """(2k+1)-Vicsek cross: 4 corner cells, one center cell, and k-1
    intermediate cells along each half-diagonal; contraction 1/(2k+1)."""
    if k < 1:
        raise SchemaError("vicsek order k must be >= 1")
    n = 4 * k + 1
    rho = 1.0 / (2 * k + 1)
    # Prototype: corners q1..q4 (0..3) and center q5 (4); unit star energy.
    H = [
        [-1.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, -1.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, -1.0, 1.0],
        [1.0, 1.0, 1.0, 1.0, -4.0],
    ]
    opposite = {0: 2, 1: 3, 2: 0, 3: 1}

    def chain_branch(c: int, j: int) -> int:
        # Cells along the half-diagonal toward corner c: j = 0 is the center
        # cell, j = k the corner cell, intermediate cells in between.
        if j == 0:
            return 5
        if j == k:
            return c + 1
        return 5 + 4 * (j - 1) + (c + 1)

    gluings = []
    for c in range(4):
        for j in range(k):
            # Outward corner of the inner cell meets the inward (opposite)
            # corner of the next cell out along the half-diagonal.
            lo = chain_branch(c, j)
            hi = chain_branch(c, j + 1)
            g = [lo, c, hi, opposite[c]]
            gluings.append(g if g[0] < g[2] else [g[2], g[3], g[0], g[1]])
    name = "vicsek" if k == 1 else f"vicsek2k1:{k}"
    return make_descriptor(
        name,
        branches=n,
        v0=5,
        boundary=[0, 1, 2, 3],
        gluings=gluings,
        r=[rho] * n,
        H=H,
    )


def preset(name: str) -> FractalDescriptor:
    """Built-in descriptors: interval, sg, vicsek, vicsek2k1:k."""
    key = name.strip().lower()
    if key == "interval":
        return _interval_descriptor()
    if key == "sg":
        return _sg_descriptor()
    if key == "vicsek":
        return _vicsek_descriptor(1)
    if key.startswith("vicsek2k1:"):
        try:
            k = int(key.split(":", 1)[1])
        except ValueError as exc:
            raise SchemaError(f"bad vicsek order in preset {name!r}") from exc
        return _vicsek_descriptor(k)
    raise SchemaError(f"unknown preset {name!r}")


PRESET_NAMES = ("interval", "sg", "vicsek", "vicsek2k1:k")


# ---------------------------------------------------------------------------
# Dimensions and measure


@dataclass(frozen=True)
class Dimensions:
    d_h: float
    d_w: float
    d_s: float


def solve_hausdorff_dimension(r: Sequence[float], tol: float = 1e-14) -> float:
    """Unique s > 0 with sum(r_i^s) = 1; bisection plus one Newton polish."""
    w = np.asarray(r, dtype=float)
    if np.any(w <= 0.0) or np.any(w >= 1.0):
        raise ValueError("weights must lie in (0, 1)")

    def g(s: float) -> float:
        return float(np.sum(w**s)) - 1.0

    lo, hi = 1e-12, 1.0
    while g(hi) > 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("dimension solve failed to bracket")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    dg = float(np.sum(w**s * np.log(w)))
    if dg != 0.0:
        s -= g(s) / dg
    return s


def dims(desc: FractalDescriptor) -> Dimensions:
    d_h = solve_hausdorff_dimension(desc.r)
    d_w = 1.0 + d_h
    return Dimensions(d_h=d_h, d_w=d_w, d_s=2.0 * d_h / d_w)


def word_weight(desc: FractalDescriptor, w: Word) -> float:
    """r_w, the product of resistance weights along the word."""
    out = 1.0
    for letter in w:
        out *= desc.r[letter - 1]
    return out


def cell_measure(desc: FractalDescriptor, w: Word, d_h: float | None = None) -> float:
    """mu_w = prod r_{w_i}^{d_H}; multiplicative over concatenation."""
    if d_h is None:
        d_h = solve_hausdorff_dimension(desc.r)
    out = 1.0
    for letter in w:
        out *= desc.r[letter - 1] ** d_h
    return out


# ---------------------------------------------------------------------------
# Partitions


@dataclass(frozen=True)
class Partition:
    """The word antichain of cells with resistance diameter comparable to r^m."""

    level: int
    words: tuple[Word, ...]
    base_scale: float

    def __len__(self) -> int:
        return len(self.words)


def build_partition(
    desc: FractalDescriptor, m: int, cell_budget: int = 2_000_000
) -> Partition:
    """Words w with r_w <= r^m < r_{w*}, r the smallest branch weight."""
    if m < 0:
        raise ValueError("level must be nonnegative")
    rmin = desc.rmin
    if m == 0:
        return Partition(level=0, words=((),), base_scale=rmin)
    cutoff = rmin**m * _PARTITION_TOL
    out: list[Word] = []
    stack: list[tuple[Word, float]] = [((), 1.0)]
    while stack:
        w, rw = stack.pop()
        if rw <= cutoff:
            out.append(w)
            if len(out) > cell_budget:
                raise LevelTooLarge(
                    f"partition at level {m} exceeds cell budget {cell_budget}"
                )
            continue
        for letter in range(desc.nbranches, 0, -1):
            stack.append((w + (letter,), rw * desc.r[letter - 1]))
    out.sort()
    return Partition(level=m, words=tuple(out), base_scale=rmin)


def sample_infinite_word_prefix_count(
    desc: FractalDescriptor, partition: Partition, rng: np.random.Generator, length: int = 64
) -> int:
    """How many partition words prefix a random infinite word (should be 1)."""
    letters = tuple(rng.integers(1, desc.nbranches + 1, size=length))
    words = set(partition.words)
    hits = 0
    for cut in range(length + 1):
        if letters[:cut] in words:
            hits += 1
    return hits


# ---------------------------------------------------------------------------
# Glued vertex hierarchy


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        p = self.parent
        root = x
        while p.get(root, root) != root:
            root = p[root]
        while p.get(x, x) != x:
            p[x], x = root, p[x]
        return root

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[max(rx, ry)] = min(rx, ry)


@dataclass
class LevelCells:
    """Cells of one partition level with their glued vertex slots."""

    level: int
    words: list[Word]
    slots: np.ndarray  # (ncells, v0size) global vertex ids
    rw: np.ndarray  # (ncells,) resistance weights r_w
    mu: np.ndarray  # (ncells,) measures mu_w
    parent: np.ndarray  # (ncells,) index into the previous level's cells


class LevelHierarchy:
    """Partition tree with one global vertex id space across all levels.

    Ids are assigned in refinement order, so the vertex set of level m is
    exactly the ids below ``counts[m]`` and the ring of level m is the ids
    born at that wave.
    """

    def __init__(
        self,
        desc: FractalDescriptor,
        max_level: int = 0,
        cell_budget: int = 2_000_000,
        vertex_budget: int = 5_000_000,
    ):
        self.desc = desc
        self.dims = dims(desc)
        self.cell_budget = int(cell_budget)
        self.vertex_budget = int(vertex_budget)
        self.levels: list[LevelCells] = []
        self.counts: list[int] = []
        self.birth: np.ndarray = np.zeros(0, dtype=np.int32)
        self._mu_letter = np.array(
            [ri**self.dims.d_h for ri in desc.r], dtype=float
        )
        self._init_root()
        self.ensure_level(max_level)

    # -- construction ------------------------------------------------------

    def _init_root(self):
        v0 = self.desc.v0size
        root = LevelCells(
            level=0,
            words=[()],
            slots=np.arange(v0, dtype=np.int64).reshape(1, v0),
            rw=np.ones(1),
            mu=np.ones(1),
            parent=np.zeros(1, dtype=np.int64),
        )
        self.levels = [root]
        self.counts = [v0]
        self.birth = np.zeros(v0, dtype=np.int32)

    def ensure_level(self, m: int):
        while self.max_level < m:
            self._refine_wave()

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    def _refine_wave(self):
        desc = self.desc
        n = self.max_level + 1
        cutoff = desc.rmin**n * _PARTITION_TOL
        prev = self.levels[-1]
        nextid = self.counts[-1]
        uf = _UnionFind()
        anchor_of = {(i, a): c for i, a, c in desc.anchors}

        # Wave-local node store: word -> (slot keys, rw, origin cell index).
        # Slot keys are either ("o", id) for inherited parent vertices or
        # ("n", word, proto) for vertices created in this wave.
        leaf_words: list[Word] = []
        leaf_keys: list[list] = []
        leaf_rw: list[float] = []
        leaf_parent: list[int] = []

        queue: list[tuple[Word, list, float, int]] = []
        for ci, w in enumerate(prev.words):
            keys = [("o", int(s)) for s in prev.slots[ci]]
            queue.append((w, keys, float(prev.rw[ci]), ci))

        while queue:
            w, keys, rw, origin = queue.pop()
            children = []
            for letter in range(1, desc.nbranches + 1):
                cw = w + (letter,)
                ckeys: list = [None] * desc.v0size
                for a in range(desc.v0size):
                    c = anchor_of.get((letter, a))
                    if c is not None:
                        ckeys[a] = keys[c]
                    else:
                        ckeys[a] = ("n", cw, a)
                children.append((cw, ckeys, rw * desc.r[letter - 1]))
            for i, a, j, b in desc.gluings:
                ka = children[i - 1][1][a]
                kb = children[j - 1][1][b]
                if ka[0] == "o" and kb[0] == "o":
                    if ka != kb:
                        raise SchemaError(
                            "gluing table identifies two distinct existing "
                            f"vertices near cell {w}"
                        )
                else:
                    uf.union(ka, kb)
            for cw, ckeys, crw in children:
                if crw <= cutoff:
                    leaf_words.append(cw)
                    leaf_keys.append(ckeys)
                    leaf_rw.append(crw)
                    leaf_parent.append(origin)
                    if len(leaf_words) > self.cell_budget:
                        raise LevelTooLarge(
                            f"level {n} exceeds cell budget {self.cell_budget}"
                        )
                else:
                    queue.append((cw, ckeys, crw, origin))

        # Canonicalize: order new-vertex classes by their smallest slot key
        # (lexicographic word, then prototype index).
        class_min: dict = {}
        for keys in leaf_keys:
            for k in keys:
                root = uf.find(k)
                if root[0] == "o":
                    continue
                tag = (k[1], k[2])
                if root not in class_min or tag < class_min[root]:
                    class_min[root] = tag
        # A class may contain an inherited id (gluing onto an anchored slot);
        # resolve every member to that id in that case.
        resolved: dict = {}
        old_in_class: dict = {}
        for keys in leaf_keys:
            for k in keys:
                if k[0] == "o":
                    root = uf.find(k)
                    if root[0] != "o":
                        prev_id = old_in_class.get(root)
                        if prev_id is not None and prev_id != k[1]:
                            raise SchemaError(
                                "gluing closure merges two distinct vertices"
                            )
                        old_in_class[root] = k[1]
        new_classes = sorted(
            (tag, root)
            for root, tag in class_min.items()
            if root not in old_in_class
        )
        for tag, root in new_classes:
            resolved[root] = nextid
            nextid += 1
        if nextid > self.vertex_budget:
            raise LevelTooLarge(
                f"level {n} exceeds vertex budget {self.vertex_budget}"
            )

        def slot_id(k) -> int:
            if k[0] == "o":
                root = uf.find(k)
                return int(k[1])
            root = uf.find(k)
            if root in old_in_class:
                return int(old_in_class[root])
            return resolved[root]

        idx = sorted(range(len(leaf_words)), key=lambda i: leaf_words[i])
        words = [leaf_words[i] for i in idx]
        slots = np.array(
            [[slot_id(k) for k in leaf_keys[i]] for i in idx], dtype=np.int64
        )
        rw = np.array([leaf_rw[i] for i in idx])
        parent = np.array([leaf_parent[i] for i in idx], dtype=np.int64)
        mu = np.array(
            [
                float(np.prod(self._mu_letter[[l - 1 for l in w]]))
                if w
                else 1.0
                for w in words
            ]
        )
        newborn = nextid - self.counts[-1]
        self.birth = np.concatenate(
            [self.birth, np.full(newborn, n, dtype=np.int32)]
        )
        self.counts.append(nextid)
        self.levels.append(
            LevelCells(level=n, words=words, slots=slots, rw=rw, mu=mu, parent=parent)
        )

    # -- queries -----------------------------------------------------------

    def nvertices(self, m: int) -> int:
        self.ensure_level(m)
        return self.counts[m]

    def cells(self, m: int) -> LevelCells:
        self.ensure_level(m)
        return self.levels[m]

    def partition(self, m: int) -> Partition:
        self.ensure_level(m)
        return Partition(
            level=m, words=tuple(self.levels[m].words), base_scale=self.desc.rmin
        )

    def ring_ids(self, m: int) -> np.ndarray:
        """Vertices born at level m (all of V_{Lambda_0} when m = 0)."""
        self.ensure_level(m)
        lo = 0 if m == 0 else self.counts[m - 1]
        return np.arange(lo, self.counts[m], dtype=np.int64)

    def boundary_slot_mask(self, m: int) -> np.ndarray:
        """Marks vertices that appear as a boundary-prototype slot of some
        level-m cell (the images of the true boundary set)."""
        self.ensure_level(m)
        mask = np.zeros(self.counts[m], dtype=bool)
        bidx = list(self.desc.boundary)
        mask[np.unique(self.levels[m].slots[:, bidx])] = True
        return mask

    def cells_of_vertex(self, m: int) -> list[np.ndarray]:
        """For each vertex id at level m, the indices of cells containing it."""
        self.ensure_level(m)
        slots = self.levels[m].slots
        ncells, v0 = slots.shape
        flat = slots.ravel()
        cellidx = np.repeat(np.arange(ncells), v0)
        order = np.argsort(flat, kind="stable")
        flat = flat[order]
        cellidx = cellidx[order]
        bounds = np.searchsorted(flat, np.arange(self.counts[m] + 1))
        return [
            np.unique(cellidx[bounds[i] : bounds[i + 1]])
            for i in range(self.counts[m])
        ]

    def cell_adjacency(self, m: int) -> list[set[int]]:
        """Cells sharing at least one vertex."""
        owner = self.cells_of_vertex(m)
        ncells = len(self.levels[m].words)
        adj: list[set[int]] = [set() for _ in range(ncells)]
        for cells in owner:
            cl = cells.tolist()
            for x in cl:
                for y in cl:
                    if x != y:
                        adj[x].add(y)
        return adj

    def descendant_range(self, m_coarse: int, cell_index: int, m_fine: int) -> tuple[int, int]:
        """Index range of level-m_fine cells below a level-m_coarse cell
        (contiguous because cell words are kept sorted)."""
        self.ensure_level(m_fine)
        w = self.levels[m_coarse].words[cell_index]
        words = self.levels[m_fine].words
        import bisect

        lo = bisect.bisect_left(words, w)
        hi = bisect.bisect_left(words, w + (self.desc.nbranches + 1,))
        return lo, hi

    def parent_map(self, m_fine: int, m_coarse: int) -> np.ndarray:
        """For each level-m_fine cell, the index of its level-m_coarse ancestor."""
        self.ensure_level(m_fine)
        if m_coarse > m_fine:
            raise ValueError("m_coarse must not exceed m_fine")
        idx = np.arange(len(self.levels[m_fine].words), dtype=np.int64)
        for level in range(m_fine, m_coarse, -1):
            idx = self.levels[level].parent[idx]
        return idx

    def suffixes(self, m: int) -> list[Word]:
        """Relative words from each level-m cell's parent cell down to it."""
        self.ensure_level(m)
        if m == 0:
            return [()]
        cells = self.levels[m]
        prev = self.levels[m - 1]
        out = []
        for ci, w in enumerate(cells.words):
            pw = prev.words[cells.parent[ci]]
            out.append(w[len(pw):])
        return out
