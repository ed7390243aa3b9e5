"""Harmonic structure, graph energies and effective resistance.

The harmonic structure is derived from one refinement step: conditioning the
level-1 graph energy on the prototype vertices yields the extension matrices,
and the Schur complement back onto the prototypes must reproduce the boundary
energy matrix (the trace identity).  Level-m graph Laplacians, harmonic
extensions and resistance queries all build on that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Dimensions, FractalDescriptor, LevelHierarchy, Word, dims
from .errors import (
    DimensionMismatch,
    FixedPointDivergence,
    HarmonicStructureViolation,
    SingularInterior,
    SolverFailure,
)

TRACE_TOL = 1e-8
_DIRECT_SOLVE_LIMIT = 200_000


@dataclass(frozen=True)
class HarmonicStructure:
    """Extension matrices, integration weights and dimensions of a descriptor."""

    desc: FractalDescriptor
    dims: Dimensions
    extensions: np.ndarray  # (N, v0size, v0size); cell values = A_i @ prototype values
    alpha: np.ndarray  # harmonic integration weights, sum 1
    basis: np.ndarray  # (v0size, nboundary); fills interior prototypes harmonically
    trace_residual: float

    @property
    def nboundary(self) -> int:
        return len(self.desc.boundary)

    @property
    def mu(self) -> np.ndarray:
        return np.array([ri**self.dims.d_h for ri in self.desc.r])

    def fill(self, f0: np.ndarray) -> np.ndarray:
        """Full prototype vector from boundary data (interior vertices get
        their level-0 harmonic values)."""
        f0 = np.asarray(f0, dtype=float)
        if f0.shape[-1] != self.nboundary:
            raise DimensionMismatch(
                f"boundary data must have length {self.nboundary}"
            )
        return f0 @ self.basis.T


def _level1_table(desc: FractalDescriptor):
    """Slot ids of the one-step refinement (all N children of the root)."""
    anchor_of = {(i, a): c for i, a, c in desc.anchors}
    v0 = desc.v0size
    parent = {}

    def find(x):
        root = x
        while parent.get(root, root) != root:
            root = parent[root]
        while parent.get(x, x) != x:
            parent[x], x = root, parent[x]
        return root

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    keys = [
        [("o", anchor_of[(i, a)]) if (i, a) in anchor_of else ("n", i, a) for a in range(v0)]
        for i in range(1, desc.nbranches + 1)
    ]
    for i, a, j, b in desc.gluings:
        union(keys[i - 1][a], keys[j - 1][b])
    ids: dict = {}
    nextid = v0
    slot_ids = np.zeros((desc.nbranches, v0), dtype=int)
    for i in range(desc.nbranches):
        for a in range(v0):
            root = find(keys[i][a])
            if root[0] == "o":
                slot_ids[i, a] = root[1]
            else:
                if root not in ids:
                    ids[root] = nextid
                    nextid += 1
                slot_ids[i, a] = ids[root]
    return slot_ids, nextid


def derive_extension(desc: FractalDescriptor) -> HarmonicStructure:
    """Solve the one-step refinement for the extension matrices and verify the
    trace identity; then solve the self-similar identity for the integration
    weights."""
    dm = dims(desc)
    v0 = desc.v0size
    L0 = -desc.H
    slot_ids, n1 = _level1_table(desc)

    L1 = np.zeros((n1, n1))
    for i in range(desc.nbranches):
        sel = slot_ids[i]
        L1[np.ix_(sel, sel)] += L0 / desc.r[i]

    root = np.arange(v0)
    inner = np.arange(v0, n1)
    if len(inner) == 0:
        raise SingularInterior("one-step refinement produced no interior vertices")
    try:
        X = np.linalg.solve(L1[np.ix_(inner, inner)], -L1[np.ix_(inner, root)])
    except np.linalg.LinAlgError as exc:
        raise SingularInterior(f"interior block not invertible: {exc}") from exc

    schur = L1[np.ix_(root, root)] + L1[np.ix_(root, inner)] @ X
    residual = float(np.max(np.abs(schur - L0)))
    if residual > TRACE_TOL:
        raise HarmonicStructureViolation(
            f"trace identity residual {residual:.3e} exceeds {TRACE_TOL:.0e}; "
            "the supplied (H, r) is not a harmonic structure"
        )

    full = np.vstack([np.eye(v0), X])  # harmonic values at every level-1 vertex
    A = np.stack([full[slot_ids[i]] for i in range(desc.nbranches)])
    ones_residual = float(np.max(np.abs(A.sum(axis=2) - 1.0)))
    if ones_residual > TRACE_TOL:
        raise HarmonicStructureViolation(
            f"extension matrices do not preserve constants ({ones_residual:.3e})"
        )

    mu = np.array([ri**dm.d_h for ri in desc.r])
    M = np.tensordot(mu, A, axes=1)  # sum_i mu_i A_i, row sums 1
    sys = np.vstack([M.T - np.eye(v0), np.ones((1, v0))])
    rhs = np.zeros(v0 + 1)
    rhs[-1] = 1.0
    alpha, *_ = np.linalg.lstsq(sys, rhs, rcond=None)
    fp_residual = float(np.max(np.abs(M.T @ alpha - alpha)))
    if fp_residual > 1e-12 or np.any(alpha < -1e-12):
        raise FixedPointDivergence(
            f"integration-weight fixed point failed (residual {fp_residual:.3e}, "
            f"min weight {alpha.min():.3e}); descriptor is inconsistent"
        )
    alpha = np.clip(alpha, 0.0, None)
    alpha /= alpha.sum()

    basis = np.zeros((v0, len(desc.boundary)))
    bidx = list(desc.boundary)
    iidx = list(desc.interior)
    basis[bidx, np.arange(len(bidx))] = 1.0
    if iidx:
        Hii = desc.H[np.ix_(iidx, iidx)]
        Hib = desc.H[np.ix_(iidx, bidx)]
        try:
            basis[iidx] = -np.linalg.solve(Hii, Hib)
        except np.linalg.LinAlgError as exc:
            raise SingularInterior(
                f"interior prototype block of H is singular: {exc}"
            ) from exc

    for arr in (A, alpha, basis):
        arr.flags.writeable = False
    return HarmonicStructure(
        desc=desc,
        dims=dm,
        extensions=A,
        alpha=alpha,
        basis=basis,
        trace_residual=residual,
    )


# ---------------------------------------------------------------------------
# Piecewise-harmonic extension


def extend_cellwise(
    structure: HarmonicStructure,
    hier: LevelHierarchy,
    f0: np.ndarray,
    m: int,
) -> np.ndarray:
    """Per-cell prototype values of the harmonic extension at level m.

    Returns an array (ncells, v0size).  The letter nearest the cell is applied
    last: values on cell w*i are A_i times the values on cell w.
    """
    hier.ensure_level(m)
    A = structure.extensions
    vals = structure.fill(np.asarray(f0, dtype=float)).reshape(1, -1)
    for level in range(1, m + 1):
        cells = hier.cells(level)
        parent_vals = vals[cells.parent]
        out = np.empty_like(parent_vals)
        suffixes = hier.suffixes(level)
        groups: dict[Word, list[int]] = {}
        for ci, s in enumerate(suffixes):
            groups.setdefault(s, []).append(ci)
        for s, idx in groups.items():
            block = parent_vals[idx]
            for letter in s:
                block = block @ A[letter - 1].T
            out[idx] = block
        vals = out
    return vals


def cell_values_to_vertex(
    hier: LevelHierarchy, m: int, cellvalues: np.ndarray
) -> np.ndarray:
    """Scatter per-cell prototype values onto the glued vertex ids."""
    n = hier.nvertices(m)
    slots = hier.cells(m).slots
    values = np.zeros(n)
    values[slots.ravel()] = cellvalues.ravel()
    return values


def harmonic_extend(
    structure: HarmonicStructure,
    hier: LevelHierarchy,
    f0: np.ndarray,
    m: int,
) -> np.ndarray:
    """Vertex values of the harmonic extension of boundary data at level m."""
    return cell_values_to_vertex(hier, m, extend_cellwise(structure, hier, f0, m))


# ---------------------------------------------------------------------------
# Graph operators


@dataclass
class GraphOperator:
    """Level-m graph energy operator on canonical vertex ids.

    ``lap`` is the positive-semidefinite form matrix; the operator written
    H_{Lambda_m} in reports is its negative.  Cell provenance is recoverable
    from the hierarchy's slot table: cell w contributes r_w^{-1} H through its
    slot ids.
    """

    level: int
    lap: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.lap.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """H_{Lambda_m} applied to vertex values (note the sign)."""
        return -(self.lap @ values)

    def energy(self, values: np.ndarray) -> float:
        if values.shape[0] != self.n:
            raise DimensionMismatch(
                f"function has {values.shape[0]} values, level graph has {self.n}"
            )
        return float(values @ (self.lap @ values))


def assemble_graph_laplacian(
    desc: FractalDescriptor, hier: LevelHierarchy, m: int
) -> GraphOperator:
    """Sum of r_w^{-1}-scaled prototype energies over the level-m cells."""
    hier.ensure_level(m)
    cells = hier.cells(m)
    n = hier.nvertices(m)
    L0 = -desc.H
    rows, cols, vals = [], [], []
    nz = [(a, b) for a in range(desc.v0size) for b in range(desc.v0size) if L0[a, b] != 0.0]
    inv_rw = 1.0 / cells.rw
    for a, b in nz:
        rows.append(cells.slots[:, a])
        cols.append(cells.slots[:, b])
        vals.append(inv_rw * L0[a, b])
    lap = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    lap.sum_duplicates()
    return GraphOperator(level=m, lap=lap)


def energy(op: GraphOperator, values: np.ndarray) -> float:
    """E_m(f) = -<H_{Lambda_m} f, f>, nonnegative."""
    return op.energy(values)


# ---------------------------------------------------------------------------
# Effective resistance


class ResistanceOracle:
    """Effective resistances on one level graph via a grounded factorization.

    The form matrix has the constants as kernel; grounding vertex 0 makes it
    invertible, and R(x, y) = K_xx + K_yy - 2 K_xy with K the grounded inverse
    (rows/columns of the ground are zero).
    """

    def __init__(self, op: GraphOperator):
        self.level = op.level
        self.n = op.n
        self.ground = 0
        keep = np.arange(1, self.n)
        self._keep = keep
        lap = op.lap.tocsc()
        self._lg = lap[keep][:, keep].tocsc()
        self._solver = None
        self._diag: np.ndarray | None = None

    def _get_solver(self):
        if self._solver is None:
            if self.n - 1 <= _DIRECT_SOLVE_LIMIT:
                try:
                    lu = spla.splu(self._lg)
                except RuntimeError as exc:
                    raise SolverFailure(f"factorization failed: {exc}") from exc
                self._solver = lambda b: lu.solve(b)
            else:
                ilu = spla.spilu(self._lg, drop_tol=1e-5)
                pre = spla.LinearOperator(self._lg.shape, ilu.solve)

                def cg_solve(b):
                    if b.ndim == 1:
                        x, info = spla.cg(self._lg, b, rtol=1e-12, M=pre)
                        if info != 0:
                            raise SolverFailure(f"cg failed with info={info}")
                        return x
                    return np.column_stack([cg_solve(col) for col in b.T])

                self._solver = cg_solve
        return self._solver

    def _solve_grounded(self, rhs: np.ndarray) -> np.ndarray:
        """Solve on the grounded index set and re-embed (ground row = 0)."""
        solve = self._get_solver()
        sol = solve(rhs[self._keep])
        if rhs.ndim == 1:
            out = np.zeros(self.n)
            out[self._keep] = sol
        else:
            out = np.zeros((self.n, rhs.shape[1]))
            out[self._keep] = sol
        return out

    def columns(self, ids: np.ndarray) -> np.ndarray:
        """Grounded-inverse columns K[:, ids] (shape n x len(ids))."""
        rhs = np.zeros((self.n, len(ids)))
        rhs[np.asarray(ids), np.arange(len(ids))] = 1.0
        return self._solve_grounded(rhs)

    def diagonal(self) -> np.ndarray:
        if self._diag is None:
            d = np.zeros(self.n)
            batch = 512
            for lo in range(0, self.n, batch):
                ids = np.arange(lo, min(lo + batch, self.n))
                cols = self.columns(ids)
                d[ids] = cols[ids, np.arange(len(ids))]
            self._diag = d
        return self._diag

    def resistance(self, x: int, y: int) -> float:
        if x == y:
            raise ValueError("resistance needs two distinct vertices")
        col = self.columns(np.array([x]))[:, 0]
        return float(col[x] + self.diag_entry(y) - 2.0 * col[y])

    def diag_entry(self, y: int) -> float:
        if self._diag is not None:
            return float(self._diag[y])
        col = self.columns(np.array([y]))[:, 0]
        return float(col[y])

    def resistance_to_all(self, x: int) -> np.ndarray:
        col = self.columns(np.array([x]))[:, 0]
        return self.diagonal() + col[x] - 2.0 * col

    def resistance_matrix(self) -> np.ndarray:
        """Dense all-pairs resistance matrix (small levels only)."""
        K = self.columns(np.arange(self.n))
        d = np.diag(K).copy()
        self._diag = d
        return d[:, None] + d[None, :] - 2.0 * K


def effective_resistance(op_or_oracle, x: int, y: int) -> float:
    oracle = op_or_oracle
    if isinstance(op_or_oracle, GraphOperator):
        oracle = ResistanceOracle(op_or_oracle)
    return oracle.resistance(x, y)


# ---------------------------------------------------------------------------
# Resistance balls and the separation constant


@dataclass
class SeparationCalibration:
    """Empirical locality constant: vertices of non-adjacent level-n cells are
    at resistance greater than r^(n + k)."""

    k: int
    per_level: dict[int, float] = field(default_factory=dict)
    loose: bool = False


def calibrate_separation(
    desc: FractalDescriptor,
    hier: LevelHierarchy,
    oracles,
    levels=(2, 3, 4),
    max_pairs: int = 48,
) -> SeparationCalibration:
    """Measure min resistance over sampled non-adjacent cell pairs.

    ``oracles`` maps a level to a ResistanceOracle.  The +1 margin keeps the
    bound conservative; the spread across levels is flagged when it exceeds
    one full level (possible for near-degenerate conductances).
    """
    rmin = desc.rmin
    kappas = {}
    for n in levels:
        hier.ensure_level(n)
        adj = hier.cell_adjacency(n)
        cells = hier.cells(n)
        ncells = len(cells.words)
        pairs = []
        for ci in range(ncells):
            two_hop = set()
            for nb in adj[ci]:
                two_hop.update(adj[nb])
            two_hop -= adj[ci] | {ci}
            for cj in sorted(two_hop):
                if cj > ci:
                    pairs.append((ci, cj))
        if not pairs:
            continue
        step = max(1, len(pairs) // max_pairs)
        pairs = pairs[::step][:max_pairs]
        oracle = oracles(n)
        best = np.inf
        for ci, cj in pairs:
            ids_i = np.unique(cells.slots[ci])
            ids_j = np.unique(cells.slots[cj])
            for x in ids_i:
                rall = oracle.resistance_to_all(int(x))
                best = min(best, float(rall[ids_j].min()))
        kappas[n] = np.log(best) / np.log(rmin) - n
    if not kappas:
        return SeparationCalibration(k=1, per_level={}, loose=True)
    kmax = max(kappas.values())
    k = int(np.ceil(kmax)) + 1
    loose = (max(kappas.values()) - min(kappas.values())) > 1.0
    return SeparationCalibration(k=max(k, 1), per_level=kappas, loose=loose)


def resistance_ball(
    hier: LevelHierarchy,
    oracle: ResistanceOracle,
    calibration: SeparationCalibration,
    x: int,
    t: float,
) -> np.ndarray:
    """Vertex ids y at the oracle's level with R(x, y) < t.

    Candidates are restricted to cells within one hop of x's cells at the
    coarse level implied by the separation constant, then checked exactly.
    """
    if t <= 0.0:
        raise ValueError("radius must be positive")
    m = oracle.level
    rmin = hier.desc.rmin
    n_t = int(np.floor(np.log(t) / np.log(rmin))) - calibration.k
    if n_t >= 1 and n_t < m:
        owner = hier.cells_of_vertex(n_t)
        # x exists at level n_t only if born by then; otherwise find its
        # containing cells through the fine level's slot table.
        if x < hier.nvertices(n_t):
            base = set(owner[x].tolist())
        else:
            fine_cells = hier.cells_of_vertex(m)[x]
            pm = hier.parent_map(m, n_t)
            base = set(pm[fine_cells].tolist())
        adj = hier.cell_adjacency(n_t)
        cand_cells = set(base)
        for c in base:
            cand_cells.update(adj[c])
        ids = []
        for c in sorted(cand_cells):
            lo, hi = hier.descendant_range(n_t, c, m)
            ids.append(np.unique(hier.cells(m).slots[lo:hi]))
        cand = np.unique(np.concatenate(ids))
    else:
        cand = np.arange(oracle.n)
    rall = oracle.resistance_to_all(int(x))
    return cand[rall[cand] < t]
