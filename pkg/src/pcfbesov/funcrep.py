"""Function representations: piecewise-harmonic pieces, Haar layers, tents.

Functions are carried either as raw vertex values on a glued level graph or
as per-cell prototype vectors (piecewise harmonic, possibly discontinuous at
cell boundaries).  Integration against the self-similar measure is exact for
harmonic pieces through the integration weights; general p-norms fall back to
refinement sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Word
from .errors import DimensionMismatch

CONTINUITY_TOL = 1e-12


@dataclass
class VertexFunction:
    """Raw values on the canonical vertex ids of one level."""

    level: int
    values: np.ndarray

    def copy(self) -> "VertexFunction":
        return VertexFunction(self.level, self.values.copy())


@dataclass
class PiecewiseHarmonic:
    """Per-cell prototype values at one level; harmonic inside each cell.

    Cells may disagree at shared vertices (Haar layers and projections are
    genuinely discontinuous); ``continuity_defect`` measures the worst gap.
    """

    level: int
    cellvalues: np.ndarray  # (ncells, v0size)

    def scale(self) -> float:
        return float(np.max(np.abs(self.cellvalues))) if self.cellvalues.size else 0.0


# ---------------------------------------------------------------------------
# Conversions


def vertex_to_cellwise(ws, vf: VertexFunction) -> PiecewiseHarmonic:
    slots = ws.hierarchy.cells(vf.level).slots
    if vf.values.shape[0] != ws.hierarchy.nvertices(vf.level):
        raise DimensionMismatch("vertex values do not match the level graph")
    return PiecewiseHarmonic(vf.level, vf.values[slots])


def continuity_defect(ws, pw: PiecewiseHarmonic) -> float:
    """Largest disagreement between cells sharing a vertex."""
    hier = ws.hierarchy
    n = hier.nvertices(pw.level)
    slots = hier.cells(pw.level).slots
    flat_ids = slots.ravel()
    flat_vals = pw.cellvalues.ravel()
    hi = np.full(n, -np.inf)
    lo = np.full(n, np.inf)
    np.maximum.at(hi, flat_ids, flat_vals)
    np.minimum.at(lo, flat_ids, flat_vals)
    return float(np.max(hi - lo))


def cellwise_to_vertex(ws, pw: PiecewiseHarmonic, check: bool = True) -> VertexFunction:
    defect = continuity_defect(ws, pw) if check else 0.0
    if check and defect > CONTINUITY_TOL * max(1.0, pw.scale()):
        raise DimensionMismatch(
            f"representation is discontinuous (defect {defect:.3e}); "
            "vertex values are ill-defined"
        )
    hier = ws.hierarchy
    slots = hier.cells(pw.level).slots
    values = np.zeros(hier.nvertices(pw.level))
    values[slots.ravel()] = pw.cellvalues.ravel()
    return VertexFunction(pw.level, values)


def refine_step(ws, cellvalues: np.ndarray, level_to: int) -> np.ndarray:
    """Harmonic subdivision of per-cell values from level_to-1 to level_to."""
    hier = ws.hierarchy
    hier.ensure_level(level_to)
    A = ws.structure.extensions
    cells = hier.cells(level_to)
    parent_vals = cellvalues[cells.parent]
    out = np.empty_like(parent_vals)
    groups: dict[Word, list[int]] = {}
    for ci, s in enumerate(hier.suffixes(level_to)):
        groups.setdefault(s, []).append(ci)
    for s, idx in groups.items():
        block = parent_vals[idx]
        for letter in s:
            block = block @ A[letter - 1].T
        out[idx] = block
    return out


def refine_cellwise(ws, pw: PiecewiseHarmonic, m_fine: int) -> PiecewiseHarmonic:
    if m_fine < pw.level:
        raise ValueError("cannot refine to a coarser level")
    vals = pw.cellvalues
    for level in range(pw.level + 1, m_fine + 1):
        vals = refine_step(ws, vals, level)
    return PiecewiseHarmonic(m_fine, vals)


def pw_difference(ws, a: PiecewiseHarmonic, b: PiecewiseHarmonic) -> PiecewiseHarmonic:
    m = max(a.level, b.level)
    fa = refine_cellwise(ws, a, m)
    fb = refine_cellwise(ws, b, m)
    return PiecewiseHarmonic(m, fa.cellvalues - fb.cellvalues)


def constant_function(ws, value: float, level: int) -> PiecewiseHarmonic:
    hier = ws.hierarchy
    hier.ensure_level(level)
    ncells = len(hier.cells(level).words)
    return PiecewiseHarmonic(level, np.full((ncells, ws.desc.v0size), float(value)))


# ---------------------------------------------------------------------------
# Integration


def integral(ws, pw: PiecewiseHarmonic) -> float:
    """Exact integral against the self-similar measure."""
    cells = ws.hierarchy.cells(pw.level)
    return float(cells.mu @ (pw.cellvalues @ ws.structure.alpha))


def cell_average(ws, pw: PiecewiseHarmonic, w: Word) -> float:
    """Mean of the function over the cell F_w K (w may be coarser than the
    representation level; it must be a prefix of representation cells)."""
    import bisect

    hier = ws.hierarchy
    cells = hier.cells(pw.level)
    words = cells.words
    lo = bisect.bisect_left(words, tuple(w))
    hi = bisect.bisect_left(words, tuple(w) + (ws.desc.nbranches + 1,))
    if lo == hi:
        raise DimensionMismatch(f"word {w} has no cells at level {pw.level}")
    mu = cells.mu[lo:hi]
    vals = pw.cellvalues[lo:hi] @ ws.structure.alpha
    return float((mu @ vals) / mu.sum())


def lp_norm(
    ws,
    pw: PiecewiseHarmonic,
    p: float,
    depth: int = 5,
    tol: float | None = None,
    return_estimate: bool = False,
):
    """L^p(mu) norm of a piecewise-harmonic representation.

    p = 2 is exact through the Gram fixed point.  Other p use refinement
    sampling: each cell is harmonically refined ``depth`` letter-levels and
    |value|^p is averaged at the refined prototype points with the harmonic
    integration weights.  The error estimate is the change from depth-1, and
    the depth escalates while it exceeds ``tol``.
    """
    if p == 2:
        G = ws.gram()
        cells = ws.hierarchy.cells(pw.level)
        val = float(
            np.sqrt(
                max(
                    0.0,
                    np.einsum(
                        "c,cq,qr,cr->", cells.mu, pw.cellvalues, G, pw.cellvalues
                    ),
                )
            )
        )
        return (val, 0.0) if return_estimate else val
    if not (1.0 <= p < np.inf):
        raise ValueError("p must lie in [1, inf)")
    value, err = _sampled_lp(ws, pw, p, depth)
    while tol is not None and err > tol and depth < 8:
        depth += 1
        value, err = _sampled_lp(ws, pw, p, depth)
    return (value, err) if return_estimate else value


def _depth_operators(ws, depth: int):
    """Stacked harmonic refinement products and weights over uniform words."""
    st = ws.structure
    A = st.extensions
    mu = st.mu
    prods = np.eye(ws.desc.v0size)[None]
    wts = np.ones(1)
    for _ in range(depth):
        prods = np.einsum("iqk,ukr->iuqr", A, prods).reshape(
            -1, ws.desc.v0size, ws.desc.v0size
        )
        wts = (mu[:, None] * wts[None, :]).reshape(-1)
    return prods, wts


def _sampled_lp(ws, pw: PiecewiseHarmonic, p: float, depth: int):
    """Refinement quadrature with Richardson extrapolation; the reported
    estimate is the size of the depth-vs-depth-1 correction."""
    vals = [
        _quadrature_abs_p(ws, pw, p, d) ** (1.0 / p)
        for d in range(max(0, depth - 2), depth + 1)
    ]
    if len(vals) < 3:
        return vals[-1], np.inf
    d1 = vals[1] - vals[0]
    d2 = vals[2] - vals[1]
    if abs(d1) <= 1e-15 * max(1.0, abs(vals[2])):
        return vals[2], abs(d2)
    q = d2 / d1
    if not (0.0 < q < 0.95):
        return vals[2], abs(d2)
    extrap = vals[2] + d2 * q / (1.0 - q)
    return extrap, abs(extrap - vals[2])


def _quadrature_abs_p(ws, pw: PiecewiseHarmonic, p: float, depth: int) -> float:
    prods, wts = _depth_operators(ws, depth)
    alpha = ws.structure.alpha
    cells = ws.hierarchy.cells(pw.level)
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, prods.shape[0] * ws.desc.v0size))
    for lo in range(0, pw.cellvalues.shape[0], chunk):
        block = pw.cellvalues[lo : lo + chunk]
        refined = np.einsum("uqk,ck->cuq", prods, block)
        np.abs(refined, out=refined)
        refined **= p
        total += float(
            np.einsum("c,u,q,cuq->", cells.mu[lo : lo + chunk], wts, alpha, refined)
        )
    return total


# ---------------------------------------------------------------------------
# Haar layers (conditional expectations)


@dataclass
class HaarCoefficients:
    """Cell means E[f|Lambda_n] and their successive differences, n <= level."""

    level: int
    means: list[np.ndarray]
    layers: list[np.ndarray]
    mu: list[np.ndarray]

    def layer_lp(self, n: int, p: float) -> float:
        if p == np.inf:
            return float(np.max(np.abs(self.layers[n])))
        return float((self.mu[n] @ np.abs(self.layers[n]) ** p) ** (1.0 / p))


def conditional_expectation(ws, pw: PiecewiseHarmonic, m: int) -> HaarCoefficients:
    """Exact cell means over every partition up to level m (telescoping by
    construction)."""
    hier = ws.hierarchy
    if pw.level < m:
        pw = refine_cellwise(ws, pw, m)
    cells_fine = hier.cells(pw.level)
    ints = cells_fine.mu * (pw.cellvalues @ ws.structure.alpha)
    means: list[np.ndarray] = [None] * (m + 1)
    mus: list[np.ndarray] = [None] * (m + 1)
    level_ints = ints
    level = pw.level
    while level > m:
        coarser = hier.cells(level - 1)
        agg = np.zeros(len(coarser.words))
        np.add.at(agg, hier.cells(level).parent, level_ints)
        level_ints = agg
        level -= 1
    for n in range(m, -1, -1):
        cells_n = hier.cells(n)
        mus[n] = cells_n.mu.copy()
        means[n] = level_ints / cells_n.mu
        if n > 0:
            agg = np.zeros(len(hier.cells(n - 1).words))
            np.add.at(agg, cells_n.parent, level_ints)
            level_ints = agg
    layers = [means[0].copy()]
    for n in range(1, m + 1):
        layers.append(means[n] - means[n - 1][hier.cells(n).parent])
    return HaarCoefficients(level=m, means=means, layers=layers, mu=mus)


def haar_layer_to_cellwise(ws, haar: HaarCoefficients, n: int) -> PiecewiseHarmonic:
    vals = haar.layers[n]
    return PiecewiseHarmonic(n, np.repeat(vals[:, None], ws.desc.v0size, axis=1))


# ---------------------------------------------------------------------------
# Tent series


@dataclass
class TentSeries:
    """Expansion f = f_0 + sum f_n with f_n harmonic in level-n cells and
    vanishing on the previous level's vertices."""

    level: int
    boundary_data: np.ndarray
    pieces: list[PiecewiseHarmonic]
    coefficients: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    reconstruction: PiecewiseHarmonic | None = None

    def piece(self, n: int) -> PiecewiseHarmonic:
        return self.pieces[n]


def tent_interpolation(ws, vf: VertexFunction) -> TentSeries:
    """Unique tent expansion matching the samples at the glued vertices.

    Values at interior-prototype slots are treated as derived (per-cell
    harmonicity), so exact reconstruction is asserted on the boundary-slot
    images, which is the whole vertex set when every prototype vertex is
    boundary.
    """
    hier = ws.hierarchy
    st = ws.structure
    desc = ws.desc
    M = vf.level
    hier.ensure_level(M)
    if vf.values.shape[0] != hier.nvertices(M):
        raise DimensionMismatch("samples do not match the level graph")
    bidx = list(desc.boundary)
    f0 = vf.values[bidx].astype(float)
    approx = st.fill(f0).reshape(1, -1)
    pieces = [PiecewiseHarmonic(0, approx.copy())]
    coeffs: list[tuple[np.ndarray, np.ndarray]] = []
    for n in range(1, M + 1):
        approx = refine_step(ws, approx, n)
        slots = hier.cells(n).slots
        nv = hier.nvertices(n)
        current = np.zeros(nv)
        current[slots.ravel()] = approx.ravel()
        ring = hier.ring_ids(n)
        bmask = hier.boundary_slot_mask(n)
        coeff_ids = ring[bmask[ring]]
        resid = vf.values[coeff_ids] - current[coeff_ids]
        res_vertex = np.zeros(nv)
        res_vertex[coeff_ids] = resid
        cell_bvals = res_vertex[slots[:, bidx]]
        piece_vals = cell_bvals @ st.basis.T
        pieces.append(PiecewiseHarmonic(n, piece_vals))
        coeffs.append((coeff_ids, resid))
        approx = approx + piece_vals
    return TentSeries(
        level=M,
        boundary_data=f0,
        pieces=pieces,
        coefficients=coeffs,
        reconstruction=PiecewiseHarmonic(M, approx),
    )


def tent_series_from_coefficients(
    ws, M: int, boundary_data: np.ndarray, ring_coeffs: list[np.ndarray]
) -> TentSeries:
    """Assemble a tent series from raw ring coefficients (level 1..M)."""
    hier = ws.hierarchy
    st = ws.structure
    desc = ws.desc
    hier.ensure_level(M)
    bidx = list(desc.boundary)
    approx = st.fill(np.asarray(boundary_data, dtype=float)).reshape(1, -1)
    pieces = [PiecewiseHarmonic(0, approx.copy())]
    coeffs = []
    for n in range(1, M + 1):
        approx = refine_step(ws, approx, n)
        slots = hier.cells(n).slots
        nv = hier.nvertices(n)
        ring = hier.ring_ids(n)
        bmask = hier.boundary_slot_mask(n)
        coeff_ids = ring[bmask[ring]]
        values = np.asarray(ring_coeffs[n - 1], dtype=float)
        if values.shape[0] != coeff_ids.shape[0]:
            raise DimensionMismatch(
                f"level {n} expects {coeff_ids.shape[0]} tent coefficients"
            )
        res_vertex = np.zeros(nv)
        res_vertex[coeff_ids] = values
        piece_vals = res_vertex[slots[:, bidx]] @ st.basis.T
        pieces.append(PiecewiseHarmonic(n, piece_vals))
        coeffs.append((coeff_ids, values))
        approx = approx + piece_vals
    return TentSeries(
        level=M,
        boundary_data=np.asarray(boundary_data, dtype=float),
        pieces=pieces,
        coefficients=coeffs,
        reconstruction=PiecewiseHarmonic(M, approx),
    )


def random_tent_series(ws, M: int, rng: np.random.Generator, scale=None) -> TentSeries:
    """Seeded random tent-coefficient function; ``scale(n)`` sets the
    coefficient magnitude per level (default 1)."""
    hier = ws.hierarchy
    hier.ensure_level(M)
    nb = len(ws.desc.boundary)
    f0 = rng.standard_normal(nb)
    coeffs = []
    for n in range(1, M + 1):
        ring = hier.ring_ids(n)
        bmask = hier.boundary_slot_mask(n)
        count = int(bmask[ring].sum())
        s = 1.0 if scale is None else float(scale(n))
        coeffs.append(rng.standard_normal(count) * s)
    return tent_series_from_coefficients(ws, M, f0, coeffs)


# ---------------------------------------------------------------------------
# Piecewise-harmonic projections


def _suffix_products(ws, m_coarse: int, m_fine: int) -> np.ndarray:
    """For each level-m_fine cell, the extension product mapping its
    level-m_coarse ancestor's prototype values to its own."""
    hier = ws.hierarchy
    hier.ensure_level(m_fine)
    A = ws.structure.extensions
    v0 = ws.desc.v0size
    prods = np.broadcast_to(
        np.eye(v0), (len(hier.cells(m_coarse).words), v0, v0)
    ).copy()
    for level in range(m_coarse + 1, m_fine + 1):
        cells = hier.cells(level)
        parent_prods = prods[cells.parent]
        out = np.empty_like(parent_prods)
        groups: dict[Word, list[int]] = {}
        for ci, s in enumerate(hier.suffixes(level)):
            groups.setdefault(s, []).append(ci)
        for s, idx in groups.items():
            block = parent_prods[idx]
            for letter in s:
                block = np.einsum("qk,ckr->cqr", A[letter - 1], block)
            out[idx] = block
        prods = out
    return prods


def project_piecewise_harmonic(ws, pw: PiecewiseHarmonic, m: int) -> PiecewiseHarmonic:
    """Cellwise L2(mu)-best harmonic approximation at level m (idempotent)."""
    hier = ws.hierarchy
    if pw.level < m:
        pw = refine_cellwise(ws, pw, m)
    st = ws.structure
    G = ws.gram()
    B = st.basis
    GH = B.T @ G @ B
    prods = _suffix_products(ws, m, pw.level)
    ancestors = hier.parent_map(pw.level, m)
    cells_fine = hier.cells(pw.level)
    mu_fine = cells_fine.mu
    mu_coarse = hier.cells(m).mu
    nb = B.shape[1]
    rhs = np.zeros((len(mu_coarse), nb))
    # rhs_w[d] = sum over descendants u of (mu_u / mu_w) v_u^T G P_u B e_d
    contrib = np.einsum(
        "c,cq,qr,crk,kd->cd", mu_fine, pw.cellvalues, G, prods, B, optimize=True
    )
    np.add.at(rhs, ancestors, contrib)
    rhs /= mu_coarse[:, None]
    coef = np.linalg.solve(GH, rhs.T).T
    return PiecewiseHarmonic(m, coef @ B.T)
