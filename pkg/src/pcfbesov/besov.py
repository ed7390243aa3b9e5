"""Lipschitz-Besov seminorms: the defining functional and its discrete forms.

Four routes to the same scale of seminorms: the direct two-point integral
I_p over resistance balls, the Haar-layer route (valid below the continuity
line), the graph-Laplacian route (valid above it), and the tent-coefficient
route.  All aggregate per-level quantities over the dyadic scale grid r^m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dimensions
from .errors import DimensionMismatch, SolverFailure
from .funcrep import (
    PiecewiseHarmonic,
    TentSeries,
    VertexFunction,
    conditional_expectation,
    lp_norm,
    refine_cellwise,
    tent_interpolation,
    vertex_to_cellwise,
)

# Growth threshold for the divergence diagnostic: per-level contributions
# whose tail ratios exceed this consistently are flagged as diverging.
DIVERGENCE_RATIO = 1.05


@dataclass
class SeminormReport:
    """One seminorm evaluation with its per-level contribution table."""

    p: float
    q: float
    sigma: float
    method: str
    value: float
    base: float
    levels: list[int]
    contributions: list[float]
    weights: list[float] | None = None
    diagnostics: dict = field(default_factory=dict)

    def recombine(self) -> float:
        return self.base + lq_aggregate(
            np.asarray(self.contributions), self.q, self.weights
        )

    def to_dict(self) -> dict:
        return {
            "p": float(self.p),
            "q": None if self.q == np.inf else float(self.q),
            "sigma": float(self.sigma),
            "method": self.method,
            "value": float(self.value),
            "base": float(self.base),
            "levels": [int(m) for m in self.levels],
            "contributions": [float(c) for c in self.contributions],
            "weights": None
            if self.weights is None
            else [float(w) for w in self.weights],
            "diagnostics": _plain(self.diagnostics),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def lq_aggregate(contribs: np.ndarray, q: float, weights=None) -> float:
    contribs = np.asarray(contribs, dtype=float)
    if contribs.size == 0:
        return 0.0
    if q == np.inf:
        return float(np.max(contribs))
    if weights is None:
        return float(np.sum(contribs**q) ** (1.0 / q))
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * contribs**q) ** (1.0 / q))


def diverging(contribs) -> bool:
    """True when the tail of the contribution table grows geometrically."""
    c = np.asarray(contribs, dtype=float)
    c = c[c > 0]
    if c.size < 4:
        return False
    tail = c[-4:]
    ratios = tail[1:] / tail[:-1]
    return bool(np.all(ratios > 1.0) and np.exp(np.mean(np.log(ratios))) > DIVERGENCE_RATIO)


# ---------------------------------------------------------------------------
# The two-point functional


def _atom_aggregates(ws, pws: list[PiecewiseHarmonic]):
    """Per-vertex mass, mass-weighted mean and variance of each function.

    Slot values may disagree at shared vertices (discontinuous pieces); the
    mean/variance split keeps p = 2 pair sums exact in that case.
    """
    level = pws[0].level
    hier = ws.hierarchy
    cells = hier.cells(level)
    nvert = hier.nvertices(level)
    atom_ids = cells.slots.ravel()
    atom_mass = (cells.mu[:, None] * ws.structure.alpha[None, :]).ravel()
    mass = np.zeros(nvert)
    np.add.at(mass, atom_ids, atom_mass)
    means = np.zeros((nvert, len(pws)))
    variances = np.zeros((nvert, len(pws)))
    for j, pw in enumerate(pws):
        if pw.level != level:
            raise DimensionMismatch("batched functions must share a level")
        av = pw.cellvalues.ravel()
        acc = np.zeros(nvert)
        np.add.at(acc, atom_ids, atom_mass * av)
        mean = acc / mass
        acc2 = np.zeros(nvert)
        np.add.at(acc2, atom_ids, atom_mass * (av - mean[atom_ids]) ** 2)
        means[:, j] = mean
        variances[:, j] = acc2
    return mass, means, variances, (atom_ids, atom_mass)


def _resistance_blocks(ws, level: int, chunk: int = 512):
    """Yield (x_ids, R_block) covering all vertices; dense when cached."""
    from .workspace import R_DENSE_LIMIT

    nvert = ws.hierarchy.nvertices(level)
    if nvert <= R_DENSE_LIMIT:
        R = ws.resistance_matrix(level)
        yield np.arange(nvert), R
        return
    oracle = ws.oracle(level)
    diag = oracle.diagonal()
    for lo in range(0, nvert, chunk):
        ids = np.arange(lo, min(lo + chunk, nvert))
        cols = oracle.columns(ids)
        block = diag[:, None] + diag[ids][None, :] - 2.0 * cols
        yield ids, block.T


def pair_sums(ws, pws: list[PiecewiseHarmonic], t_list, p: float) -> np.ndarray:
    """S[t, f] = sum over vertex-mass atom pairs within resistance t of
    mass * mass * |f(x) - f(y)|^p (both orders, diagonal included)."""
    level = pws[0].level
    mass, means, variances, atoms = _atom_aggregates(ws, pws)
    nfun = len(pws)
    t_arr = np.asarray(list(t_list), dtype=float)
    out = np.zeros((t_arr.size, nfun))
    diam = ws.diameter_bound()
    has_var = bool(np.max(variances) > 0.0)

    full = t_arr > diam
    if np.any(full) and p == 2:
        m2 = np.sum(mass[:, None] * means**2 + variances, axis=0)
        m1 = np.sum(mass[:, None] * means, axis=0)
        out[full] = 2.0 * (m2 - m1**2)
    elif np.any(full):
        S = _full_pair_sum_general(mass, means, variances, atoms, p)
        out[full] = S

    partial = np.nonzero(~full)[0]
    if partial.size == 0:
        return out
    ts = t_arr[partial]
    if p == 2:
        cols = np.concatenate(
            [mass[:, None], mass[:, None] * means, mass[:, None] * means**2, variances],
            axis=1,
        )
        for x_ids, block in _resistance_blocks(ws, level):
            for ti, t in enumerate(ts):
                mask = (block < t).astype(float)
                agg = mask @ cols  # (chunk, 1 + 3 nfun)
                G0 = agg[:, 0]
                G1 = agg[:, 1 : 1 + nfun]
                G2 = agg[:, 1 + nfun : 1 + 2 * nfun]
                GV = agg[:, 1 + 2 * nfun :]
                mx = mass[x_ids][:, None]
                fx = means[x_ids]
                vx = variances[x_ids]
                contrib = (
                    mx * G2
                    - 2.0 * mx * fx * G1
                    + mx * fx**2 * G0[:, None]
                    + mx * GV
                    + vx * G0[:, None]
                )
                out[partial[ti]] += contrib.sum(axis=0)
    elif not has_var:
        for x_ids, block in _resistance_blocks(ws, level):
            for ti, t in enumerate(ts):
                for row, x in enumerate(x_ids):
                    sel = block[row] < t
                    diff = np.abs(means[sel] - means[x][None, :]) ** p
                    out[partial[ti]] += mass[x] * (mass[sel] @ diff)
    else:
        # Exact slow path for discontinuous representations: expand the
        # per-vertex atoms (cell-local slot values).
        atom_ids, atom_mass = atoms
        natoms = atom_ids.size
        if natoms > 40_000:
            raise SolverFailure(
                "general-p two-point sums on discontinuous representations "
                f"are quadratic in atoms ({natoms}); use p = 2 or coarsen"
            )
        vals = np.stack([pw.cellvalues.ravel() for pw in pws], axis=1)
        nvert = mass.size
        for x_ids, block in _resistance_blocks(ws, level):
            for ti, t in enumerate(ts):
                idmask = np.zeros(nvert, dtype=bool)
                for row, x in enumerate(x_ids):
                    idmask[:] = block[row] < t
                    sel = idmask[atom_ids]
                    my = atom_mass[sel]
                    fy = vals[sel]
                    for i in np.nonzero(atom_ids == x)[0]:
                        diff = np.abs(fy - vals[i][None, :]) ** p
                        out[partial[ti]] += atom_mass[i] * (my @ diff)
    return out


def _full_pair_sum_general(mass, means, variances, atoms, p):
    if np.max(variances) > 0.0:
        raise SolverFailure(
            "general-p two-point sums need a continuous representation"
        )
    nfun = means.shape[1]
    out = np.zeros(nfun)
    n = mass.size
    chunk = max(1, 4_000_000 // max(1, n))
    for lo in range(0, n, chunk):
        diff = np.abs(means[lo : lo + chunk, None, :] - means[None, :, :]) ** p
        out += np.einsum("x,y,xyf->f", mass[lo : lo + chunk], mass, diff)
    return out


def ip_functional(
    ws,
    f,
    t: float,
    p: float,
    mode: str = "exact",
    seed: int | None = None,
    nsamples: int = 20000,
):
    """Discretized two-point functional I_p(f, t) at the representation level.

    ``exact`` does the full mass-weighted double sum over resistance balls;
    ``monte-carlo`` samples atom pairs by mass and also returns a standard
    error.  ``p = inf`` returns the supremum over ball pairs.
    """
    pw = f if isinstance(f, PiecewiseHarmonic) else vertex_to_cellwise(ws, f)
    d_h = ws.dims.d_h
    if p == np.inf:
        return _ip_sup(ws, pw, t)
    if mode == "exact":
        S = pair_sums(ws, [pw], [t], p)[0, 0]
        return float((max(S, 0.0) * t**-d_h) ** (1.0 / p))
    if mode != "monte-carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if seed is None:
        raise ValueError("monte-carlo mode requires a seed")
    rng = np.random.default_rng(seed)
    cells = ws.hierarchy.cells(pw.level)
    atom_ids = cells.slots.ravel()
    atom_mass = (cells.mu[:, None] * ws.structure.alpha[None, :]).ravel()
    atom_vals = pw.cellvalues.ravel()
    prob = atom_mass / atom_mass.sum()
    idx = rng.choice(atom_mass.size, size=(nsamples, 2), p=prob)
    oracle = ws.oracle(pw.level)
    xs = atom_ids[idx[:, 0]]
    ys = atom_ids[idx[:, 1]]
    rvals = np.zeros(nsamples)
    for x in np.unique(xs):
        sel = xs == x
        rall = oracle.resistance_to_all(int(x))
        rvals[sel] = rall[ys[sel]]
    draws = np.where(
        rvals < t, np.abs(atom_vals[idx[:, 0]] - atom_vals[idx[:, 1]]) ** p, 0.0
    )
    S = float(draws.mean())
    se_S = float(draws.std(ddof=1) / np.sqrt(nsamples))
    value = (max(S, 1e-300) * t**-d_h) ** (1.0 / p) if S > 0 else 0.0
    stderr = value * se_S / (p * S) if S > 0 else 0.0
    return value, stderr


def _ip_sup(ws, pw: PiecewiseHarmonic, t: float) -> float:
    hier = ws.hierarchy
    cells = hier.cells(pw.level)
    nvert = hier.nvertices(pw.level)
    flat_ids = cells.slots.ravel()
    flat_vals = pw.cellvalues.ravel()
    hi = np.full(nvert, -np.inf)
    lo = np.full(nvert, np.inf)
    np.maximum.at(hi, flat_ids, flat_vals)
    np.minimum.at(lo, flat_ids, flat_vals)
    best = 0.0
    for x_ids, block in _resistance_blocks(ws, pw.level):
        for row, x in enumerate(x_ids):
            sel = block[row] < t
            if np.any(sel):
                spread = max(
                    float(np.max(hi[sel]) - lo[x]), float(hi[x] - np.min(lo[sel]))
                )
                best = max(best, spread)
    return best


# ---------------------------------------------------------------------------
# Seminorm reports


def _prepare_direct(ws, f, grid_m: int, rep_margin: int):
    pw = f if isinstance(f, PiecewiseHarmonic) else vertex_to_cellwise(ws, f)
    target = max(pw.level, grid_m + rep_margin)
    if target > pw.level:
        pw = refine_cellwise(ws, pw, target)
    return pw


def direct_reports_batch(
    ws,
    fs: list,
    p: float,
    q: float,
    sigma: float,
    grid_m: int = 6,
    rep_margin: int = 2,
) -> list[SeminormReport]:
    """Direct-definition seminorms for a family in one ball pass per scale."""
    pws = [_prepare_direct(ws, f, grid_m, rep_margin) for f in fs]
    level = max(pw.level for pw in pws)
    pws = [refine_cellwise(ws, pw, level) for pw in pws]
    dm = ws.dims
    rmin = ws.desc.rmin
    t_grid = [rmin**m for m in range(grid_m + 1)]
    S = pair_sums(ws, pws, t_grid, p)
    reports = []
    for j, pw in enumerate(pws):
        contribs = []
        for m in range(grid_m + 1):
            ip_val = (max(S[m, j], 0.0) * t_grid[m] ** -dm.d_h) ** (1.0 / p)
            contribs.append(rmin ** (-m * sigma * dm.d_w / 2.0) * ip_val)
        base = lp_norm(ws, pw, p)
        value = base + lq_aggregate(np.asarray(contribs), q)
        reports.append(
            SeminormReport(
                p=p,
                q=q,
                sigma=sigma,
                method="direct",
                value=value,
                base=base,
                levels=list(range(grid_m + 1)),
                contributions=contribs,
                diagnostics={
                    "rep_level": level,
                    "grid_m": grid_m,
                    "diverging": diverging(contribs),
                },
            )
        )
    return reports


def lambda_norm_direct(ws, f, p, q, sigma, grid_m: int = 6, rep_margin: int = 2):
    return direct_reports_batch(ws, [f], p, q, sigma, grid_m, rep_margin)[0]


def lambda_norm_haar(ws, f, p, q, sigma, grid_m: int = 6) -> SeminormReport:
    pw = f if isinstance(f, PiecewiseHarmonic) else vertex_to_cellwise(ws, f)
    dm = ws.dims
    rmin = ws.desc.rmin
    haar = conditional_expectation(ws, pw, grid_m)
    contribs = [
        rmin ** (-m * sigma * dm.d_w / 2.0) * haar.layer_lp(m, p)
        for m in range(grid_m + 1)
    ]
    value = lq_aggregate(np.asarray(contribs), q)
    warn = sigma >= dm.d_s / p
    return SeminormReport(
        p=p,
        q=q,
        sigma=sigma,
        method="haar",
        value=value,
        base=0.0,
        levels=list(range(grid_m + 1)),
        contributions=contribs,
        diagnostics={
            "grid_m": grid_m,
            "validity_warning": warn,
            "diverging": diverging(contribs),
        },
    )


def lambda_norm_graph(ws, f, p, q, sigma, grid_m: int | None = None) -> SeminormReport:
    """Graph-Laplacian characterization; f must be a continuous representative
    sampled on a level at least as fine as the grid."""
    if isinstance(f, VertexFunction):
        vf = f
    else:
        from .funcrep import cellwise_to_vertex

        vf = cellwise_to_vertex(ws, f)
    if grid_m is None:
        grid_m = vf.level
    if grid_m > vf.level:
        raise DimensionMismatch(
            f"grid level {grid_m} exceeds the sample level {vf.level}"
        )
    dm = ws.dims
    rmin = ws.desc.rmin
    hier = ws.hierarchy
    contribs = []
    for m in range(grid_m + 1):
        values = vf.values[: hier.nvertices(m)]
        hf = ws.laplacian(m).apply(values)
        if p == np.inf:
            norm = float(np.max(np.abs(hf)))
        else:
            norm = float(np.sum(np.abs(hf) ** p) ** (1.0 / p))
        contribs.append(
            rmin ** (m * (-sigma * dm.d_w / 2.0 + 1.0 + dm.d_h / p)) * norm
        )
    base = lp_norm(ws, vertex_to_cellwise(ws, vf), p)
    value = base + lq_aggregate(np.asarray(contribs), q)
    warn = sigma <= dm.d_s / p
    return SeminormReport(
        p=p,
        q=q,
        sigma=sigma,
        method="graph",
        value=value,
        base=base,
        levels=list(range(grid_m + 1)),
        contributions=contribs,
        diagnostics={
            "grid_m": grid_m,
            "validity_warning": warn,
            "diverging": diverging(contribs),
        },
    )


def lambda_norm_tent(ws, f, p, q, sigma, grid_m: int | None = None) -> SeminormReport:
    """Tent-coefficient characterization; accepts a tent series or samples."""
    if isinstance(f, TentSeries):
        tent = f
    elif isinstance(f, VertexFunction):
        tent = tent_interpolation(ws, f)
    else:
        from .funcrep import cellwise_to_vertex

        tent = tent_interpolation(ws, cellwise_to_vertex(ws, f))
    dm = ws.dims
    rmin = ws.desc.rmin
    top = tent.level if grid_m is None else min(grid_m, tent.level)
    contribs = [
        rmin ** (-n * sigma * dm.d_w / 2.0) * lp_norm(ws, tent.pieces[n], p)
        for n in range(top + 1)
    ]
    value = lq_aggregate(np.asarray(contribs), q)
    return SeminormReport(
        p=p,
        q=q,
        sigma=sigma,
        method="tent",
        value=value,
        base=0.0,
        levels=list(range(top + 1)),
        contributions=contribs,
        diagnostics={"grid_m": top, "diverging": diverging(contribs)},
    )


# ---------------------------------------------------------------------------
# Parameter-plane regions


@dataclass(frozen=True)
class RegionPoint:
    inv_p: float
    sigma: float
    classification: str


def critical_lines(dm: Dimensions, p: float) -> tuple[float, float]:
    l1 = dm.d_s / p
    l2 = 2.0 - dm.d_s * (1.0 - 1.0 / p)
    return l1, l2


def region_classify(
    dm: Dimensions, p: float, sigma: float, curve_value: float, eps: float = 1e-9
) -> RegionPoint:
    """Place (1/p, sigma) relative to the continuity line, the
    normal-derivative line and a supplied critical-curve value."""
    if not (1.0 < p < np.inf):
        raise ValueError("p must lie in (1, inf)")
    l1, l2 = critical_lines(dm, p)
    inv_p = 1.0 / p
    if abs(sigma - l1) <= eps or abs(sigma - curve_value) <= eps or abs(sigma - l2) <= eps:
        cls = "on-border"
    elif sigma < curve_value:
        cls = "A1" if sigma > l1 else "A2"
    elif l1 < sigma < l2:
        cls = "B"
    else:
        cls = "above-C"
    return RegionPoint(inv_p=inv_p, sigma=sigma, classification=cls)


def region_curves(dm: Dimensions, p_grid, curve=None) -> list[dict]:
    """Rows (inv_p, L1, L2, C_hat, C_lower, C_upper) for plotting; the
    structural lower/upper bounds depend only on the dimensions."""
    rows = []
    for i, p in enumerate(p_grid):
        l1, l2 = critical_lines(dm, p)
        affine = 1.0 + (2.0 / p - 1.0) * (dm.d_s - 1.0)
        if p <= 2.0:
            lower, upper = 1.0, affine
        else:
            lower, upper = affine, min(1.0, 2.0 / dm.d_w + dm.d_s / p)
        rows.append(
            {
                "p": float(p),
                "inv_p": 1.0 / p,
                "L1": l1,
                "L2": l2,
                "C_hat": float(curve[i]) if curve is not None else float("nan"),
                "C_lower": lower,
                "C_upper": upper,
            }
        )
    return rows
