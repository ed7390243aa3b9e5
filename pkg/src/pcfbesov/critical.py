"""Critical-curve estimation from edge-sum growth of harmonic functions.

The level-m edge sum of a harmonic function is the sum of |difference|^p over
the conductance-positive prototype pairs of every level-m cell.  Its maximal
exponential growth rate across the harmonic space determines the largest
sigma for which harmonic functions stay in the q = infinity seminorm scale,
via the inversion

    C(p) = (2/d_W) * (d_H/p - log(lambda_p) / (p * log(1/r))).

The inversion is validated against two independent closed forms: the unit
interval (constant curve 1) and the Vicsek family (affine in 1/p).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateHarmonicSpace
from .funcrep import PiecewiseHarmonic, refine_step

FIT_WINDOW_START = 0.5  # fit over m in [ceil(M/2), M]


@dataclass
class GrowthEstimate:
    """Exponential growth factor of edge sums for one p."""

    p: float
    lambda_hat: float
    lambda_lo: float
    lambda_hi: float
    fit_residual: float
    edge_sums: np.ndarray  # S_{m,p} of the maximizing direction
    direction: np.ndarray  # boundary coefficients of the maximizing direction


@dataclass
class CurveEstimate:
    p_grid: np.ndarray
    lambda_hat: np.ndarray
    c_hat: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray
    fit_residual: np.ndarray
    levels: int
    seed: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def inv_p(self) -> np.ndarray:
        return 1.0 / self.p_grid

    def at(self, p: float) -> tuple[float, float, float]:
        i = int(np.argmin(np.abs(self.p_grid - p)))
        if abs(self.p_grid[i] - p) > 1e-9:
            raise KeyError(f"p={p} not on the estimate grid")
        return float(self.c_hat[i]), float(self.c_lo[i]), float(self.c_hi[i])

    def to_rows(self) -> list[dict]:
        rows = []
        for i, p in enumerate(self.p_grid):
            rows.append(
                {
                    "p": float(p),
                    "inv_p": float(1.0 / p),
                    "lambda_hat": float(self.lambda_hat[i]),
                    "C_hat": float(self.c_hat[i]),
                    "C_lo": float(self.c_lo[i]),
                    "C_hi": float(self.c_hi[i]),
                    "fit_residual": float(self.fit_residual[i]),
                }
            )
        return rows


def edge_sum(ws, h: PiecewiseHarmonic, p: float) -> float:
    """Sum over level cells of |h(a) - h(b)|^p over conductance edges."""
    pairs = ws.desc.edge_pairs()
    vals = h.cellvalues
    total = 0.0
    for a, b in pairs:
        total += float(np.sum(np.abs(vals[:, a] - vals[:, b]) ** p))
    return total


def edge_sum_profile(ws, f0: np.ndarray, M: int, p_list) -> np.ndarray:
    """S_{m,p} for m = 0..M in a single harmonic-extension walk.

    Returns an array (len(p_list), M+1); summation order per level is the
    fixed cell order, so results are bit-stable.
    """
    ws.hierarchy.ensure_level(M)
    pairs = ws.desc.edge_pairs()
    a_idx = np.array([a for a, _ in pairs])
    b_idx = np.array([b for _, b in pairs])
    out = np.zeros((len(p_list), M + 1))
    vals = ws.structure.fill(np.asarray(f0, dtype=float)).reshape(1, -1)
    for m in range(M + 1):
        if m > 0:
            vals = refine_step(ws, vals, m)
        diffs = np.abs(vals[:, a_idx] - vals[:, b_idx])
        for k, p in enumerate(p_list):
            out[k, m] = float(np.sum(diffs**p))
    return out


def _directions(ws, nrandom: int, rng: np.random.Generator) -> list[np.ndarray]:
    nb = len(ws.desc.boundary)
    if nb < 2:
        raise DegenerateHarmonicSpace(
            "harmonic space is one-dimensional; growth rates are undefined"
        )
    dirs = [np.eye(nb)[i] for i in range(nb)]
    for _ in range(nrandom):
        c = rng.standard_normal(nb)
        c -= c.mean()
        norm = np.linalg.norm(c)
        while norm < 1e-8:
            c = rng.standard_normal(nb)
            c -= c.mean()
            norm = np.linalg.norm(c)
        dirs.append(c / norm)
    return dirs


def _growth_from_profiles(p, M, dirs, profiles) -> GrowthEstimate:
    lo_m = int(np.ceil(M * FIT_WINDOW_START))
    window = np.arange(lo_m, M + 1)
    best = None
    for d, S in zip(dirs, profiles):
        if np.any(S[window] <= 0.0):
            continue
        logs = np.log(S[window])
        slope, intercept = np.polyfit(window, logs, 1)
        resid = float(np.max(np.abs(logs - (slope * window + intercept))))
        lam = float(np.exp(slope))
        if best is None or lam > best[0]:
            best = (lam, resid, S, d)
    if best is None:
        raise DegenerateHarmonicSpace("all sampled harmonic directions are constant")
    lam, resid, S, d = best
    ratios = S[lo_m + 1 : M + 1] / S[lo_m : M]
    return GrowthEstimate(
        p=p,
        lambda_hat=lam,
        lambda_lo=float(np.min(ratios)),
        lambda_hi=float(np.max(ratios)),
        fit_residual=resid,
        edge_sums=S,
        direction=d,
    )


def growth_exponent(
    ws,
    p: float,
    M: int,
    nrandom: int = 50,
    seed: int = 7,
) -> GrowthEstimate:
    """Maximal edge-sum growth factor over the harmonic space.

    Least-squares slope of log S_m over the window [ceil(M/2), M], maximized
    over the boundary basis plus seeded random unit combinations; brackets
    are the extreme consecutive ratios of the maximizing direction.
    """
    if M < 4:
        raise ValueError("need M >= 4 levels for a growth fit")
    rng = np.random.default_rng(seed)
    dirs = _directions(ws, nrandom, rng)
    profiles = [edge_sum_profile(ws, d, M, [p])[0] for d in dirs]
    return _growth_from_profiles(p, M, dirs, profiles)


def invert_growth(ws, p: float, lam: float) -> float:
    """Growth factor to critical exponent; forced by boundedness of the
    scale-weighted edge-sum proxy."""
    dm = ws.dims
    log_inv_r = -np.log(ws.desc.rmin)
    return (2.0 / dm.d_w) * (dm.d_h / p - np.log(lam) / (p * log_inv_r))


def critical_curve(
    ws,
    p_grid,
    M: int = 7,
    nrandom: int = 50,
    seed: int = 7,
    cross_check: bool = False,
) -> CurveEstimate:
    """Estimate the critical curve over a p grid from edge-sum growth.

    Brackets come from the consecutive-ratio extremes; the growth factor is
    decreasing in the exponent, so the ratio bounds swap sides.  With
    cross_check, the two-point functional's slope at small levels is compared
    against the edge-sum slope (the proxy is only derived for p = 1).
    """
    p_grid = np.asarray(sorted(p_grid), dtype=float)
    if np.any(p_grid < 1.0) or np.any(p_grid > 64.0):
        raise ValueError("p grid must lie in [1, 64]")
    if M < 4:
        raise ValueError("need M >= 4 levels for a growth fit")
    n = p_grid.size
    lam = np.zeros(n)
    c_hat = np.zeros(n)
    c_lo = np.zeros(n)
    c_hi = np.zeros(n)
    resid = np.zeros(n)
    diagnostics: dict = {"M": M, "nrandom": nrandom, "seed": seed}
    rng = np.random.default_rng(seed)
    dirs = _directions(ws, nrandom, rng)
    # One extension walk per direction covers every p on the grid.
    profiles = [edge_sum_profile(ws, d, M, p_grid) for d in dirs]
    directions = {}
    for i, p in enumerate(p_grid):
        g = _growth_from_profiles(p, M, dirs, [prof[i] for prof in profiles])
        lam[i] = g.lambda_hat
        c_hat[i] = invert_growth(ws, p, g.lambda_hat)
        c_lo[i] = invert_growth(ws, p, g.lambda_hi)
        c_hi[i] = invert_growth(ws, p, g.lambda_lo)
        resid[i] = g.fit_residual
        directions[float(p)] = g.direction
    if cross_check:
        diagnostics["cross_check"] = _proxy_cross_check(ws, p_grid, directions)
    return CurveEstimate(
        p_grid=p_grid,
        lambda_hat=lam,
        c_hat=c_hat,
        c_lo=c_lo,
        c_hi=c_hi,
        fit_residual=resid,
        levels=M,
        seed=seed,
        diagnostics=diagnostics,
    )


def _proxy_cross_check(ws, p_grid, directions, levels: int = 4) -> dict:
    """Slope of log I_p(h, r^m) versus the edge-sum prediction on small levels."""
    from .besov import ip_functional
    from .funcrep import PiecewiseHarmonic, refine_cellwise

    dm = ws.dims
    rmin = ws.desc.rmin
    out = {}
    for p in p_grid:
        d = directions[float(p)]
        pw = PiecewiseHarmonic(0, ws.structure.fill(d).reshape(1, -1))
        rep = refine_cellwise(ws, pw, levels + 2)
        logs = []
        for m in range(1, levels + 1):
            val = ip_functional(ws, rep, rmin**m, p)
            logs.append(np.log(val) if val > 0 else -np.inf)
        ms = np.arange(1, levels + 1)
        slope = np.polyfit(ms, logs, 1)[0]
        # Edge-sum proxy predicts I_p(h, r^m)^p ~ r^{m d_H} S_{m,p}.
        prof = edge_sum_profile(ws, d, levels, [p])[0]
        slope_proxy = (
            dm.d_h * np.log(rmin)
            + np.polyfit(np.arange(levels + 1), np.log(prof), 1)[0]
        ) / p
        out[float(p)] = {
            "ip_slope": float(slope),
            "proxy_slope": float(slope_proxy),
            "mismatch": float(abs(slope - slope_proxy)),
        }
    return out


# ---------------------------------------------------------------------------
# Structural checks


@dataclass
class BoundsCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class BoundsReport:
    checks: list[BoundsCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        return "\n".join(
            f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks
        )


def bounds_check(ws, est: CurveEstimate, c2_tol: float = 0.02) -> BoundsReport:
    """Structural properties of the estimated curve, within bracket slack:
    value 1 at p = 2, monotone and midpoint-concave in 1/p, the affine
    sandwich on both sides of p = 2, and the large-p limit 2/d_W."""
    dm = ws.dims
    checks: list[BoundsCheck] = []
    slack = est.c_hi - est.c_lo

    order = np.argsort(est.inv_p)
    x = est.inv_p[order]
    y = est.c_hat[order]
    s = slack[order]

    try:
        c2, lo2, hi2 = est.at(2.0)
        tol = max(c2_tol, hi2 - lo2)
        checks.append(
            BoundsCheck(
                "value-at-p2",
                abs(c2 - 1.0) <= tol,
                f"C(2)={c2:.6f}, |C(2)-1|={abs(c2 - 1.0):.2e} <= {tol:.2e}",
            )
        )
    except KeyError:
        checks.append(BoundsCheck("value-at-p2", False, "p=2 missing from grid"))

    mono_viol = 0.0
    for i in range(len(x) - 1):
        gap = y[i] - y[i + 1] - 0.5 * (s[i] + s[i + 1]) - 1e-12
        mono_viol = max(mono_viol, gap)
    checks.append(
        BoundsCheck(
            "monotone-in-inv-p",
            mono_viol <= 0.0,
            f"worst violation {mono_viol:.2e}",
        )
    )

    conc_viol = 0.0
    for i in range(1, len(x) - 1):
        lam = (x[i] - x[i - 1]) / (x[i + 1] - x[i - 1])
        interp = (1 - lam) * y[i - 1] + lam * y[i + 1]
        tol = 0.5 * (s[i - 1] + 2 * s[i] + s[i + 1]) + 1e-12
        conc_viol = max(conc_viol, interp - y[i] - tol)
    checks.append(
        BoundsCheck(
            "midpoint-concave",
            conc_viol <= 0.0,
            f"worst violation {conc_viol:.2e}",
        )
    )

    sandwich_viol = 0.0
    for i, p in enumerate(est.p_grid):
        affine = 1.0 + (2.0 / p - 1.0) * (dm.d_s - 1.0)
        tol = slack[i] + 1e-9
        if p <= 2.0:
            lo_b, hi_b = 1.0, affine
        else:
            lo_b, hi_b = affine, min(1.0, 2.0 / dm.d_w + dm.d_s / p)
        sandwich_viol = max(
            sandwich_viol, lo_b - est.c_hat[i] - tol, est.c_hat[i] - hi_b - tol
        )
    checks.append(
        BoundsCheck(
            "affine-sandwich",
            sandwich_viol <= 0.0,
            f"worst violation {sandwich_viol:.2e}",
        )
    )

    pmax = float(est.p_grid[-1])
    chat_max = float(est.c_hat[-1])
    tol = dm.d_s / pmax + slack[-1] + 1e-9
    checks.append(
        BoundsCheck(
            "large-p-limit",
            abs(chat_max - 2.0 / dm.d_w) <= tol,
            f"|C({pmax:g}) - 2/d_W| = {abs(chat_max - 2.0 / dm.d_w):.4f} <= {tol:.4f}",
        )
    )
    return BoundsReport(checks=checks)
