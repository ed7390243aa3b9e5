"""Per-descriptor session: lazily built and cached level artifacts.

Level builds (vertex hierarchies, operators, factorizations, eigenpairs)
dominate runtime, so one Workspace per descriptor amortizes them.  Eigenpair
sets are also cached on disk under a content hash of the descriptor; writes
are atomic (write-then-rename).
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .core import FractalDescriptor, LevelHierarchy, dims, load_descriptor, preset
from .energy import (
    GraphOperator,
    HarmonicStructure,
    ResistanceOracle,
    SeparationCalibration,
    assemble_graph_laplacian,
    calibrate_separation,
    derive_extension,
)

R_DENSE_LIMIT = 6000


class Workspace:
    def __init__(
        self,
        desc: FractalDescriptor | dict | str,
        cell_budget: int = 2_000_000,
        vertex_budget: int = 5_000_000,
        cache_dir: str | None = None,
    ):
        self.desc = desc if isinstance(desc, FractalDescriptor) else load_descriptor(desc)
        self.dims = dims(self.desc)
        self.cell_budget = cell_budget
        self.vertex_budget = vertex_budget
        self.cache_dir = cache_dir if cache_dir is not None else os.environ.get("PCFBESOV_CACHE")
        self._structure: HarmonicStructure | None = None
        self._hier: LevelHierarchy | None = None
        self._laps: dict[int, GraphOperator] = {}
        self._oracles: dict[int, ResistanceOracle] = {}
        self._gram: np.ndarray | None = None
        self._masses: dict[int, np.ndarray] = {}
        self._rmat: dict[int, np.ndarray] = {}
        self._spectral: dict = {}
        self._sep: SeparationCalibration | None = None
        self._diam_ub: float | None = None

    @classmethod
    def from_preset(cls, name: str, **kwargs) -> "Workspace":
        return cls(preset(name), **kwargs)

    @property
    def descriptor_hash(self) -> str:
        return self.desc.content_hash()

    @property
    def structure(self) -> HarmonicStructure:
        if self._structure is None:
            self._structure = derive_extension(self.desc)
        return self._structure

    @property
    def hierarchy(self) -> LevelHierarchy:
        if self._hier is None:
            self._hier = LevelHierarchy(
                self.desc,
                0,
                cell_budget=self.cell_budget,
                vertex_budget=self.vertex_budget,
            )
        return self._hier

    def laplacian(self, m: int) -> GraphOperator:
        if m not in self._laps:
            self._laps[m] = assemble_graph_laplacian(self.desc, self.hierarchy, m)
        return self._laps[m]

    def oracle(self, m: int) -> ResistanceOracle:
        if m not in self._oracles:
            self._oracles[m] = ResistanceOracle(self.laplacian(m))
        return self._oracles[m]

    def gram(self) -> np.ndarray:
        """Fixed point of the self-similar Gram identity, normalized so the
        constant function has unit L2 norm."""
        if self._gram is None:
            st = self.structure
            A = st.extensions
            mu = st.mu
            G = np.outer(st.alpha, st.alpha)
            for _ in range(20000):
                Gn = np.einsum("i,iaq,ab,ibr->qr", mu, A, G, A, optimize=True)
                delta = float(np.max(np.abs(Gn - G)))
                G = Gn
                if delta <= 1e-15 * max(1.0, float(np.max(np.abs(G)))):
                    break
            self._gram = 0.5 * (G + G.T)
        return self._gram

    def masses(self, m: int) -> np.ndarray:
        """Lumped vertex masses: each level-m cell spreads its measure over
        its prototype slots with the harmonic integration weights."""
        if m not in self._masses:
            hier = self.hierarchy
            hier.ensure_level(m)
            cells = hier.cells(m)
            alpha = self.structure.alpha
            mass = np.zeros(hier.nvertices(m))
            for a in range(self.desc.v0size):
                np.add.at(mass, cells.slots[:, a], cells.mu * alpha[a])
            self._masses[m] = mass
        return self._masses[m]

    def resistance_matrix(self, m: int) -> np.ndarray:
        """Dense all-pairs resistance matrix; only for moderate level sizes."""
        if m not in self._rmat:
            n = self.hierarchy.nvertices(m)
            if n > R_DENSE_LIMIT:
                raise MemoryError(
                    f"level {m} has {n} vertices; dense resistance disabled above "
                    f"{R_DENSE_LIMIT}"
                )
            self._rmat[m] = self.oracle(m).resistance_matrix()
        return self._rmat[m]

    def separation(self) -> SeparationCalibration:
        if self._sep is None:
            top = 4
            levels = tuple(n for n in (2, 3, 4) if n <= top)
            self._sep = calibrate_separation(
                self.desc, self.hierarchy, self.oracle, levels=levels
            )
        return self._sep

    def diameter_bound(self) -> float:
        """Upper bound for the resistance diameter: coarse-level vertex
        diameter plus twice the within-cell tail."""
        if self._diam_ub is None:
            m = 2
            self.hierarchy.ensure_level(m)
            n = self.hierarchy.nvertices(m)
            if n <= R_DENSE_LIMIT:
                R = self.resistance_matrix(m)
                vdiam = float(R.max())
            else:  # pragma: no cover - presets never reach this
                oracle = self.oracle(m)
                vdiam = max(
                    float(oracle.resistance_to_all(x).max()) for x in range(0, n, 97)
                ) * 2.0
            L0 = -self.desc.H
            n0 = L0.shape[0]
            K0 = np.zeros((n0, n0))
            K0[1:, 1:] = np.linalg.inv(L0[1:, 1:])
            d0 = np.diag(K0)
            proto_diam = float(np.max(d0[:, None] + d0[None, :] - 2.0 * K0))
            tail = float(np.max(self.hierarchy.cells(m).rw)) * proto_diam
            self._diam_ub = vdiam + 2.0 * tail
        return self._diam_ub

    # -- spectral disk cache -------------------------------------------------

    def _cache_path(self, tag: str) -> str | None:
        if not self.cache_dir:
            return None
        os.makedirs(self.cache_dir, exist_ok=True)
        return os.path.join(self.cache_dir, f"{self.descriptor_hash}-{tag}.npz")

    def cached_arrays(self, tag: str) -> dict | None:
        path = self._cache_path(tag)
        if path and os.path.exists(path):
            with np.load(path) as data:
                return {k: data[k] for k in data.files}
        return None

    def store_arrays(self, tag: str, arrays: dict) -> None:
        path = self._cache_path(tag)
        if not path:
            return
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        os.close(fd)
        try:
            with open(tmp, "wb") as fh:
                np.savez(fh, **arrays)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
