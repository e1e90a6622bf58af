"""Basis functions for the low-rank component.

Column order is a stable contract: cosine columns enumerate (m, n) row-major,
lattice columns run coarse to fine and row-major within a level.  Q's
sparsity pattern is read by column identity, so do not reorder.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .covkernels import wendland
from .errors import ParameterDomainError

UNIT_SQUARE = (0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "cosine"
    m_max: int = 10
    levels: int = 1
    overlap: float = 2.5
    start_level: int = 1
    domain: tuple = UNIT_SQUARE

    def __post_init__(self):
        if self.kind not in ("cosine", "wendland_lattice"):
            raise ParameterDomainError(f"unknown basis kind {self.kind!r}")
        if self.m_max < 0:
            raise ParameterDomainError("m_max must be >= 0")
        if self.levels < 1:
            raise ParameterDomainError("levels must be >= 1")
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))

    @property
    def n_columns(self):
        if self.kind == "cosine":
            return (self.m_max + 1) ** 2
        return sum(4**lev for lev in range(self.start_level, self.start_level + self.levels))

    def evaluate(self, locations):
        if self.kind == "cosine":
            return cosine_basis(locations, self.m_max, self.domain)
        return wendland_lattice_basis(locations, self.levels, self.overlap,
                                      self.domain, self.start_level)

    def to_dict(self):
        return {"kind": self.kind, "m_max": self.m_max, "levels": self.levels,
                "overlap": self.overlap, "start_level": self.start_level,
                "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "domain" in d:
            d["domain"] = tuple(d["domain"])
        return cls(**d)


@dataclass
class BasisMatrix:
    """Dense n x (J+1) evaluation of the basis at n locations."""

    values: np.ndarray
    columns: list = field(default_factory=list)

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def to_csv(self, path):
        """Write with a header naming each column (``cos_m{m}_n{n}`` or
        ``wl_l{level}_k{index}``)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([_column_name(c) for c in self.columns])
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def _column_name(meta):
    if meta["kind"] == "cosine":
        return f"cos_m{meta['m']}_n{meta['n']}"
    return f"wl_l{meta['level']}_k{meta['k']}"


def _check_inside(X, domain):
    x0, x1, y0, y1 = domain
    tol = 1e-12
    if (np.any(X[:, 0] < x0 - tol) or np.any(X[:, 0] > x1 + tol)
            or np.any(X[:, 1] < y0 - tol) or np.any(X[:, 1] > y1 + tol)):
        raise ParameterDomainError(f"locations fall outside the domain {domain}")


def cosine_basis(locations, m_max, domain=UNIT_SQUARE):
    """Tensor cosine basis 0.5 cos(2 pi m x) cos(2 pi n y), m, n = 0..m_max.

    Coordinates are rescaled from ``domain`` to the unit square first.
    """
    X = np.atleast_2d(np.asarray(locations, dtype=float))
    _check_inside(X, domain)
    x0, x1, y0, y1 = domain
    u = (X[:, 0] - x0) / (x1 - x0)
    v = (X[:, 1] - y0) / (y1 - y0)
    k = np.arange(m_max + 1)
    cu = np.cos(2 * np.pi * np.outer(u, k))
    cv = np.cos(2 * np.pi * np.outer(v, k))
    values = 0.5 * (cu[:, :, None] * cv[:, None, :]).reshape(len(X), -1)
    cols = [{"kind": "cosine", "m": int(m), "n": int(n)} for m in k for n in k]
    return BasisMatrix(values, cols)


def lattice_nodes(level, domain=UNIT_SQUARE):
    """Cell-centred 2^level x 2^level node grid; returns (nodes, spacing_x, spacing_y)."""
    x0, x1, y0, y1 = domain
    k = 2**level
    hx, hy = (x1 - x0) / k, (y1 - y0) / k
    gx = x0 + hx * (np.arange(k) + 0.5)
    gy = y0 + hy * (np.arange(k) + 0.5)
    yy, xx = np.meshgrid(gy, gx, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()]), hx, hy


def wendland_lattice_basis(locations, levels, overlap, domain=UNIT_SQUARE, start_level=1):
    """Multiresolution Wendland bumps.

    Level l carries a 2^l x 2^l node grid with radius ``overlap * spacing``.
    """
    if not np.isfinite(overlap) or overlap <= 0:
        raise ParameterDomainError("overlap must be positive")
    if levels < 1:
        raise ParameterDomainError("levels must be >= 1")
    X = np.atleast_2d(np.asarray(locations, dtype=float))
    _check_inside(X, domain)
    blocks, cols = [], []
    for lev in range(start_level, start_level + levels):
        nodes, hx, hy = lattice_nodes(lev, domain)
        radius = overlap * max(hx, hy)
        d = np.linalg.norm(X[:, None, :] - nodes[None, :, :], axis=-1)
        blocks.append(wendland(d, radius))
        cols += [{"kind": "wendland_lattice", "level": lev, "k": k} for k in range(len(nodes))]
    return BasisMatrix(np.hstack(blocks), cols)


def regular_grid(n_side, domain=UNIT_SQUARE):
    """Cell-centred n_side x n_side grid, x varying fastest."""
    x0, x1, y0, y1 = domain
    gx = x0 + (x1 - x0) * (np.arange(n_side) + 0.5) / n_side
    gy = y0 + (y1 - y0) * (np.arange(n_side) + 0.5) / n_side
    yy, xx = np.meshgrid(gy, gx, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])
