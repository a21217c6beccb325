"""Transfer-operator builders for interval and planar maps.

``pf_exact`` constructs the exact mass-transport kernel for maps whose cell
partition is dyadically aligned (doubling, cyclic bit-shift baker).
``pf_ulam`` estimates the kernel for any pointwise map by seeded Monte-Carlo:
uniform draws inside each cell (stratified by cell, one independent derived
seed per row), counting which target cell the mapped point lands in.
``duality_residual`` checks the discrete kernel against the
underlying map through the adjoint pairing, using midpoint quadrature on a
refined partition.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.sparse as sp

from cocyclelab.measure import (
    Density,
    FiniteMeasureSpace,
    MarkovMatrix,
    Observable,
    PreconditionError,
    apply,
    integrate,
)

MAP_KINDS = ("doubling", "tent", "piecewise_linear", "baker_cyclic",
             "baker_planar", "custom")


@dataclasses.dataclass(frozen=True)
class MapSpec:
    """Pointwise map of the unit interval (dimension 1) or unit square
    (dimension 2).

    kind:
      doubling          x -> 2x mod 1
      tent              x -> 1 - |1 - 2x|
      piecewise_linear  affine on [breakpoints[i], breakpoints[i+1]) with
                        slope slopes[i] and value intercepts[i] at the left
                        endpoint, taken mod 1
      baker_cyclic      cyclic left bit-shift on 2^bits dyadic cells
                        (piecewise translation realizing the permutation)
      baker_planar      (x, y) -> (2x mod 1, (y + [x >= 1/2]) / 2)
      custom            user callable on coordinate arrays
    """

    kind: str
    bits: int | None = None
    breakpoints: np.ndarray | None = None
    slopes: np.ndarray | None = None
    intercepts: np.ndarray | None = None
    func: object | None = None

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.kind == "baker_cyclic":
            if not self.bits or self.bits < 2 or self.bits % 2:
                raise ValueError("baker_cyclic needs an even bit count >= 2")
        if self.kind == "piecewise_linear":
            b = np.asarray(self.breakpoints, dtype=float)
            s = np.asarray(self.slopes, dtype=float)
            c = np.asarray(self.intercepts, dtype=float)
            if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or b[-1] != 1.0 \
                    or np.any(np.diff(b) <= 0):
                raise ValueError("breakpoints must increase from 0 to 1")
            if s.shape != (b.size - 1,) or c.shape != s.shape:
                raise ValueError("need one slope and one intercept per piece")
            object.__setattr__(self, "breakpoints", b)
            object.__setattr__(self, "slopes", s)
            object.__setattr__(self, "intercepts", c)
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom maps need a callable")

    @property
    def dimension(self) -> int:
        return 2 if self.kind == "baker_planar" else 1


def bit_shift_permutation(bits: int) -> np.ndarray:
    """Cyclic left bit-shift on indices read as MSB-first bit strings."""
    n = 1 << bits
    i = np.arange(n)
    return ((i << 1) | (i >> (bits - 1))) & (n - 1)


_TOP = np.nextafter(1.0, 0.0)


def map_point(spec: MapSpec, x, y=None):
    """Evaluate the map on coordinate arrays; outputs stay inside [0, 1)."""
    x = np.asarray(x, dtype=float)
    if spec.dimension == 2:
        ybr = np.asarray(y, dtype=float)
        b = (x >= 0.5).astype(float)
        return (np.clip(2.0 * x - b, 0.0, _TOP),
                np.clip((ybr + b) / 2.0, 0.0, _TOP))
    if spec.kind == "doubling":
        out = (2.0 * x) % 1.0
    elif spec.kind == "tent":
        out = 1.0 - np.abs(1.0 - 2.0 * x)
    elif spec.kind == "piecewise_linear":
        piece = np.clip(np.searchsorted(spec.breakpoints, x, side="right") - 1,
                        0, spec.slopes.size - 1)
        out = (spec.intercepts[piece]
               + spec.slopes[piece] * (x - spec.breakpoints[piece])) % 1.0
    elif spec.kind == "baker_cyclic":
        n = 1 << spec.bits
        cell = np.minimum((x * n).astype(int), n - 1)
        perm = bit_shift_permutation(spec.bits)
        out = perm[cell] / n + (x - cell / n)
    elif spec.kind == "custom":
        out = np.asarray(spec.func(x), dtype=float)
    else:  # pragma: no cover
        raise ValueError(spec.kind)
    return np.clip(out, 0.0, _TOP)


def _require_uniform(space: FiniteMeasureSpace, what: str):
    if not np.allclose(space.weights, 1.0 / space.n, atol=1e-15):
        raise PreconditionError(f"{what} requires a uniform partition")


def pf_exact(spec: MapSpec, space: FiniteMeasureSpace) -> MarkovMatrix:
    """Exact transfer kernel; defined when the partition resolves the map.

    doubling: N = 2^p uniform cells, cell i splits evenly onto cells
    2i mod N and 2i+1 mod N.  baker_cyclic: N = 2^bits uniform cells, the
    kernel is the bit-shift permutation (kept sparse: it stays a permutation
    under composition and N reaches 2^16).
    """
    n = space.n
    if spec.kind == "doubling":
        _require_uniform(space, "pf_exact(doubling)")
        if n & (n - 1):
            raise PreconditionError("doubling exact kernel needs N = 2^p cells")
        k = np.zeros((n, n))
        rows = np.arange(n)
        k[rows, (2 * rows) % n] = 0.5
        k[rows, (2 * rows + 1) % n] = 0.5
        return MarkovMatrix(space, k, exact=True)
    if spec.kind == "baker_cyclic":
        _require_uniform(space, "pf_exact(baker_cyclic)")
        if n != 1 << spec.bits:
            raise PreconditionError(
                f"baker_cyclic with {spec.bits} bits needs N = {1 << spec.bits}")
        perm = bit_shift_permutation(spec.bits)
        k = sp.csr_array((np.ones(n), (np.arange(n), perm)), shape=(n, n))
        return MarkovMatrix(space, k, exact=True)
    raise PreconditionError(
        f"no exact kernel for map kind {spec.kind!r}; use pf_ulam")


def _cell_edges(space: FiniteMeasureSpace) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(space.weights)])


def _locate(edges: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.clip(np.searchsorted(edges, x, side="right") - 1, 0,
                   edges.size - 2)


def pf_ulam(spec: MapSpec, space: FiniteMeasureSpace, samples_per_cell: int,
            seed: int) -> MarkovMatrix:
    """Monte-Carlo Ulam kernel: row i estimates the split of cell i's mass
    over target cells from independent uniform draws inside cell i (one
    derived seed per row), rows renormalized to sum exactly to 1."""
    if samples_per_cell < 1:
        raise PreconditionError("need at least one sample per cell")
    n = space.n
    children = np.random.SeedSequence(seed).spawn(n)
    kernel = np.zeros((n, n))
    s = samples_per_cell
    if spec.dimension == 1:
        edges = _cell_edges(space)
        for i in range(n):
            rng = np.random.default_rng(children[i])
            x = edges[i] + rng.random(s) * (edges[i + 1] - edges[i])
            j = _locate(edges, map_point(spec, x))
            kernel[i] = np.bincount(j, minlength=n)
    else:
        _require_uniform(space, "pf_ulam on the unit square")
        g = math.isqrt(n)
        if g * g != n:
            raise PreconditionError("planar maps need N = g^2 grid cells")
        for i in range(n):
            rng = np.random.default_rng(children[i])
            ix, iy = i % g, i // g
            x = (ix + rng.random(s)) / g
            y = (iy + rng.random(s)) / g
            x2, y2 = map_point(spec, x, y)
            j = np.minimum((x2 * g).astype(int), g - 1) \
                + g * np.minimum((y2 * g).astype(int), g - 1)
            kernel[i] = np.bincount(j, minlength=n)
    kernel /= kernel.sum(axis=1, keepdims=True)
    return MarkovMatrix(space, kernel, exact=False)


def duality_residual(P: MarkovMatrix, spec: MapSpec, f: Density,
                     g: Observable, refinement: int = 8) -> float:
    """| integral (Pf) g dm  -  integral f (g o T) dm |.

    The first integral pairs through the kernel; the second is midpoint
    quadrature of the underlying map on each cell refined `refinement`-fold
    (per axis in dimension 2), locating g's cell at the mapped point.  Exact
    kernels of cell-aligned maps give residuals at float-rounding scale;
    Ulam kernels give residuals that shrink under partition refinement.
    """
    if refinement < 1:
        raise PreconditionError("refinement must be >= 1")
    space = f.space
    lhs = integrate(apply(P, f), g)
    r = refinement
    if spec.dimension == 1:
        edges = _cell_edges(space)
        widths = space.weights
        sub = (np.arange(r) + 0.5) / r
        x = (edges[:-1, None] + widths[:, None] * sub[None, :]).ravel()
        fx = np.repeat(f.values, r)
        quad_w = np.repeat(widths / r, r)
        gx = g.values[_locate(edges, map_point(spec, x))]
        rhs = float(np.sum(quad_w * fx * gx))
    else:
        _require_uniform(space, "duality_residual on the unit square")
        gsz = math.isqrt(space.n)
        if gsz * gsz != space.n:
            raise PreconditionError("planar maps need N = g^2 grid cells")
        sub = (np.arange(r) + 0.5) / r
        axis = np.arange(gsz)
        xs = ((axis[:, None] + sub[None, :]) / gsz).ravel()  # per-axis midpoints
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        x2, y2 = map_point(spec, X.ravel(), Y.ravel())
        j = np.minimum((x2 * gsz).astype(int), gsz - 1) \
            + gsz * np.minimum((y2 * gsz).astype(int), gsz - 1)
        m = gsz * r
        src_ix = np.repeat(np.arange(m) // r, m)  # x-axis cell of each point
        src_iy = np.tile(np.arange(m) // r, m)    # y-axis cell of each point
        src_cell = src_ix + gsz * src_iy
        rhs = float(np.sum(f.values[src_cell] * g.values[j]) / m**2)
    return abs(lhs - rhs)
