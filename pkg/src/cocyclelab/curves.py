"""Decay-curve bookkeeping shared by the mixing and exactness reports:
tail windows, suffix envelopes, decay verdicts, and geometric rate fits."""

from __future__ import annotations

import dataclasses

import numpy as np


def tail_start(length: int, tail_fraction: float = 0.1) -> int:
    """Index where the verdict window begins: the last ceil(length * frac)
    entries of the curve."""
    if length < 1:
        raise ValueError("curves must have at least one entry")
    width = max(1, int(np.ceil(length * tail_fraction)))
    return length - width


def suffix_envelope(values) -> np.ndarray:
    """env[i] = max_{j >= i} |values[j]|; non-increasing by construction."""
    v = np.abs(np.asarray(values, dtype=float))
    return np.maximum.accumulate(v[::-1])[::-1]


def tail_max(values, tail_fraction: float = 0.1) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.abs(v[tail_start(v.size, tail_fraction):]).max())


def curve_decayed(values, tol: float, tail_fraction: float = 0.1) -> bool:
    return tail_max(values, tail_fraction) < tol


def first_below(values, tol: float) -> int | None:
    """First index from which the suffix envelope stays below tol."""
    env = suffix_envelope(values)
    hits = np.flatnonzero(env < tol)
    return int(hits[0]) if hits.size else None


@dataclasses.dataclass(frozen=True)
class RateFit:
    rate: float      # fitted lambda in |value_n| ~ C * lambda^n
    log_c: float
    r_squared: float
    n_points: int


def fit_geometric_rates(values, floor: float = 1e-14) -> list[RateFit]:
    """``fit_geometric_rate`` along the last axis of a curve array, batched.

    Returns one fit per curve in C order of the leading axes.  Rows are
    processed in chunks so the masked least-squares scratch arrays stay
    bounded regardless of how many curves are fitted at once.
    """
    v = np.abs(np.asarray(values, dtype=float))
    flat = v.reshape(-1, v.shape[-1])
    m, length = flat.shape
    x = np.arange(length, dtype=float)
    fits: list[RateFit] = []
    for start in range(0, m, 65536):
        rows = flat[start:start + 65536]
        env = np.maximum.accumulate(rows[:, ::-1], axis=1)[:, ::-1]
        last = np.sum(env > floor, axis=1) - 1  # -1 when nothing clears floor
        mask = (rows > floor) & (x[None, :] <= last[:, None])
        k = mask.sum(axis=1)
        usable = k >= 2
        y = np.where(mask, np.log(np.where(mask, rows, 1.0)), 0.0)
        xm = np.where(mask, x[None, :], 0.0)
        kf = k.astype(float)
        sx, sy = xm.sum(axis=1), y.sum(axis=1)
        sxx, sxy = (xm * xm).sum(axis=1), (xm * y).sum(axis=1)
        slope = np.zeros(rows.shape[0])
        intercept = np.full(rows.shape[0], -np.inf)
        denom = kf * sxx - sx * sx
        slope[usable] = (kf * sxy - sx * sy)[usable] / denom[usable]
        intercept[usable] = (sy[usable] - slope[usable] * sx[usable]) / kf[usable]
        r2 = np.ones(rows.shape[0])
        if np.any(usable):
            u = usable
            pred = np.where(mask[u], slope[u, None] * x[None, :]
                            + intercept[u, None], 0.0)
            resid = np.where(mask[u], y[u] - pred, 0.0)
            ss_res = (resid * resid).sum(axis=1)
            ybar = sy[u] / kf[u]
            dev = np.where(mask[u], y[u] - ybar[:, None], 0.0)
            ss_tot = (dev * dev).sum(axis=1)
            r2[u] = np.where(ss_tot == 0.0, 1.0,
                             1.0 - ss_res / np.where(ss_tot == 0.0, 1.0, ss_tot))
        rate = np.where(usable, np.exp(np.where(usable, slope, 0.0)), 0.0)
        fits.extend(RateFit(rate=float(rate[i]), log_c=float(intercept[i]),
                            r_squared=float(r2[i]), n_points=int(k[i]))
                    for i in range(rows.shape[0]))
    return fits


def fit_geometric_rate(values, floor: float = 1e-14) -> RateFit:
    """Least squares of log|value| against n over the decaying segment: the
    indices up to the last point where the suffix envelope still exceeds the
    floor, skipping exact-zero crossings.  Curves that die instantly (fewer
    than two usable points) report rate 0."""
    v = np.asarray(values, dtype=float)
    return fit_geometric_rates(v[None, :], floor=floor)[0]
