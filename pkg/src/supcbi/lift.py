"""Quantile-based Markovian lift of the reversion-rate measure.

The measure pi is replaced by n = 2^m atoms: rates r_i at the odd quantiles of
level (2i-1)/(2n) and uniform weights c_i = 1/n. The key diagnostic is how fast
R_n = sum(c_i / r_i) approaches R = integral of 1/r against pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .measures import GammaMixingMeasure, inv_mean, pi_quantile

__all__ = [
    "MarkovianLift",
    "ConvergenceRow",
    "build_lift",
    "lift_inv_mean",
    "convergence_report",
    "write_lift_csv",
    "format_convergence_table",
]


@dataclass(frozen=True)
class MarkovianLift:
    """Discretization {r_i, c_i} of the mixing measure with n = 2^m atoms."""

    m: int
    r: np.ndarray
    c: np.ndarray

    @property
    def n(self) -> int:
        return self.r.size

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if r.size != c.size or r.size != 2**self.m:
            raise ValueError("lift needs 2^m rates and as many weights")
        if not np.all(np.isfinite(r)) or not np.all(r > 0.0) or np.any(np.diff(r) <= 0.0):
            raise ValueError("rates must be finite, positive, and strictly increasing")
        if not np.all(c > 0.0) or abs(c.sum() - 1.0) > 1e-14:
            raise ValueError("weights must be positive and sum to one")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "c", c)


def build_lift(pi: GammaMixingMeasure, m: int) -> MarkovianLift:
    """Build the quantile lift: r_i at the odd (2i-1)/(2n) quantiles, c_i = 1/n."""
    if m < 1:
        raise ValueError(f"lift resolution m must be at least 1, got {m}")
    n = 2**m
    levels = (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)
    r = np.array([pi_quantile(pi, p) for p in levels])
    c = np.full(n, 1.0 / n)
    return MarkovianLift(m=m, r=r, c=c)


def lift_inv_mean(lift: MarkovianLift) -> float:
    """Discrete inverse first moment R_n = sum(c_i / r_i)."""
    return float(np.sum(lift.c / lift.r))


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    r_n: float
    r_exact: float
    rel_error: float
    rate: float | None  # None on the first row


def convergence_report(
    pi: GammaMixingMeasure, m_min: int, m_max: int
) -> list[ConvergenceRow]:
    """Tabulate R_n, its relative error, and the dyadic convergence rate."""
    if not 1 <= m_min <= m_max <= 16:
        raise ValueError("resolution range must satisfy 1 <= m_min <= m_max <= 16")
    r_exact = inv_mean(pi)
    rows: list[ConvergenceRow] = []
    prev_err: float | None = None
    for m in range(m_min, m_max + 1):
        r_n = lift_inv_mean(build_lift(pi, m))
        err = (r_exact - r_n) / r_exact
        rate = math.log2(prev_err / err) if prev_err is not None and err > 0.0 else None
        rows.append(ConvergenceRow(n=2**m, r_n=r_n, r_exact=r_exact, rel_error=err, rate=rate))
        prev_err = err
    return rows


def write_lift_csv(lift: MarkovianLift, out: IO[str]) -> None:
    """CSV dump of the lift, full double precision."""
    out.write("i,r_i,c_i\n")
    for i in range(lift.n):
        out.write(f"{i + 1},{lift.r[i]:.17g},{lift.c[i]:.17g}\n")


def format_convergence_table(rows: Sequence[ConvergenceRow]) -> str:
    lines = ["n,R_n,R,rel_error,rate"]
    for row in rows:
        rate = f"{row.rate:.3f}" if row.rate is not None else ""
        lines.append(f"{row.n},{row.r_n:.6g},{row.r_exact:.6g},{row.rel_error:.6f},{rate}")
    return "\n".join(lines) + "\n"
