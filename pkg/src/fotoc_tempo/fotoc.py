"""Fidelity OTOC of the spin-boson model.

With ``W = exp(i xi A)`` and the initial projector as ``V``, the FOTOC of the
pure initial state is ``F(t) = |<W(t)>|^2`` where ``<W(t)> = Tr_S rho_S^xi(t)``.
The bath trace with the probe inserted at the contour turning point yields a
factor linear in the spin path (built here from the probe table) times the
path-independent vacuum factor ``exp(-xi^2 <A^2> / 2)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .bath import ModelParams, ProbeKernelTable
from .tempo import from_storage, to_storage
from .tensor_net import (
    PHYS_DIM,
    SIGMA_MINUS,
    SIGMA_PLUS,
    Mpo,
    compose,
    contract_all,
    contract_open_tail,
    diagonal_mpo,
)

__all__ = [
    "ProbeParams",
    "FotocRecord",
    "ExtremaReport",
    "LyapunovFit",
    "probe_weights",
    "probe_mpo",
    "probe_deviation_mpo",
    "fotoc_at",
    "probe_reduced_density",
    "fotoc_from_w",
    "scaled_series",
    "local_extrema",
    "extrema_locations",
    "lyapunov_fit",
    "suggest_lyapunov_window",
    "variance_check",
]

@dataclass(frozen=True)
class ProbeParams:
    xi: float = 1e-3
    include_self_factor: bool = True

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")
        if self.xi > 1e-2:
            warnings.warn(f"xi = {self.xi:g} is not small; the variance relation degrades",
                          stacklevel=2)


@dataclass(frozen=True)
class FotocRecord:
    t: float
    w_expect: complex
    f: float
    one_minus_f: float
    scaled: float = float("nan")


def _probe_exponents(table: ProbeKernelTable, probe: ProbeParams) -> np.ndarray:
    a = table.forward_weight()
    b = table.backward_weight()
    return probe.xi * (np.multiply.outer(a, SIGMA_PLUS / 2.0)
                       - np.multiply.outer(b, SIGMA_MINUS / 2.0))


def probe_weights(table: ProbeKernelTable, probe: ProbeParams) -> List[np.ndarray]:
    """Per-site diagonal weights ``exp(xi (s_j^+ a_j - s_j^- b_j))`` with
    ``s = sigma / 2`` and ``a``, ``b`` the forward/backward averaged coefficients."""
    return list(np.exp(_probe_exponents(table, probe)))


def _self_exponent(table: ProbeKernelTable, probe: ProbeParams) -> float:
    if not probe.include_self_factor:
        return 0.0
    return -0.5 * probe.xi**2 * table.lambda_self


def probe_mpo(table: ProbeKernelTable, probe: ProbeParams) -> Mpo:
    """Diagonal product MPO over the retained path points ``table.indices``."""
    weights = probe_weights(table, probe)
    weights[0] = weights[0] * math.exp(_self_exponent(table, probe))
    return diagonal_mpo(weights)


def probe_deviation_mpo(table: ProbeKernelTable, probe: ProbeParams) -> Mpo:
    """Bond-2 MPO for ``prod_j w_j - 1`` (path-linear part only).

    The bond flags whether any site has already contributed ``w_j - 1``; this
    gives ``<W> - 1`` without subtracting two numbers close to one.
    """
    expo = _probe_exponents(table, probe)
    n = len(expo)
    sites = []
    for k, e in enumerate(expo):
        u = np.expm1(e)
        t = np.zeros((2, PHYS_DIM, PHYS_DIM, 2), dtype=complex)
        t[0, :, :, 0] = np.eye(PHYS_DIM)
        t[0, :, :, 1] = np.diag(u)
        t[1, :, :, 1] = np.diag(1.0 + u)
        if k == 0:
            t = t[:1]
        if k == n - 1:
            t = t[..., 1:]
        sites.append(t)
    return Mpo(tuple(sites))


def _check_alignment(state, table: ProbeKernelTable):
    if table.n_now != state.step_index or table.first_index != state.first_index:
        raise ValueError(
            f"probe table for step {table.n_now} (first {table.first_index}) does not "
            f"match state at step {state.step_index} (first {state.first_index})")


def fotoc_from_w(t: float, w_minus_one: complex, alpha: float, xi: float) -> FotocRecord:
    """Build a record from ``<W> - 1``, computing ``1 - |<W>|^2`` stably."""
    w = 1.0 + w_minus_one
    omf = -2.0 * w_minus_one.real - abs(w_minus_one) ** 2
    f = abs(w) ** 2
    scaled = omf / (alpha**2 * xi**2) if alpha > 0 and xi > 0 else float("nan")
    return FotocRecord(t, complex(w), float(f), float(omf), float(scaled))


def fotoc_at(state, table: ProbeKernelTable, probe: ProbeParams,
             alpha: float = 0.0) -> FotocRecord:
    """FOTOC at the state's current step; the state is only read.

    ``alpha`` only feeds the scaled value (NaN when zero).
    """
    _check_alignment(state, table)
    corr = state.endpoint_correction()
    weights = state.closed_weights() + [state.trace_weight()]
    trace = contract_all(state.mps, weights, corr)
    dev_op = to_storage(probe_deviation_mpo(table, probe), real=False)
    dev = contract_all(state.mps, weights, compose(dev_op, corr))
    linear_minus_one = dev / trace
    w_minus_one = (math.expm1(_self_exponent(table, probe)) * (1.0 + linear_minus_one)
                   + linear_minus_one)
    if not np.isfinite(w_minus_one):
        raise FloatingPointError(f"non-finite probe contraction at step {state.step_index}")
    t = state.step_index * state.table.dt
    return fotoc_from_w(t, w_minus_one, alpha, probe.xi)


def probe_reduced_density(state, table: ProbeKernelTable, probe: ProbeParams) -> np.ndarray:
    """``rho_S^xi`` as a 2x2 matrix (not Hermitian in general)."""
    _check_alignment(state, table)
    op = compose(to_storage(probe_mpo(table, probe), real=False), state.endpoint_correction())
    vec = contract_open_tail(state.mps, state.closed_weights(), op)
    return from_storage(vec).reshape(2, 2)


def scaled_series(series, model: ModelParams, probe: ProbeParams) -> np.ndarray:
    """``(1 - F) / (alpha^2 xi^2)`` pointwise."""
    if model.alpha <= 0:
        raise ValueError("scaled FOTOC is undefined for alpha = 0")
    if probe.xi <= 0:
        raise ValueError("scaled FOTOC is undefined for xi = 0")
    return np.asarray(series.one_minus_f) / (model.alpha**2 * probe.xi**2)


@dataclass(frozen=True)
class ExtremaReport:
    minima_f: List[float] = field(default_factory=list)
    minima_p: List[float] = field(default_factory=list)
    maxima_f: List[float] = field(default_factory=list)
    maxima_p: List[float] = field(default_factory=list)
    uncertainty: float = float("nan")


def local_extrema(t: Sequence[float], y: Sequence[float], kind: str = "min",
                  edge: int = 2) -> List[float]:
    """Strict local extrema of ``y(t)`` refined by a 3-point parabola.

    Plateaus count once, at their earliest sample (no refinement).  Extrema whose sample lies
    within ``edge`` samples of either end are dropped.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind not in ("min", "max"):
        raise ValueError(f"kind must be 'min' or 'max', got {kind!r}")
    if kind == "max":
        y = -y
    n = len(y)
    found = []
    i = 1
    while i < n - 1:
        if y[i] < y[i - 1]:
            j = i
            while j + 1 < n and y[j + 1] == y[i]:
                j += 1
            if j + 1 < n and y[j + 1] > y[i] and edge <= i <= n - 1 - edge:
                found.append(_parabola_vertex(t, y, i) if j == i else float(t[i]))
            i = j + 1
        else:
            i += 1
    return found


def _parabola_vertex(t, y, i) -> float:
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom <= 0:
        return float(t[i])
    h = t[i + 1] - t[i]
    return float(t[i] + 0.5 * h * (y0 - y2) / denom)


def extrema_locations(series) -> ExtremaReport:
    """Minima/maxima of P(t) and of 1 - F(t) (scaling does not move extrema)."""
    if len(series.t) < 5:
        raise ValueError("need at least 5 records to locate extrema")
    t = series.t
    report = dict(
        minima_p=local_extrema(t, series.polarization, "min"),
        maxima_p=local_extrema(t, series.polarization, "max"),
        uncertainty=0.5 * float(t[1] - t[0]),
    )
    if series.has_probe:
        report["minima_f"] = local_extrema(t, series.one_minus_f, "min")
        report["maxima_f"] = local_extrema(t, series.one_minus_f, "max")
    return ExtremaReport(**report)


@dataclass(frozen=True)
class LyapunovFit:
    lambda_q: float
    intercept: float
    window: Tuple[float, float]
    r_squared: float
    residual_rms: float


def lyapunov_fit(series, window: Tuple[float, float]) -> LyapunovFit:
    """Least-squares line through ``log(1 - F)`` on ``t0 <= t <= t1``."""
    t0, t1 = window
    if not t1 > t0:
        raise ValueError(f"empty window {window}")
    t = np.asarray(series.t, dtype=float)
    y = np.asarray(series.one_minus_f, dtype=float)
    mask = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if mask.sum() < 2:
        raise ValueError(f"window {window} holds fewer than two samples")
    if np.any(y[mask] <= 0):
        raise ValueError("1 - F must be positive on the fit window")
    tw, ly = t[mask], np.log(y[mask])
    slope, intercept = np.polyfit(tw, ly, 1)
    resid = ly - (slope * tw + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LyapunovFit(float(slope), float(intercept), (float(t0), float(t1)), r2,
                       float(np.sqrt(np.mean(resid**2))))


def suggest_lyapunov_window(series) -> Tuple[float, float]:
    """``(first positive time, first inflection of log(1 - F))``; a hint only."""
    t = np.asarray(series.t)
    y = np.asarray(series.one_minus_f)
    pos = np.nonzero(y > 0)[0]
    if pos.size < 4:
        raise ValueError("not enough positive samples")
    start = pos[0]
    ly = np.log(y[start:])
    curv = np.diff(ly, 2)
    sign_change = np.nonzero(np.diff(np.sign(curv)) != 0)[0]
    stop = start + (sign_change[0] + 1 if sign_change.size else len(ly) - 1)
    return float(t[start]), float(t[stop])


def variance_check(record_xi: FotocRecord, record_half_xi: FotocRecord) -> float:
    """``(1 - F_xi) / (1 - F_{xi/2})``; tends to 4 as ``xi -> 0``."""
    denom = record_half_xi.one_minus_f
    if abs(denom) < 1e-15:
        raise ValueError("1 - F at xi/2 is below 1e-15; ratio is degenerate")
    return record_xi.one_minus_f / denom
