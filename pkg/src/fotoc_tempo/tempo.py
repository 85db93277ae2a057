"""TEMPO propagation of the reduced spin dynamics.

The augmented density tensor (ADT) is an MPS over the retained path points,
newest at the tail.  Each step attaches a new point through the free spin
propagator and multiplies in the influence of the new point on every retained
point.  The new point's bath window is taken at full width, as it will be once
the next step is taken; the half-window at the current endpoint is restored
only when observables are read out, so no factor ever has to be undone inside
the ADT itself.

Swapping the two branches of every path point conjugates the path weight.  In
the basis ``STORAGE_BASIS`` (``++``, ``--``, and the symmetric and
antisymmetric mixed combinations) the ADT is therefore real, and it is kept
that way: all compression runs in real arithmetic.  Operators are built in the
composite ``(sigma+, sigma-)`` basis and rotated on the way in.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bath import GridParams, ModelParams, BathKernelTable, eta_table, _kernel
from .tensor_net import (
    PHYS_DIM,
    SIGMA_MINUS,
    SIGMA_PLUS,
    CompressionParams,
    Mpo,
    Mps,
    apply_mpo,
    contract_open_tail,
    product_mps,
    trace_out_site,
)

__all__ = [
    "SystemPropagator",
    "AugmentedState",
    "ReducedDensity",
    "TimeSeries",
    "system_propagator",
    "influence_mpo",
    "later_point_mpo",
    "initial_state",
    "step",
    "evolve",
    "reduced_density",
    "polarization",
    "PAULI_X",
    "PAULI_Z",
    "STORAGE_BASIS",
    "to_storage",
    "from_storage",
    "WallTimeExceeded",
]

log = logging.getLogger(__name__)

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

# eigenvalues of the coupling operator sigma_z / 2 on each branch
_S_PLUS = SIGMA_PLUS / 2.0
_S_MINUS = SIGMA_MINUS / 2.0
_S_DIFF = _S_PLUS - _S_MINUS  # 0, 1, -1, 0
_DIFF_VALUES = np.array([-1.0, 0.0, 1.0])
_DIFF_SLOT = {-1.0: 0, 0.0: 1, 1.0: 2}

RHO_UP = np.array([1.0, 0.0, 0.0, 0.0], dtype=complex)  # |+><+| on the composite index

_SQ = np.sqrt(0.5)
# rows: new basis vectors in terms of the composite index; conj(B) = B @ swap
STORAGE_BASIS = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, _SQ, _SQ, 0.0],
    [0.0, 1j * _SQ, -1j * _SQ, 0.0],
])
# same construction on the bond of later_point_mpo (slots d = -1, 0, 1)
_BOND_BASIS = np.array([
    [0.0, 1.0, 0.0],
    [_SQ, 0.0, _SQ],
    [-1j * _SQ, 0.0, 1j * _SQ],
])
_ONES_STORED = (STORAGE_BASIS.conj() @ np.ones(PHYS_DIM)).real
_TRACE_STORED = (STORAGE_BASIS.conj() @ np.array([1.0, 0.0, 0.0, 1.0])).real
# copy tensor G[a0, a, c] and the rule for rotating vectors back
_COPY_STORED = np.einsum("xs,as,cs->xac", STORAGE_BASIS.conj(), STORAGE_BASIS,
                         STORAGE_BASIS).real


def _real_part_checked(arr: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(arr), initial=0.0)))
    if np.max(np.abs(arr.imag), initial=0.0) > 1e-10 * scale:
        raise FloatingPointError(f"{what} is not real in the storage basis")
    return np.ascontiguousarray(arr.real)


def to_storage(op: Mpo, real: bool = True) -> Mpo:
    """Rotate an MPO from the composite basis into the storage basis.

    With ``real`` the internal bonds must be those of :func:`later_point_mpo`
    (slots ``d = -1, 0, 1``); they are rotated too and the result is real.
    """
    b = STORAGE_BASIS
    sites = [np.einsum("os,lstr,it->loir", b, w, b.conj()) for w in op.sites]
    if not real:
        return Mpo(tuple(sites))
    n = len(sites)
    for k in range(n):
        if k > 0:
            sites[k] = np.einsum("ab,bxyr->axyr", _BOND_BASIS, sites[k])
        if k < n - 1:
            sites[k] = np.einsum("lxyr,sr->lxys", sites[k], _BOND_BASIS.conj())
        sites[k] = _real_part_checked(sites[k], "influence operator")
    return Mpo(tuple(sites))


def from_storage(vec: np.ndarray) -> np.ndarray:
    """Composite-basis vector from storage-basis components."""
    return STORAGE_BASIS.conj().T @ vec


@dataclass(frozen=True)
class SystemPropagator:
    """Free spin evolution over half a time step on the composite index.

    ``half_step @ vec(rho)`` equals ``vec(U rho U^dagger)`` with
    ``U = exp(-i H_S dt / 2)``, ``H_S = (delta / 2) sigma_x`` and ``vec`` the
    row-major flattening.
    """

    half_step: np.ndarray
    unitary: np.ndarray

    @property
    def full_step(self) -> np.ndarray:
        return self.half_step @ self.half_step

    def apply(self, rho: np.ndarray, full: bool = False) -> np.ndarray:
        mat = self.full_step if full else self.half_step
        return (mat @ np.asarray(rho, dtype=complex).reshape(PHYS_DIM)).reshape(2, 2)


def system_propagator(model: ModelParams, dt: float) -> SystemPropagator:
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    phi = model.delta * dt / 4.0
    u = np.cos(phi) * np.eye(2) - 1j * np.sin(phi) * PAULI_X
    return SystemPropagator(np.kron(u, u.conj()), u)


def later_point_mpo(coefficients: np.ndarray) -> Mpo:
    """Diagonal MPO for the influence of the newest point on all retained points.

    ``coefficients[k]`` pairs the newest point with the k-th retained site
    (oldest first); the last entry is the self term.  Each configuration is
    multiplied by ``exp(-d_new * (eta s_k^+ - conj(eta) s_k^-))`` with
    ``d_new = s_new^+ - s_new^-``.  The bond carries ``d_new`` (three values).
    """
    coefficients = np.asarray(coefficients, dtype=complex)
    n = coefficients.size
    # factors[k, slot, sigma]
    expo = (np.multiply.outer(coefficients, _S_PLUS)
            - np.multiply.outer(coefficients.conj(), _S_MINUS))
    factors = np.exp(-_DIFF_VALUES[None, :, None] * expo[:, None, :])
    eye = np.eye(PHYS_DIM)
    self_diag = factors[-1, [_DIFF_SLOT[d] for d in _S_DIFF], np.arange(PHYS_DIM)]
    if n == 1:
        return Mpo((np.diag(self_diag).reshape(1, PHYS_DIM, PHYS_DIM, 1),))
    sites = []
    first = np.einsum("bs,st->stb", factors[0], eye)[None]
    sites.append(first)
    for k in range(1, n - 1):
        mid = np.einsum("bs,st,bc->bstc", factors[k], eye, np.eye(3))
        sites.append(mid)
    last = np.zeros((3, PHYS_DIM, PHYS_DIM, 1), dtype=complex)
    for sigma in range(PHYS_DIM):
        last[_DIFF_SLOT[_S_DIFF[sigma]], sigma, sigma, 0] = self_diag[sigma]
    sites.append(last)
    return Mpo(tuple(sites))


def influence_mpo(n: int, table: BathKernelTable, first_index: int = 0,
                  endpoint: Optional[bool] = None) -> Mpo:
    """Influence MPO of point ``n`` over retained points ``first_index..n``.

    ``endpoint`` selects the half window of a final point; by default it is used
    when ``n`` equals the table's ``n_steps``.
    """
    if n - first_index > table.dk_max:
        raise ValueError(
            f"lag {n - first_index} exceeds the table's memory {table.dk_max}")
    if endpoint is None:
        endpoint = n == table.n_steps
    coeffs = table.row(n, range(first_index, n + 1), endpoint=endpoint)
    return later_point_mpo(coeffs)


@dataclass(frozen=True)
class ReducedDensity:
    rho: np.ndarray

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.rho))


def polarization(rho) -> float:
    """``<sigma_z> = Re(rho_00 - rho_11)``."""
    m = rho.rho if isinstance(rho, ReducedDensity) else np.asarray(rho)
    return float(np.real(m[0, 0] - m[1, 1]))


@dataclass(frozen=True)
class AugmentedState:
    mps: Mps
    step_index: int
    first_index: int
    table: BathKernelTable
    propagator: SystemPropagator

    @property
    def retained(self) -> int:
        return len(self.mps)

    def endpoint_correction(self) -> Mpo:
        """MPO turning the stored full-width window of the newest point into
        the half window ending at ``t = step_index * dt``."""
        n = self.step_index
        ks = range(self.first_index, n + 1)
        diff = self.table.row(n, ks, endpoint=True) - self.table.row(n, ks, endpoint=False)
        return to_storage(later_point_mpo(diff))

    def closed_weights(self):
        """Storage-basis weights summing each closed site over all paths."""
        return [_ONES_STORED] * (self.retained - 1)

    @staticmethod
    def trace_weight() -> np.ndarray:
        """Storage-basis weight taking the trace at the newest site."""
        return _TRACE_STORED


def reduced_density(state: AugmentedState) -> ReducedDensity:
    vec = contract_open_tail(state.mps, state.closed_weights(), state.endpoint_correction())
    return ReducedDensity(from_storage(vec).reshape(2, 2))


def initial_state(model: ModelParams, grid: GridParams,
                  table: Optional[BathKernelTable] = None, kernel=None) -> AugmentedState:
    """ADT at ``t = 0`` for the spin-up, bath-vacuum initial state."""
    if table is None:
        table = eta_table(model, grid, kernel=kernel)
    mps = product_mps([(STORAGE_BASIS @ RHO_UP).real])
    mps = apply_mpo(to_storage(influence_mpo(0, table, 0, endpoint=False)), mps)
    return AugmentedState(mps, 0, 0, table, system_propagator(model, grid.dt))


def _extend(mps: Mps, propagator: np.ndarray) -> Mps:
    """Split the tail into a copy tensor and a new site ``K[s', s]``."""
    tail = mps.sites[-1][:, :, 0]
    copy = np.tensordot(tail, _COPY_STORED, axes=(1, 0))  # (l, a, c)
    k_stored = _real_part_checked(STORAGE_BASIS @ propagator @ STORAGE_BASIS.conj().T,
                                  "propagator")
    new = k_stored.T.reshape(PHYS_DIM, PHYS_DIM, 1)  # new[c, a', 0] = K[a', c]
    return Mps(mps.sites[:-1] + (copy, new))


def step(state: AugmentedState, comp: CompressionParams) -> AugmentedState:
    """Advance the ADT by one time step."""
    n = state.step_index + 1
    mps = _extend(state.mps, state.propagator.full_step)
    first = state.first_index
    # sites with no remaining coupling (all coefficients exactly zero) go at once
    if len(mps) > min(state.table.dk_max, max(state.table.coupled_lag, 1)) + 1:
        mps = trace_out_site(mps, 0, _ONES_STORED)
        first += 1
    op = to_storage(influence_mpo(n, state.table, first, endpoint=False))
    mps = apply_mpo(op, mps, comp)
    for t in mps.sites:
        if not np.all(np.isfinite(t)):
            raise FloatingPointError(f"non-finite ADT entries at step {n}")
    return AugmentedState(mps, n, first, state.table, state.propagator)


@dataclass
class TimeSeries:
    """Per-step observables; ``scaled`` is ``(1 - F) / (alpha^2 xi^2)`` or NaN."""

    t: np.ndarray
    polarization: np.ndarray
    w: np.ndarray
    f: np.ndarray
    one_minus_f: np.ndarray
    scaled: np.ndarray
    rho: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def has_probe(self) -> bool:
        return not np.all(np.isnan(self.f))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else float("nan")


class _Recorder:
    def __init__(self, n, alpha, xi):
        self.alpha, self.xi = alpha, xi
        self.t = np.zeros(n)
        self.p = np.zeros(n)
        self.w = np.full(n, np.nan, dtype=complex)
        self.f = np.full(n, np.nan)
        self.omf = np.full(n, np.nan)
        self.rho = np.zeros((n, 2, 2), dtype=complex)

    def add(self, i, t, rho, rec=None):
        self.t[i] = t
        self.rho[i] = rho.rho
        self.p[i] = polarization(rho)
        if rec is not None:
            self.w[i] = rec.w_expect
            self.f[i] = rec.f
            self.omf[i] = rec.one_minus_f

    def series(self, metadata) -> TimeSeries:
        if self.xi is not None and self.alpha > 0:
            scaled = self.omf / (self.alpha**2 * self.xi**2)
        else:
            scaled = np.full_like(self.omf, np.nan)
        return TimeSeries(self.t, self.p, self.w, self.f, self.omf, scaled, self.rho,
                          dict(metadata))


class WallTimeExceeded(RuntimeError):
    """Raised by :func:`evolve` when its time budget runs out.

    ``partial`` holds the records up to and including ``steps_done``.
    """

    def __init__(self, budget: float, steps_done: int, partial: TimeSeries):
        super().__init__(f"wall-time budget {budget:g}s exhausted after "
                         f"{steps_done} of {partial.metadata['grid'].n_steps} steps")
        self.budget = budget
        self.steps_done = steps_done
        self.partial = partial


def evolve(model: ModelParams, grid: GridParams,
           comp: CompressionParams = CompressionParams(),
           probe=None, kernel=None, progress: bool = False,
           max_wall_time: Optional[float] = None) -> TimeSeries:
    """Run TEMPO for ``grid.n_steps`` steps, recording P(t) and, if ``probe`` is
    given, the FOTOC at every step.

    ``kernel`` replaces the continuous bath (e.g. by a finite mode set).  With
    ``max_wall_time`` (seconds, table construction included) the run stops
    with :class:`WallTimeExceeded` once the budget is spent.
    """
    from .bath import gamma_table
    from .fotoc import fotoc_at  # fotoc depends on this module's types

    start = time.perf_counter()
    kern = kernel if kernel is not None else _kernel(model)
    table = eta_table(model, grid, kernel=kern)
    state = initial_state(model, grid, table)
    rec = _Recorder(grid.n_steps + 1, model.alpha, None if probe is None else probe.xi)

    def record(st):
        rho = reduced_density(st)
        fr = None
        if probe is not None:
            fr = fotoc_at(st, gamma_table(model, grid, st.step_index, kernel=kern,
                                           first_index=st.first_index), probe,
                          alpha=model.alpha)
        rec.add(st.step_index, st.step_index * grid.dt, rho, fr)

    record(state)
    max_chi = 1

    def metadata():
        return {
            "model": model,
            "grid": grid,
            "comp": comp,
            "probe": probe,
            "max_bond_dim": max_chi,
            "wall_time": time.perf_counter() - start,
        }

    for n in range(1, grid.n_steps + 1):
        state = step(state, comp)
        record(state)
        chi = max(state.mps.bond_dims, default=1)
        max_chi = max(max_chi, chi)
        if progress and n % 50 == 0:
            log.info("step %d/%d  chi=%d  %.1fs", n, grid.n_steps, chi,
                     time.perf_counter() - start)
        if (max_wall_time is not None and n < grid.n_steps
                and time.perf_counter() - start > max_wall_time):
            partial = rec.series(metadata())
            partial = _truncated(partial, n + 1)
            raise WallTimeExceeded(max_wall_time, n, partial)
    return rec.series(metadata())


def _truncated(series: TimeSeries, n: int) -> TimeSeries:
    return TimeSeries(series.t[:n], series.polarization[:n], series.w[:n], series.f[:n],
                      series.one_minus_f[:n], series.scaled[:n], series.rho[:n],
                      series.metadata)
