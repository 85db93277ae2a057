"""Reference solutions: exact evolution with a few discrete modes, and the
brute-force path sum of the discretized influence functional.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .bath import GridParams, ModeKernel, ModelParams, eta_table, gamma_table, spectral_density
from .fotoc import FotocRecord, ProbeParams, _probe_exponents, _self_exponent, fotoc_from_w
from .tempo import RHO_UP, ReducedDensity, TimeSeries, system_propagator
from .tensor_net import SIGMA_MINUS, SIGMA_PLUS

__all__ = [
    "DiscretizedBath",
    "discretize_bath",
    "ed_evolve",
    "direct_path_sum",
    "MAX_ED_DIMENSION",
    "MAX_PATH_STEPS",
]

MAX_ED_DIMENSION = 2_000_000
MAX_PATH_STEPS = 7
# dense diagonalisation below this Hilbert-space size, Krylov stepping above
_DENSE_LIMIT = 4000
_LEAKAGE_WARN = 1e-6


@dataclass(frozen=True)
class DiscretizedBath:
    """Finite set of bosonic modes ``(omega_k, g_k)`` with a Fock cutoff.

    ``continuum_weight`` is ``C(0)`` of the bath this one was cut from (NaN if
    built by hand), kept so the discretization error can be reported.
    """

    omegas: np.ndarray
    couplings: np.ndarray
    fock_cutoff: int = 10
    continuum_weight: float = float("nan")

    def __post_init__(self):
        om = np.atleast_1d(np.asarray(self.omegas, dtype=float))
        g = np.atleast_1d(np.asarray(self.couplings, dtype=float))
        if om.shape != g.shape or om.ndim != 1:
            raise ValueError("omegas and couplings must be 1-d arrays of equal length")
        if np.any(om <= 0):
            raise ValueError("mode frequencies must be positive")
        if self.fock_cutoff < 1:
            raise ValueError(f"fock_cutoff must be >= 1, got {self.fock_cutoff}")
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "couplings", g)

    @property
    def modes(self):
        return list(zip(self.omegas.tolist(), self.couplings.tolist()))

    @property
    def total_weight(self) -> float:
        """``sum_k g_k^2``, the discrete ``C(0)``."""
        return float(np.sum(self.couplings**2))

    @property
    def dimension(self) -> int:
        return 2 * (self.fock_cutoff + 1) ** len(self.omegas)

    def kernel(self) -> ModeKernel:
        return ModeKernel(self.omegas, self.couplings)


def discretize_bath(model: ModelParams, m: int, omega_max: float,
                    fock_cutoff: int = 10) -> DiscretizedBath:
    """Midpoint grid ``w_k = (k - 1/2) w_max / m`` with ``g_k^2 = J(w_k) w_max / m``."""
    if m < 1:
        raise ValueError(f"need at least one mode, got m={m}")
    if omega_max <= 0:
        raise ValueError(f"omega_max must be > 0, got {omega_max}")
    width = omega_max / m
    omegas = (np.arange(1, m + 1) - 0.5) * width
    couplings = np.sqrt(spectral_density(omegas, model) * width)
    c0 = 2.0 * model.alpha * math.gamma(model.s + 1.0) * model.omega_c**2
    return DiscretizedBath(omegas, couplings, fock_cutoff, c0)


def _mode_operators(n_max: int):
    b = np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1)
    return b, b.T @ b


def _hamiltonian(bath: DiscretizedBath, delta: float) -> sp.csr_matrix:
    """Sparse ``H`` on spin (x) mode_1 (x) ... (x) mode_m, spin-major."""
    d = bath.fock_cutoff + 1
    m = len(bath.omegas)
    b, num = _mode_operators(bath.fock_cutoff)
    b, num = sp.csr_matrix(b), sp.csr_matrix(num)
    eye_b = sp.identity(d, format="csr")

    def embed(op, k):
        out = sp.identity(1, format="csr")
        for i in range(m):
            out = sp.kron(out, op if i == k else eye_b, format="csr")
        return out

    dim_b = d**m
    h_bath = sp.csr_matrix((dim_b, dim_b))
    a_op = sp.csr_matrix((dim_b, dim_b))
    for k, (w, g) in enumerate(zip(bath.omegas, bath.couplings)):
        h_bath = h_bath + w * embed(num, k)
        a_op = a_op + g * embed(b + b.T, k)
    sx = sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
    sz = sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]])
    eye_s = sp.identity(2, format="csr")
    h = (0.5 * delta * sp.kron(sx, sp.identity(dim_b))
         + sp.kron(eye_s, h_bath)
         + 0.5 * sp.kron(sz, a_op))
    return sp.csr_matrix(h)


class _ProbeBasis:
    """Eigenbasis of every truncated ``x_k = b_k + b_k^dagger``, in which
    ``A = sum_k g_k x_k`` is diagonal."""

    def __init__(self, bath: DiscretizedBath):
        b, _ = _mode_operators(bath.fock_cutoff)
        vals, vecs = np.linalg.eigh(b + b.T)
        self.vecs = vecs
        m = len(bath.omegas)
        a = np.zeros((bath.fock_cutoff + 1,) * m)
        for k, g in enumerate(bath.couplings):
            shape = [1] * m
            shape[k] = -1
            a = a + g * vals.reshape(shape)
        self.a_values = a
        self.m = m

    def w_minus_one(self, psi: np.ndarray, xi: float) -> complex:
        """``<psi| exp(i xi A) - 1 |psi>`` without cancellation."""
        d = self.vecs.shape[0]
        amp = psi.reshape((2,) + (d,) * self.m)
        for k in range(self.m):
            amp = np.moveaxis(np.tensordot(amp, self.vecs, axes=(k + 1, 0)), -1, k + 1)
        prob = np.sum(np.abs(amp) ** 2, axis=0)
        return complex(np.sum(prob * np.expm1(1j * xi * self.a_values)))


def _top_level_population(psi: np.ndarray, bath: DiscretizedBath) -> float:
    d = bath.fock_cutoff + 1
    m = len(bath.omegas)
    prob = np.sum(np.abs(psi.reshape((2,) + (d,) * m)) ** 2, axis=0)
    worst = 0.0
    for k in range(m):
        worst = max(worst, float(np.take(prob, d - 1, axis=k).sum()))
    return worst


def ed_evolve(bath: DiscretizedBath, model: ModelParams, dt: float, n_steps: int,
              xi: Optional[float] = None) -> TimeSeries:
    """Evolve ``|up, vacuum>`` under the discretized Hamiltonian and record
    ``P(t)`` (and the FOTOC when ``xi`` is given) at ``t = n dt``.

    ``model`` supplies ``delta`` and the ``alpha`` used for the scaled FOTOC;
    the bath itself is entirely ``bath``.  Small spaces are diagonalised
    exactly; larger ones use Krylov stepping of ``exp(-i H dt)``.
    """
    dim = bath.dimension
    if dim > MAX_ED_DIMENSION:
        raise ValueError(f"Hilbert dimension {dim} exceeds the guard {MAX_ED_DIMENSION}")
    if dt <= 0 or n_steps < 1:
        raise ValueError("need dt > 0 and n_steps >= 1")
    start = time.perf_counter()
    h = _hamiltonian(bath, model.delta)
    psi0 = np.zeros(dim, dtype=complex)
    psi0[0] = 1.0
    probe = _ProbeBasis(bath) if xi is not None else None
    n = n_steps + 1
    t = dt * np.arange(n)
    pol = np.zeros(n)
    rho = np.zeros((n, 2, 2), dtype=complex)
    w = np.full(n, np.nan, dtype=complex)
    f = np.full(n, np.nan)
    omf = np.full(n, np.nan)
    leak = 0.0

    if dim <= _DENSE_LIMIT:
        energies, vecs = np.linalg.eigh(h.toarray())
        coeff = vecs.T @ psi0
        states = (vecs @ (np.exp(-1j * np.outer(energies, ti)) * coeff[:, None])
                  for ti in t)
    else:
        def _krylov():
            psi = psi0
            yield psi
            for _ in range(n_steps):
                psi = expm_multiply(-1j * dt * h, psi)
                yield psi
        states = _krylov()

    for i, psi in enumerate(states):
        psi = np.asarray(psi).reshape(dim)
        half = psi.reshape(2, -1)
        rho[i] = half @ half.conj().T
        pol[i] = float(np.real(rho[i, 0, 0] - rho[i, 1, 1]))
        leak = max(leak, _top_level_population(psi, bath))
        if probe is not None:
            rec = fotoc_from_w(float(t[i]), probe.w_minus_one(psi, xi), model.alpha, xi)
            w[i], f[i], omf[i] = rec.w_expect, rec.f, rec.one_minus_f
    if leak > _LEAKAGE_WARN:
        warnings.warn(f"top Fock level reaches population {leak:.2e}; raise fock_cutoff",
                      stacklevel=2)
    if xi is not None and model.alpha > 0 and xi > 0:
        scaled = omf / (model.alpha**2 * xi**2)
    else:
        scaled = np.full(n, np.nan)
    meta = {"bath": bath, "model": model, "dt": dt, "n_steps": n_steps, "xi": xi,
            "fock_leakage": leak, "dimension": dim,
            "wall_time": time.perf_counter() - start}
    return TimeSeries(t, pol, w, f, omf, scaled, rho, meta)


def direct_path_sum(model: ModelParams, grid: GridParams,
                    probe: Optional[ProbeParams] = None,
                    kernel=None, n: Optional[int] = None) -> Union[ReducedDensity, FotocRecord]:
    """Sum the discretized path integral over every configuration at ``t = N dt``.

    ``N`` is ``grid.n_steps`` unless ``n`` (``0 <= n <= grid.n_steps``) is given.

    Each path carries the free propagator between neighbouring points, the
    influence factor ``exp(-sum_{j>=k} (s_j^+ - s_j^-)(eta_jk s_k^+ - conj(eta_jk) s_k^-))``
    with ``s = sigma / 2`` and, with ``probe``, the probe weights.  Returns the
    reduced density, or the FOTOC record when ``probe`` is given.
    """
    n = grid.n_steps if n is None else n
    if not 0 <= n <= grid.n_steps:
        raise ValueError(f"n must lie in [0, {grid.n_steps}], got {n}")
    if n > MAX_PATH_STEPS:
        raise ValueError(f"direct path sum is limited to N <= {MAX_PATH_STEPS}, got {n}")
    table = eta_table(model, grid, kernel=kernel)
    eta = np.zeros((n + 1, n + 1), dtype=complex)
    for j in range(n + 1):
        for k in range(j + 1):
            eta[j, k] = table.coefficient(j, k, endpoint=j == n)
    prop = system_propagator(model, grid.dt).full_step

    # the initial point is fixed by RHO_UP; enumerate the other N points
    start = int(np.flatnonzero(RHO_UP)[0])
    configs = np.array([(start,) + c for c in itertools.product(range(4), repeat=n)],
                       dtype=int).reshape(-1, n + 1)
    sp_ = SIGMA_PLUS[configs] / 2.0
    sm_ = SIGMA_MINUS[configs] / 2.0
    diff = sp_ - sm_
    expo = -np.sum(diff * (sp_ @ eta.T - sm_ @ eta.conj().T), axis=1)
    amp = RHO_UP[start] * np.exp(expo)
    for i in range(1, n + 1):
        amp = amp * prop[configs[:, i], configs[:, i - 1]]

    if probe is None:
        rho = np.zeros(4, dtype=complex)
        np.add.at(rho, configs[:, -1], amp)
        return ReducedDensity(rho.reshape(2, 2))

    gam = gamma_table(model, grid, n, kernel=kernel)
    pe = _probe_exponents(gam, probe)  # (retained points, 4)
    cols = configs[:, gam.first_index:]
    lin = np.sum(pe[np.arange(cols.shape[1]), cols], axis=1)
    closed = np.isin(configs[:, -1], (0, 3))
    amp_c = amp[closed]
    trace = np.sum(amp_c)
    linear_minus_one = np.sum(amp_c * np.expm1(lin[closed])) / trace
    w_minus_one = (math.expm1(_self_exponent(gam, probe)) * (1.0 + linear_minus_one)
                   + linear_minus_one)
    return fotoc_from_w(n * grid.dt, complex(w_minus_one), model.alpha, probe.xi)
