"""Zero-temperature bath kernels and QUAPI coefficient tables.

The bath couples to the spin through ``(sigma_z / 2) * A`` with
``A = sum_k g_k (b_k + b_k^dagger)``.  Everything downstream only needs the
autocorrelation ``C(t) = <A(t) A(0)>`` and its double integrals over pairs of
time windows.  Windows are assembled from half-step *cells*
``[m * dt/2, (m + 1) * dt/2]``; path point ``j`` owns cells ``2j - 1`` and
``2j`` (clipped to ``[0, N dt]``), so every coefficient is a short sum of the
two cell integrals computed here in closed form.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import log1p

__all__ = [
    "ModelParams",
    "GridParams",
    "SpectralKernel",
    "ModeKernel",
    "BathKernelTable",
    "ProbeKernelTable",
    "spectral_density",
    "autocorrelation",
    "contour_kernel_block",
    "eta_table",
    "gamma_table",
    "dump_eta_csv",
]

# below this |x| the cell integrals switch to a power series
_SERIES_RADIUS = 0.2
_SERIES_TERMS = 40


@dataclass(frozen=True)
class ModelParams:
    """Unbiased spin-boson model with the spectral density
    ``J(w) = 2 alpha w^s wc^(1-s) exp(-w/wc)`` (units of the tunneling).

    ``delta = 0`` is accepted so that tests can quench the tunneling; the
    configuration parser rejects it.
    """

    s: float = 1.0
    alpha: float = 0.1
    omega_c: float = 10.0
    delta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.s <= 1.0:
            raise ValueError(f"spectral exponent s must satisfy 0 < s <= 1, got {self.s}")
        if self.alpha < 0.0:
            raise ValueError(f"coupling alpha must be >= 0, got {self.alpha}")
        if self.omega_c <= 0.0:
            raise ValueError(f"cutoff omega_c must be > 0, got {self.omega_c}")
        if self.delta < 0.0:
            raise ValueError(f"tunneling delta must be >= 0, got {self.delta}")


@dataclass(frozen=True)
class GridParams:
    """Time grid ``t_n = n * dt`` with memory truncation ``dk_max``.

    ``dk_max=None`` keeps the full memory (equivalent to ``dk_max = n_steps``).
    """

    dt: float
    n_steps: int
    dk_max: Optional[int] = None

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.dk_max is not None and not 1 <= self.dk_max <= self.n_steps:
            raise ValueError(
                f"dk_max must satisfy 1 <= dk_max <= n_steps={self.n_steps}, got {self.dk_max}"
            )

    @property
    def memory(self) -> int:
        return self.n_steps if self.dk_max is None else self.dk_max


def spectral_density(omega, model: ModelParams):
    """``J(omega)`` for ``omega >= 0``; raises ``ValueError`` on negative input."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0 only")
    s, wc = model.s, model.omega_c
    out = 2.0 * model.alpha * omega**s * wc ** (1.0 - s) * np.exp(-omega / wc)
    return out if out.ndim else float(out)


def _binomial_series(x, s):
    """``[(1+x)^(1-s) - 1 - (1-s) x] / (1-s)`` by its Taylor series (|x| small).

    Finite at ``s = 1``, where it becomes ``log(1+x) - x``.
    """
    a = 1.0 - s
    coef = 1.0  # running prod_{k=1}^{n-1} (a - k), n = 1
    total = np.zeros_like(x, dtype=complex)
    xn = x.astype(complex)
    fact = 1.0
    for n in range(2, _SERIES_TERMS):
        coef *= a - (n - 1)
        fact *= n
        xn = xn * x
        total = total + coef / fact * xn
    return total


def _scaled_power_expm1(z, y, a):
    """``z^a * expm1(a * log1p(y)) / a`` with the ``a -> 0`` limit ``log1p(y)``."""
    ly = log1p(y)
    if a == 0.0:
        return ly
    return np.exp(a * np.log(z)) * np.expm1(a * ly) / a


class SpectralKernel:
    """Autocorrelation of the continuous bath, ``C(t) = K (1 + i wc t)^-(s+1)``
    with ``K = 2 alpha Gamma(s+1) wc^2``."""

    def __init__(self, model: ModelParams):
        self.model = model
        self.prefactor = 2.0 * model.alpha * gamma_fn(model.s + 1.0) * model.omega_c**2

    @property
    def c0(self) -> float:
        return float(self.prefactor)

    def correlation(self, t):
        t = np.asarray(t, dtype=float)
        s, wc = self.model.s, self.model.omega_c
        return self.prefactor * (1.0 + 1j * wc * t) ** (-(s + 1.0))

    def _scale(self) -> float:
        return self.prefactor / (self.model.s * self.model.omega_c**2)

    def triangle(self, h: float) -> complex:
        """``int_0^h dt' int_0^t' dt'' C(t' - t'')``."""
        if self.prefactor == 0.0:
            return 0j
        s, wc = self.model.s, self.model.omega_c
        x = np.array([1j * wc * h])
        if abs(x[0]) < _SERIES_RADIUS:
            g = _binomial_series(x, s)[0]
        else:
            g = _scaled_power_expm1(np.array([1.0 + 0j]), x, 1.0 - s)[0] - x[0]
        return complex(self._scale() * g)

    def cell_pairs(self, lags, h: float) -> np.ndarray:
        """Rectangle integrals over cells ``m`` and ``m - lag`` (``lag >= 1``)."""
        lags = np.asarray(lags, dtype=float)
        if self.prefactor == 0.0:
            return np.zeros(lags.shape, dtype=complex)
        s, wc = self.model.s, self.model.omega_c
        a = 1.0 - s

        def step(lag):
            # D((lag+1) h) - D(lag h) with D(u) = (1 + i wc u)^(1-s) / (1-s)
            z = 1.0 + 1j * wc * h * lag
            return _scaled_power_expm1(z, 1j * wc * h / z, a)

        return self._scale() * (step(lags) - step(lags - 1.0))


class ModeKernel:
    """Autocorrelation of a finite set of modes, ``C(t) = sum g_k^2 exp(-i w_k t)``."""

    def __init__(self, omegas: Sequence[float], couplings: Sequence[float]):
        self.omegas = np.asarray(omegas, dtype=float)
        self.couplings = np.asarray(couplings, dtype=float)
        if self.omegas.shape != self.couplings.shape:
            raise ValueError("omegas and couplings must have equal length")
        if np.any(self.omegas <= 0):
            raise ValueError("mode frequencies must be positive")

    @property
    def c0(self) -> float:
        return float(np.sum(self.couplings**2))

    def correlation(self, t):
        t = np.asarray(t, dtype=float)
        phase = np.exp(-1j * np.multiply.outer(t, self.omegas))
        return phase @ self.couplings**2

    def triangle(self, h: float) -> complex:
        x = self.omegas * h
        small = np.abs(x) < _SERIES_RADIUS
        f = np.empty(x.shape, dtype=complex)
        # f(x) = 1 - exp(-ix) - ix = -sum_{n>=2} (-ix)^n / n!
        xs = x[small]
        acc = np.zeros(xs.shape, dtype=complex)
        term = -1j * xs
        for n in range(2, _SERIES_TERMS):
            term = term * (-1j * xs) / n
            acc -= term
        f[small] = acc
        xl = x[~small]
        f[~small] = -np.expm1(-1j * xl) - 1j * xl
        return complex(np.sum(self.couplings**2 / self.omegas**2 * f))

    def cell_pairs(self, lags, h: float) -> np.ndarray:
        lags = np.asarray(lags, dtype=float)
        w = self.omegas
        weight = self.couplings**2 * (2.0 * np.sin(w * h / 2.0) / w) ** 2
        return np.exp(-1j * np.multiply.outer(lags, w * h)) @ weight


Kernel = Union[SpectralKernel, ModeKernel]


def _kernel(source) -> Kernel:
    if isinstance(source, (SpectralKernel, ModeKernel)):
        return source
    if isinstance(source, ModelParams):
        return SpectralKernel(source)
    raise TypeError(f"cannot build a bath kernel from {type(source).__name__}")


def autocorrelation(t, model: Union[ModelParams, Kernel]):
    """``C(t) = int_0^inf J(w) exp(-i w t) dw`` (closed form)."""
    out = _kernel(model).correlation(t)
    return out if np.ndim(out) else complex(out)


def contour_kernel_block(branch1: str, branch2: str, t1: float, t2: float, model) -> complex:
    """Zero-temperature ``<T_C A(t1^b1) A(t2^b2)>`` for Keldysh branches ``'+'``/``'-'``."""
    kern = _kernel(model)
    for b in (branch1, branch2):
        if b not in ("+", "-"):
            raise ValueError(f"branch tag must be '+' or '-', got {b!r}")
    c = lambda u: complex(kern.correlation(u))  # noqa: E731
    if branch1 == "+" and branch2 == "+":
        u = abs(t1 - t2)
        return c(u)
    if branch1 == "-" and branch2 == "-":
        return c(abs(t1 - t2)).conjugate()
    if branch1 == "+":
        # second argument on the backward branch is contour-later
        return c(t2 - t1)
    return c(t1 - t2)


@dataclass(frozen=True)
class _CellIntegrals:
    triangle: complex
    rect: np.ndarray  # rect[L] for L >= 1; rect[0] unused

    @classmethod
    def build(cls, kern: Kernel, h: float, max_lag: int) -> "_CellIntegrals":
        rect = np.zeros(max_lag + 1, dtype=complex)
        if max_lag >= 1:
            rect[1:] = kern.cell_pairs(np.arange(1, max_lag + 1), h)
        return cls(kern.triangle(h), rect)


@dataclass(frozen=True)
class BathKernelTable:
    """QUAPI coefficients ``eta_jk`` stored by lag ``L = j - k``.

    Four rows cover the window shapes that occur: ``bulk`` (both windows full),
    ``first`` (``k = 0``, half window at the start), ``last`` (``j = N``, half
    window at the end) and ``last_first`` (both).  Lags beyond ``dk_max`` are
    absent and read back as zero.
    """

    n_steps: int
    dk_max: int
    dt: float
    bulk: np.ndarray
    first: np.ndarray
    last: np.ndarray
    last_first: np.ndarray
    c0: float = 0.0

    @property
    def coupled_lag(self) -> int:
        """Largest lag with a nonzero coefficient in any row (0 if none)."""
        rows = np.stack([self.bulk, self.first, self.last, self.last_first])
        nz = np.nonzero(np.any(rows != 0, axis=0))[0]
        return int(nz[-1]) if nz.size else 0

    def coefficient(self, j: int, k: int, endpoint: Optional[bool] = None) -> complex:
        """``eta_jk`` for ``0 <= k <= j``; ``endpoint`` defaults to ``j == n_steps``."""
        if not 0 <= k <= j:
            raise IndexError(f"need 0 <= k <= j, got j={j}, k={k}")
        lag = j - k
        if lag > self.dk_max:
            return 0j
        if endpoint is None:
            endpoint = j == self.n_steps
        row = (self.last_first if k == 0 else self.last) if endpoint else (
            self.first if k == 0 else self.bulk)
        return complex(row[lag])

    def eta(self, j: int, k: int) -> complex:
        if j > self.n_steps:
            raise IndexError(f"j={j} beyond n_steps={self.n_steps}")
        return self.coefficient(j, k)

    def row(self, j: int, ks: Sequence[int], endpoint: bool = False) -> np.ndarray:
        return np.array([self.coefficient(j, k, endpoint) for k in ks], dtype=complex)

    def entries(self):
        """Yield ``(lag, j, k, eta)`` for every stored entry of the banded table."""
        n = self.n_steps
        for j in range(n + 1):
            for k in range(max(0, j - self.dk_max), j + 1):
                yield j - k, j, k, self.eta(j, k)


def _eta_rows(cells: _CellIntegrals, max_lag: int):
    r, t = cells.rect, cells.triangle
    bulk = np.zeros(max_lag + 1, dtype=complex)
    first = np.zeros(max_lag + 1, dtype=complex)
    last = np.zeros(max_lag + 1, dtype=complex)
    last_first = np.zeros(max_lag + 1, dtype=complex)
    bulk[0] = 2.0 * t + r[1]
    first[0] = t
    last[0] = t
    last_first[0] = 0.0  # N = 0: the single window has zero length
    for lag in range(1, max_lag + 1):
        bulk[lag] = r[2 * lag - 1] + 2.0 * r[2 * lag] + r[2 * lag + 1]
        first[lag] = r[2 * lag - 1] + r[2 * lag]
        last[lag] = r[2 * lag] + r[2 * lag - 1]
        last_first[lag] = r[2 * lag - 1]
    return bulk, first, last, last_first


def eta_table(model, grid: GridParams, kernel: Optional[Kernel] = None) -> BathKernelTable:
    """Influence-functional coefficients for the grid, with endpoint half windows."""
    kern = kernel if kernel is not None else _kernel(model)
    if isinstance(model, ModelParams) and grid.dt * model.omega_c > 2.0:
        warnings.warn(
            f"dt * omega_c = {grid.dt * model.omega_c:g} > 2: bath memory is under-resolved",
            stacklevel=2,
        )
    lag_max = grid.memory
    cells = _CellIntegrals.build(kern, grid.dt / 2.0, 2 * lag_max + 1)
    rows = _eta_rows(cells, lag_max)
    for row in rows:
        if not np.all(np.isfinite(row)):
            raise FloatingPointError("non-finite eta coefficient; check model parameters")
    return BathKernelTable(grid.n_steps, lag_max, grid.dt, *rows, c0=kern.c0)


@dataclass(frozen=True)
class ProbeKernelTable:
    """Probe coefficients pairing path point ``j`` with the insertion at step ``n_now``.

    The four arrays are indexed by ``j - first_index``.  ``gamma_pp`` and
    ``gamma_pm`` pair forward-branch path points with the insertion placed on
    the forward and backward branch respectively; ``gamma_mm`` and
    ``gamma_mp`` are their backward-branch counterparts.
    """

    n_now: int
    first_index: int
    dt: float
    gamma_pp: np.ndarray
    gamma_pm: np.ndarray
    gamma_mm: np.ndarray
    gamma_mp: np.ndarray
    lambda_self: float
    indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "indices", np.arange(self.first_index, self.n_now + 1))

    def forward_weight(self) -> np.ndarray:
        """Average coefficient multiplying ``s_j^+`` in the probe exponent."""
        return 0.5 * (self.gamma_pp + self.gamma_pm)

    def backward_weight(self) -> np.ndarray:
        return 0.5 * (self.gamma_mm + self.gamma_mp)


def gamma_table(model, grid: GridParams, n_now: int,
                kernel: Optional[Kernel] = None,
                first_index: Optional[int] = None) -> ProbeKernelTable:
    """Probe coefficients: window integrals over the insertion segment
    ``[(N - 1/2) dt, (N + 1/2) dt]`` divided by ``dt``.

    The path window of ``j = 0`` starts at ``t = 0``; the ``j = N`` entry is the
    ordered (triangular) integral over the insertion segment itself.
    ``first_index`` may narrow the covered points below the grid's memory.
    """
    if not 0 <= n_now <= grid.n_steps:
        raise ValueError(f"n_now must lie in [0, {grid.n_steps}], got {n_now}")
    kern = kernel if kernel is not None else _kernel(model)
    earliest = max(0, n_now - grid.memory)
    if first_index is None:
        first_index = earliest
    elif not earliest <= first_index <= n_now:
        raise ValueError(f"first_index must lie in [{earliest}, {n_now}], got {first_index}")
    lags = n_now - np.arange(first_index, n_now + 1)
    cells = _CellIntegrals.build(kern, grid.dt / 2.0, 2 * int(lags.max()) + 1)
    bulk, first, _, _ = _eta_rows(cells, int(lags.max()))
    raw = np.where(np.arange(first_index, n_now + 1) == 0, first[lags], bulk[lags])
    if n_now == 0:
        raw = np.array([bulk[0]])
    raw = raw / grid.dt
    return ProbeKernelTable(
        n_now=n_now,
        first_index=first_index,
        dt=grid.dt,
        gamma_pp=raw.copy(),
        gamma_pm=raw.copy(),
        gamma_mm=raw.conj(),
        gamma_mp=raw.conj(),
        lambda_self=kern.c0,
    )


def dump_eta_csv(table: BathKernelTable, path) -> None:
    """Write ``lag,j,k,re_eta,im_eta`` rows with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "j", "k", "re_eta", "im_eta"])
        for lag, j, k, value in table.entries():
            writer.writerow([lag, j, k, f"{value.real:.17g}", f"{value.imag:.17g}"])

