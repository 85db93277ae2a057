"""Small tensor-train toolkit over the 4-valued composite path index.

Site tensors of an MPS have legs ``(left, phys, right)``; MPO tensors have
``(left, phys_out, phys_in, right)``.  Values are treated as immutable: every
operation returns new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

__all__ = [
    "PHYS_DIM",
    "SIGMA_PLUS",
    "SIGMA_MINUS",
    "CompressionParams",
    "Mps",
    "Mpo",
    "svd_compress",
    "apply_mpo",
    "attach_site",
    "trace_out_site",
    "contract_all",
    "contract_open_tail",
    "compose",
    "diagonal_mpo",
    "product_mps",
]

PHYS_DIM = 4
# composite index (sigma+, sigma-): 0 -> (+,+), 1 -> (+,-), 2 -> (-,+), 3 -> (-,-)
SIGMA_PLUS = np.array([1.0, 1.0, -1.0, -1.0])
SIGMA_MINUS = np.array([1.0, -1.0, 1.0, -1.0])


@dataclass(frozen=True)
class CompressionParams:
    """Relative singular-value cutoff and optional bond-dimension cap."""

    epsilon: float = 1e-11
    chi_max: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must satisfy 0 <= epsilon < 1, got {self.epsilon}")
        if self.chi_max is not None and self.chi_max < 1:
            raise ValueError(f"chi_max must be a positive integer, got {self.chi_max}")


def _check_chain(tensors, ndim):
    for i, t in enumerate(tensors):
        if t.ndim != ndim:
            raise ValueError(f"site {i}: expected a rank-{ndim} tensor, got shape {t.shape}")
    for i in range(len(tensors) - 1):
        if tensors[i].shape[-1] != tensors[i + 1].shape[0]:
            raise ValueError(
                f"bond mismatch between sites {i} and {i + 1}: "
                f"{tensors[i].shape[-1]} != {tensors[i + 1].shape[0]}")
    if tensors and (tensors[0].shape[0] != 1 or tensors[-1].shape[-1] != 1):
        raise ValueError("open boundary bonds must have dimension 1")


def _as_numeric(t) -> np.ndarray:
    """Keep real and complex float arrays as they are; promote anything else."""
    arr = np.asarray(t)
    if arr.dtype not in (np.float64, np.complex128):
        arr = arr.astype(np.complex128 if np.iscomplexobj(arr) else np.float64)
    return arr


@dataclass(frozen=True)
class Mps:
    """Open-boundary tensor train; sites may be real or complex."""

    sites: Tuple[np.ndarray, ...]
    canonical_center: Optional[int] = None

    def __post_init__(self):
        sites = tuple(_as_numeric(s) for s in self.sites)
        object.__setattr__(self, "sites", sites)
        _check_chain(sites, 3)

    def __len__(self):
        return len(self.sites)

    @property
    def bond_dims(self) -> List[int]:
        return [s.shape[-1] for s in self.sites[:-1]]

    def to_dense(self) -> np.ndarray:
        """Full coefficient tensor with one axis per site (small chains only)."""
        if not self.sites:
            return np.ones(())
        out = self.sites[0][0]
        for t in self.sites[1:]:
            out = np.tensordot(out, t, axes=(-1, 0))
        return out[..., 0]


@dataclass(frozen=True)
class Mpo:
    sites: Tuple[np.ndarray, ...]

    def __post_init__(self):
        sites = tuple(_as_numeric(s) for s in self.sites)
        object.__setattr__(self, "sites", sites)
        _check_chain(sites, 4)

    def __len__(self):
        return len(self.sites)

    def to_dense(self) -> np.ndarray:
        """Operator as a matrix acting on the flattened MPS index (small chains only)."""
        n = len(self.sites)
        out = self.sites[0][0]
        for t in self.sites[1:]:
            out = np.tensordot(out, t, axes=(-1, 0))
        out = out[..., 0]
        # axes now (o1, i1, o2, i2, ...); reorder to (o..., i...)
        perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
        out = out.transpose(perm)
        dim = PHYS_DIM**n
        return out.reshape(dim, dim)


def product_mps(vectors: Sequence[np.ndarray]) -> Mps:
    return Mps(tuple(_as_numeric(v).reshape(1, -1, 1) for v in vectors))


def diagonal_mpo(weights: Sequence[np.ndarray]) -> Mpo:
    """Bond-dimension-1 MPO multiplying site ``k`` by ``weights[k][sigma_k]``."""
    return Mpo(tuple(np.diag(np.asarray(w, dtype=complex)).reshape(1, PHYS_DIM, PHYS_DIM, 1)
                     for w in weights))


def _fix_signs(u, vh):
    """Make the largest-magnitude entry of each left singular vector real positive."""
    idx = np.argmax(np.abs(u), axis=0)
    pivots = u[idx, np.arange(u.shape[1])]
    phase = np.ones_like(pivots)
    nz = np.abs(pivots) > 0
    phase[nz] = pivots[nz].conj() / np.abs(pivots[nz])
    return u * phase, vh * phase.conj()[:, None]


def _truncation_rank(sv, comp: CompressionParams) -> int:
    if sv.size == 0 or sv[0] == 0.0:
        return 1
    keep = int(np.count_nonzero(sv >= comp.epsilon * sv[0]))
    if comp.chi_max is not None:
        keep = min(keep, comp.chi_max)
    return max(keep, 1)


def _left_qr_sweep(sites: List[np.ndarray]) -> None:
    for i in range(len(sites) - 1):
        dl, d, dr = sites[i].shape
        q, r = np.linalg.qr(sites[i].reshape(dl * d, dr))
        sites[i] = q.reshape(dl, d, q.shape[1])
        sites[i + 1] = np.tensordot(r, sites[i + 1], axes=(1, 0))


def _right_svd_sweep(sites: List[np.ndarray], comp: CompressionParams) -> float:
    """Truncating right-to-left sweep; assumes sites ``[0, n-1)`` left-orthonormal."""
    worst = 0.0
    for i in range(len(sites) - 1, 0, -1):
        dl, d, dr = sites[i].shape
        u, sv, vh = np.linalg.svd(sites[i].reshape(dl, d * dr), full_matrices=False)
        u, vh = _fix_signs(u, vh)
        keep = _truncation_rank(sv, comp)
        total = float(np.sum(sv**2))
        if total > 0.0:
            worst = max(worst, float(np.sum(sv[keep:] ** 2)) / total)
        sites[i] = vh[:keep].reshape(keep, d, dr)
        sites[i - 1] = np.tensordot(sites[i - 1], u[:, :keep] * sv[:keep], axes=(2, 0))
    return worst


def _check_finite_sites(sites):
    for t in sites:
        if not np.all(np.isfinite(t)):
            raise FloatingPointError("non-finite entries in MPS before compression")


def svd_compress(state: Mps, comp: CompressionParams) -> Tuple[Mps, float]:
    """Left-to-right QR sweep followed by a truncating right-to-left SVD sweep.

    At every bond, singular values below ``epsilon * max`` are dropped and at
    most ``chi_max`` are kept.  Returns the compressed state (right-canonical,
    centre at site 0) and the largest discarded weight fraction over bonds.
    """
    sites = list(state.sites)
    if not sites:
        return state, 0.0
    _check_finite_sites(sites)
    _left_qr_sweep(sites)
    worst = _right_svd_sweep(sites, comp)
    return Mps(tuple(sites), canonical_center=0), worst


# the zip-up pass keeps pivots this far below the final cutoff
_ZIP_MARGIN = 1e-3


def _zip_up(op: Mpo, state: Mps, comp: CompressionParams) -> List[np.ndarray]:
    """Apply ``op`` left to right, splitting each site by a pivoted QR as it is
    formed.

    The result is left-orthonormal up to the last site.  Rows of ``R`` whose
    pivot falls below ``epsilon * _ZIP_MARGIN`` of the first are dropped; the
    trailing block is bounded by its leading pivot, so this only removes
    directions the final SVD sweep would discard anyway, while keeping the
    intermediate bonds near their final size instead of the product of MPS
    and MPO bonds.
    """
    loose = comp.epsilon * _ZIP_MARGIN
    carry = np.ones((1, 1, 1))  # (new bond, mps bond, mpo bond)
    out = []
    n = len(state)
    for k, (a, w) in enumerate(zip(state.sites, op.sites)):
        t = np.tensordot(carry, a, axes=(1, 0))  # (x, wl, i, r)
        t = np.tensordot(t, w, axes=([1, 2], [0, 2]))  # (x, r, o, wr)
        t = t.transpose(0, 2, 1, 3)
        x, d, r, wr = t.shape
        if k == n - 1:
            out.append(t.reshape(x, d, r * wr))
            break
        q, rr, piv = scipy.linalg.qr(t.reshape(x * d, r * wr), mode="economic",
                                     pivoting=True, check_finite=False)
        diag = np.abs(np.diagonal(rr))
        keep = max(1, int(np.count_nonzero(diag > loose * diag[0]))) if diag[0] > 0 else 1
        if loose == 0.0:
            keep = rr.shape[0]
        body = np.empty((keep, r * wr), dtype=rr.dtype)
        body[:, piv] = rr[:keep]
        out.append(q[:, :keep].reshape(x, d, keep))
        carry = body.reshape(keep, r, wr)
    return out


def apply_mpo(op: Mpo, state: Mps, comp: Optional[CompressionParams] = None) -> Mps:
    """Apply ``op`` to ``state``; compress afterwards unless ``comp`` is None.

    With ``comp`` the product is formed by a zip-up pass and then truncated by
    the same right-to-left sweep as :func:`svd_compress`.
    """
    if len(op) != len(state):
        raise ValueError(f"MPO has {len(op)} sites but MPS has {len(state)}")
    if comp is not None:
        _check_finite_sites(state.sites)
        sites = _zip_up(op, state, comp)
        _right_svd_sweep(sites, comp)
        return Mps(tuple(sites), canonical_center=0)
    out = []
    for w, a in zip(op.sites, state.sites):
        # w: (wl, o, i, wr), a: (al, i, ar) -> (al, wl, o, ar, wr)
        t = np.einsum("aoib,lir->laorb", w, a)
        al, wl, d, ar, wr = t.shape
        out.append(t.reshape(al * wl, d, ar * wr))
    return Mps(tuple(out))


def compose(second: Mpo, first: Mpo) -> Mpo:
    """MPO for ``second @ first``."""
    if len(second) != len(first):
        raise ValueError("MPO site counts differ")
    out = []
    for b, a in zip(second.sites, first.sites):
        t = np.einsum("aoxb,cxid->acoibd", b, a)
        bl, al, o, i, br, ar = t.shape
        out.append(t.reshape(bl * al, o, i, br * ar))
    return Mpo(tuple(out))


def attach_site(state: Mps, tensor: np.ndarray, end: str = "tail") -> Mps:
    """Append ``tensor`` at the head or tail of the chain."""
    tensor = _as_numeric(tensor)
    if tensor.ndim != 3:
        raise ValueError(f"site tensor must be rank 3, got shape {tensor.shape}")
    if end not in ("head", "tail"):
        raise ValueError(f"end must be 'head' or 'tail', got {end!r}")
    if not state.sites:
        return Mps((tensor,))
    if end == "tail":
        return Mps(state.sites + (tensor,))
    return Mps((tensor,) + state.sites)


def trace_out_site(state: Mps, index: int, weights: np.ndarray) -> Mps:
    """Contract the physical leg of site ``index`` with ``weights`` and absorb the
    leftover bond matrix into a neighbour."""
    n = len(state)
    if not 0 <= index < n:
        raise IndexError(f"site index {index} out of range for {n} sites")
    if n == 1:
        raise ValueError("cannot remove the only site; use contract_all")
    sites = list(state.sites)
    mat = np.tensordot(sites[index], np.asarray(weights), axes=(1, 0))
    del sites[index]
    if index < n - 1:
        sites[index] = np.tensordot(mat, sites[index], axes=(1, 0))
    else:
        sites[index - 1] = np.tensordot(sites[index - 1], mat, axes=(2, 0))
    return Mps(tuple(sites))


def _sandwich_env(state: Mps, op: Optional[Mpo], weights, stop: int):
    """Left environment over sites ``[0, stop)`` with legs ``(mps_bond, mpo_bond)``."""
    env = np.ones((1, 1))
    for k in range(stop):
        a = state.sites[k]
        w = np.asarray(weights[k])
        if op is None:
            env = np.tensordot(np.tensordot(a, w, axes=(1, 0)), env, axes=(0, 0))
        else:
            ow = np.tensordot(w, op.sites[k], axes=(0, 1))  # (ml, in, mr)
            t = np.tensordot(env, a, axes=(0, 0))  # (m, i, r)
            env = np.tensordot(t, ow, axes=([0, 1], [0, 1]))  # (r, mr)
    return env


def contract_all(state: Mps, per_site_weights: Sequence[np.ndarray],
                 op: Optional[Mpo] = None) -> complex:
    """``sum_sigma prod_k w_k(sigma_k) [op psi](sigma)``."""
    if len(per_site_weights) != len(state):
        raise ValueError(
            f"got {len(per_site_weights)} weight vectors for {len(state)} sites")
    if op is not None and len(op) != len(state):
        raise ValueError("MPO and MPS site counts differ")
    env = _sandwich_env(state, op, per_site_weights, len(state))
    return complex(env[0, 0])


def contract_open_tail(state: Mps, per_site_weights: Sequence[np.ndarray],
                       op: Optional[Mpo] = None) -> np.ndarray:
    """Like :func:`contract_all` but leaves the last physical index open."""
    n = len(state)
    if len(per_site_weights) != n - 1:
        raise ValueError(f"need {n - 1} weight vectors for the closed sites")
    env = _sandwich_env(state, op, per_site_weights, n - 1)
    a = state.sites[-1]
    if op is None:
        return np.einsum("lm,lir->i", env, a)
    o = op.sites[-1]
    return np.einsum("lm,lir,moiz->o", env, a, o)
