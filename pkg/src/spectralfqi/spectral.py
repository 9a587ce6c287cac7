"""PCA machinery for the high-frequency block ``z``.

Covariance is pooled over every observed state (all trajectories, all time
points) and uses the population denominator, so that scores computed on the
fitting data are exactly whitened.  The eigensolver is a cyclic Jacobi method
whose sweeps visit pairs in round-robin order; within one round the pairs are
disjoint, so the rotations commute and are applied together with array ops.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import TrajectoryDataset
from .errors import (
    DegenerateSpectrumError,
    DimensionError,
    InsufficientDataError,
    RankDeficiencyError,
    SchemaError,
    SymmetryError,
)

PSD_RTOL = 1e-8
RANK_RTOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Mean, eigenvalues (non-increasing) and eigenvectors (columns) of a covariance."""

    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sample_count: int = 0

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float)
        u = np.array(self.eigenvectors, dtype=float)
        mu = np.array(self.mean, dtype=float)
        m = lam.size
        if u.shape != (m, m) or mu.shape != (m,):
            raise DimensionError("mean, eigenvalues and eigenvectors disagree on m")
        if np.any(np.diff(lam) > 0):
            raise DegenerateSpectrumError("eigenvalues must be sorted non-increasing")
        if m and lam.min() < -PSD_RTOL * max(lam[0], 0.0) - 1e-300:
            raise DegenerateSpectrumError(
                f"matrix is not positive semidefinite (smallest eigenvalue {lam.min():.3e})")
        for name, arr in (("mean", mu), ("eigenvalues", lam), ("eigenvectors", u)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sample_count", int(self.sample_count))

    @property
    def m(self) -> int:
        return self.eigenvalues.size

    def covariance(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def explained_variance_ratio(self) -> np.ndarray:
        """Cumulative share of variance captured by the first ``k`` components, k=1..m."""
        lam = np.clip(self.eigenvalues, 0.0, None)
        total = lam.sum()
        if total <= 0:
            raise DegenerateSpectrumError("all eigenvalues are <= 0")
        return np.cumsum(lam) / total


def _as_rows(data) -> np.ndarray:
    if isinstance(data, TrajectoryDataset):
        return data.pooled_z()
    z = np.asarray(data, dtype=float)
    if z.ndim != 2:
        raise DimensionError("expected a dataset or an (n, m) array of z vectors")
    return z


def estimate_covariance(data) -> tuple[np.ndarray, np.ndarray]:
    """Pooled mean and population covariance of ``z``.

    ``data`` is a :class:`TrajectoryDataset` (every state at every time point
    is used) or an ``(n, m)`` array.
    """
    z = _as_rows(data)
    n = z.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {n}")
    mean = z.mean(axis=0)
    c = z - mean
    g = c.T @ c / n
    return mean, (g + g.T) / 2


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pair schedule where every (p, q) appears once per sweep, disjoint within a round."""
    n = m + (m % 2)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p, q = [], []
        for k in range(n // 2):
            a, b = players[k], players[n - 1 - k]
            if a < m and b < m:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=int), np.array(q, dtype=int)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def jacobi_eigh(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol * ||a||_F``.  Output is unsorted; columns of the second result are
    eigenvectors.
    """
    a = np.array(a, dtype=float)
    m = a.shape[0]
    v = np.eye(m)
    if m == 1:
        return a.diagonal().copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(m), v
    rounds = _round_robin(m)
    offdiag = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps):
        if np.linalg.norm(a[offdiag]) < tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                theta = (a[q, q] - a[p, p]) / (2.0 * safe)
                big = np.abs(theta) > 1e150
                root = np.sqrt(np.where(big, 1.0, theta * theta) + 1.0)
                t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                             np.sign(theta) / (np.abs(theta) + root))
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p], a[:, q]
            a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
            ap, aq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * ap - s[:, None] * aq, s[:, None] * ap + c[:, None] * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        a = (a + a.T) / 2
    return a.diagonal().copy(), v


def check_symmetric(g, atol: float = 1e-10) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {g.shape}")
    if np.max(np.abs(g - g.T), initial=0.0) > atol * max(1.0, np.max(np.abs(g), initial=0.0)):
        raise SymmetryError("matrix is not symmetric")
    return g


def eigendecompose(g, mean=None, sample_count: int = 0) -> SpectralBasis:
    """Spectral decomposition of a covariance matrix into a :class:`SpectralBasis`.

    Eigenvalues come out non-increasing; each eigenvector is flipped so that
    its largest-magnitude entry (lowest index on ties) is positive.
    """
    g = check_symmetric(g)
    g = (g + g.T) / 2
    lam, u = jacobi_eigh(g)
    order = np.argsort(-lam, kind="stable")
    lam, u = lam[order], u[:, order]
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    mean = np.zeros(g.shape[0]) if mean is None else mean
    return SpectralBasis(mean, lam, u, sample_count)


def fit_basis(data) -> SpectralBasis:
    """Covariance estimation followed by eigendecomposition."""
    z = _as_rows(data)
    mean, g = estimate_covariance(z)
    return eigendecompose(g, mean, z.shape[0])


def _check_kappa(basis: SpectralBasis, kappa: int) -> int:
    kappa = int(kappa)
    if not 1 <= kappa <= basis.m:
        raise DimensionError(f"kappa must be in 1..{basis.m}, got {kappa}")
    return kappa


def pc_scores(basis: SpectralBasis, z, kappa: int) -> np.ndarray:
    """Whitened scores ``(z - mean)^T U_k / sqrt(lambda_k)`` for k = 1..kappa.

    ``z`` may be one vector or an ``(n, m)`` array of rows.
    """
    kappa = _check_kappa(basis, kappa)
    lam = basis.eigenvalues
    if lam[kappa - 1] <= RANK_RTOL * lam[0]:
        raise RankDeficiencyError(
            f"eigenvalue {kappa} is {lam[kappa - 1]:.3e}, numerically zero relative to "
            f"the leading one ({lam[0]:.3e}); choose a smaller kappa")
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != basis.m:
        raise DimensionError(f"z has length {z.shape[-1]}, basis expects {basis.m}")
    return (z - basis.mean) @ basis.eigenvectors[:, :kappa] / np.sqrt(lam[:kappa])


def reconstruct(basis: SpectralBasis, z, kappa: int) -> np.ndarray:
    """Projection of ``z`` onto the mean plus the span of the first ``kappa`` eigenvectors."""
    kappa = _check_kappa(basis, kappa)
    z = np.asarray(z, dtype=float)
    u = basis.eigenvectors[:, :kappa]
    return basis.mean + ((z - basis.mean) @ u) @ u.T


def select_kappa(basis, threshold: float = 0.95) -> int:
    """Smallest number of components whose share of total variance reaches ``threshold``.

    ``basis`` may also be a plain sequence of eigenvalues.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    lam = basis.eigenvalues if isinstance(basis, SpectralBasis) else np.asarray(basis, dtype=float)
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if total <= 0:
        raise DegenerateSpectrumError("all eigenvalues are <= 0")
    ratio = np.cumsum(lam) / total
    hits = np.nonzero(ratio >= threshold - 1e-12)[0]
    return int(hits[0]) + 1 if hits.size else lam.size


def reconstruction_error_curve(basis: SpectralBasis, data, kappas: Sequence[int]):
    """``[(kappa, mean ||z - reconstruct(z, kappa)||^2), ...]`` over every state in ``data``."""
    z = _as_rows(data)
    out = []
    for k in kappas:
        resid = z - reconstruct(basis, z, k)
        out.append((int(k), float(np.mean(np.sum(resid * resid, axis=1)))))
    return out


def save_basis(basis: SpectralBasis, path) -> Path:
    path = Path(path)

    def row(vals):
        return " ".join(f"{v:.16e}" for v in vals)

    lines = [f"m={basis.m} sample_count={basis.sample_count}", row(basis.mean), row(basis.eigenvalues)]
    lines += [row(r) for r in basis.eigenvectors]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_basis(path) -> SpectralBasis:
    lines = Path(path).read_text().splitlines()
    try:
        head = dict(tok.split("=", 1) for tok in lines[0].split())
        m, count = int(head["m"]), int(head["sample_count"])
        rows = [np.array([float(v) for v in ln.split()]) for ln in lines[1:3 + m]]
    except (IndexError, KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed basis file ({exc})") from None
    if len(rows) != m + 2:
        raise SchemaError(f"{path}: expected {m + 2} data rows")
    return SpectralBasis(rows[0], rows[1], np.vstack(rows[2:]), count)
