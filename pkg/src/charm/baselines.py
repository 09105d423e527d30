"""Reference estimators: Joint OMP-3D, LMMSE-Kron and Kron-OMP."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .channel import RxObservations, SystemConfig, steering_vector_u, synthesize_from_params
from .errors import ConfigError, NumericError
from .estimator import ATOM_NORM_FLOOR, TIE_RTOL, EstimateResult, PathEstimate, aod_dictionary

# residual energy below this fraction of the observation energy counts as zero
NUMERIC_FLOOR = 1e-20


@dataclass(frozen=True)
class Omp3dConfig:
    """Greedy pursuit settings. ``max_iterations=None`` means ``min(n_rx, 16)``."""

    max_iterations: Optional[int] = None
    stop_at_noise_floor: bool = True

    def __post_init__(self):
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")

    def iterations_for(self, cfg: SystemConfig) -> int:
        return self.max_iterations if self.max_iterations is not None else min(cfg.n_rx, 16)


# ----------------------------------------------------------------------------
# Joint OMP over the (AoA, AoD, delay) dictionary


@dataclass(frozen=True, eq=False)
class Omp3dDictionary:
    A_r: np.ndarray        # (n_rx, g_theta)
    U: np.ndarray          # (T, g_phi), pilot-domain AoD responses
    u_norm2: np.ndarray    # (g_phi,)
    delay_fwd: np.ndarray  # (g_tau, K) = exp(+j 2 pi k df tau_j)

    @classmethod
    def build(cls, cfg: SystemConfig, X: np.ndarray) -> "Omp3dDictionary":
        U, norms = aod_dictionary(cfg, X)
        k = np.arange(cfg.n_subcarriers)
        fwd = np.exp(2j * np.pi * cfg.subcarrier_spacing * np.outer(cfg.delay_grid(), k))
        return cls(steering_vector_u(cfg.n_rx, cfg.aoa_grid()), U, norms, fwd)

    def response(self, cfg: SystemConfig, i: int, g: int, j: int) -> np.ndarray:
        """Atom response over (t, k, r), flattened."""
        return np.einsum("t,k,r->tkr", self.U[:, g], self.delay_fwd[j].conj(),
                         self.A_r[:, i]).reshape(-1)


def _delay_aoa_correlations(d: Omp3dDictionary, residual: np.ndarray) -> np.ndarray:
    """``C[t, j, i] = sum_k exp(+j2pi k df tau_j) a_r(u_i)^H r[t, k]``."""
    c1 = np.einsum("tkr,ri->tki", residual, d.A_r.conj(), optimize=True)
    return np.einsum("jk,tki->tji", d.delay_fwd, c1, optimize=True)


def omp3d_scores(cfg: SystemConfig, residual: np.ndarray, d: Omp3dDictionary) -> np.ndarray:
    """Normalized correlation of every atom with ``residual``, shape ``(g_phi, g_tau, g_theta)``.

    Materializes the full score cube; use only on small dictionaries.
    """
    c = _delay_aoa_correlations(d, residual)
    T = c.shape[0]
    s = np.abs(d.U.conj().T @ c.reshape(T, -1)) ** 2
    s = s.reshape(-1, cfg.g_tau, cfg.g_theta)
    valid = d.u_norm2 >= ATOM_NORM_FLOOR
    out = np.zeros_like(s)
    out[valid] = s[valid] / (d.u_norm2[valid, None, None] * cfg.n_subcarriers)
    return out


def _best_atom(cfg: SystemConfig, residual: np.ndarray, d: Omp3dDictionary):
    """Argmax of the atom scores, one AoD row at a time to stay cache-sized.

    Near-ties (within ``TIE_RTOL``) go to the lowest ``(g, j, i)`` index.
    """
    c = _delay_aoa_correlations(d, residual).reshape(residual.shape[0], -1)
    Uc = d.U.conj()
    norm = d.u_norm2 * cfg.n_subcarriers

    def row_scores(g):
        row = Uc[:, g] @ c
        return (row.real ** 2 + row.imag ** 2) / norm[g]

    valid = np.nonzero(d.u_norm2 >= ATOM_NORM_FLOOR)[0]
    if valid.size == 0:
        return None, 0.0
    row_max = np.array([row_scores(g).max() for g in valid])
    best = float(row_max.max())
    threshold = best * (1.0 - TIE_RTOL)
    g = int(valid[np.argmax(row_max >= threshold)])
    n = int(np.argmax(row_scores(g) >= threshold))
    j, i = divmod(n, cfg.g_theta)
    return (i, g, j), best


def _refit(Phi: np.ndarray, y: np.ndarray):
    coef, _, rank, _ = np.linalg.lstsq(Phi, y, rcond=None)
    return coef, rank


def joint_omp_3d(cfg: SystemConfig, rx: RxObservations, X: np.ndarray,
                 ocfg: Omp3dConfig = Omp3dConfig()) -> EstimateResult:
    """Classical OMP with joint least-squares refit over the 3-D dictionary."""
    t0 = time.perf_counter()
    d = Omp3dDictionary.build(cfg, X)
    y = rx.y
    y_flat = y.reshape(-1)
    y_energy = float(np.vdot(y_flat, y_flat).real)
    floor = y.size * rx.noise_var if ocfg.stop_at_noise_floor else 0.0
    floor = max(floor, NUMERIC_FLOOR * y_energy)

    residual = y.copy()
    atoms, columns, history = [], [], [y_energy]
    coef = np.zeros(0, complex)
    for _ in range(ocfg.iterations_for(cfg)):
        if history[-1] <= floor:
            break
        atom, _ = _best_atom(cfg, residual, d)
        if atom is None or atom in atoms:
            break
        Phi = np.column_stack(columns + [d.response(cfg, *atom)])
        new_coef, rank = _refit(Phi, y_flat)
        if rank < Phi.shape[1]:
            break  # singular Gram: drop the newest atom and stop
        atoms.append(atom)
        columns.append(Phi[:, -1])
        coef = new_coef
        r = y_flat - Phi @ coef
        residual = r.reshape(y.shape)
        history.append(float(np.vdot(r, r).real))

    u_axis, v_axis, tau_axis = cfg.aoa_grid(), cfg.aod_grid(), cfg.delay_grid()
    paths = [PathEstimate(g, float(v_axis[g]), complex(a), float(u_axis[i]), float(tau_axis[j]))
             for (i, g, j), a in zip(atoms, coef)]
    H_hat = synthesize_from_params(cfg, [p.gain for p in paths], [p.u_hat for p in paths],
                                   [p.aod_sin for p in paths], [p.tau_hat for p in paths])
    runtime_ms = (time.perf_counter() - t0) * 1e3
    return EstimateResult(H_hat, paths, runtime_ms,
                          info={"atoms": atoms, "residual_energy": history})


# ----------------------------------------------------------------------------
# Per-subcarrier OMP over the angle-only dictionary


def kron_omp(cfg: SystemConfig, rx: RxObservations, X: np.ndarray,
             ocfg: Omp3dConfig = Omp3dConfig()) -> EstimateResult:
    """Independent OMP on every subcarrier with atoms ``a_r(u_i) a_t(v_g)^H``."""
    t0 = time.perf_counter()
    K, T = cfg.n_subcarriers, rx.T
    A_r = steering_vector_u(cfg.n_rx, cfg.aoa_grid())
    U, u_norm2 = aod_dictionary(cfg, X)
    valid = u_norm2 >= ATOM_NORM_FLOOR
    Uc_valid = U.conj()[:, valid]
    valid_idx = np.nonzero(valid)[0]
    inv_norm = 1.0 / u_norm2[valid]

    # per-subcarrier observation Y_k[t, r], flattened to (T*n_rx,)
    Y = np.ascontiguousarray(rx.y.transpose(1, 0, 2)).reshape(K, -1)
    residual = Y.copy()
    energy0 = np.sum(np.abs(Y) ** 2, axis=1)
    floor = T * cfg.n_rx * rx.noise_var if ocfg.stop_at_noise_floor else 0.0
    floors = np.maximum(floor, NUMERIC_FLOOR * energy0)
    active = energy0 > floors
    atoms = [[] for _ in range(K)]
    columns = [[] for _ in range(K)]
    coefs = [np.zeros(0, complex) for _ in range(K)]

    for _ in range(ocfg.iterations_for(cfg)):
        ks = np.nonzero(active)[0]
        if ks.size == 0:
            break
        R = residual[ks].reshape(ks.size, T, cfg.n_rx)
        c1 = np.einsum("ktr,ri->kti", R, A_r.conj(), optimize=True)
        scores = np.abs(np.einsum("tg,kti->kgi", Uc_valid, c1, optimize=True)) ** 2
        scores *= inv_norm[None, :, None]
        flat = scores.reshape(ks.size, -1)
        flat = (flat >= flat.max(axis=1, keepdims=True) * (1.0 - TIE_RTOL)).argmax(axis=1)
        gi, ii = np.divmod(flat, cfg.g_theta)
        for k, g_local, i in zip(ks, gi, ii):
            atom = (int(i), int(valid_idx[g_local]))
            if atom in atoms[k]:
                active[k] = False
                continue
            col = np.outer(U[:, atom[1]], A_r[:, atom[0]]).reshape(-1)
            Phi = np.column_stack(columns[k] + [col])
            coef, rank = _refit(Phi, Y[k])
            if rank < Phi.shape[1]:
                active[k] = False
                continue
            atoms[k].append(atom)
            columns[k].append(col)
            coefs[k] = coef
            residual[k] = Y[k] - Phi @ coef
            if np.sum(np.abs(residual[k]) ** 2) <= floors[k]:
                active[k] = False

    u_axis, v_axis = cfg.aoa_grid(), cfg.aod_grid()
    A_t = steering_vector_u(cfg.n_tx, v_axis)
    H_hat = np.zeros((K, cfg.n_rx, cfg.n_tx), complex)
    for k in range(K):
        for (i, g), a in zip(atoms[k], coefs[k]):
            H_hat[k] += a * np.outer(A_r[:, i], A_t[:, g].conj())
    runtime_ms = (time.perf_counter() - t0) * 1e3
    paths = [PathEstimate(g, float(v_axis[g]), complex(a), float(u_axis[i]), float("nan"))
             for k in range(K) for (i, g), a in zip(atoms[k], coefs[k])]
    return EstimateResult(H_hat, paths, runtime_ms,
                          info={"atoms_per_subcarrier": [len(a) for a in atoms]})


# ----------------------------------------------------------------------------
# LMMSE with a Kronecker-structured covariance


@dataclass(frozen=True)
class LmmseConfig:
    training_set_size: int = 500
    covariance: str = "sample"  # or "oracle"

    def __post_init__(self):
        if self.covariance not in ("sample", "oracle"):
            raise ConfigError(f"covariance must be 'sample' or 'oracle', got {self.covariance!r}")
        if self.training_set_size < 1:
            raise ConfigError("training_set_size must be >= 1")


@dataclass(frozen=True, eq=False)
class KronCovariance:
    """``Cov(vec H) = R_t^T kron R_r`` (column-stacked ``vec``)."""

    R_t: np.ndarray  # (n_tx, n_tx)
    R_r: np.ndarray  # (n_rx, n_rx)

    def full(self) -> np.ndarray:
        return np.kron(self.R_t.T, self.R_r)


def _check_psd(name: str, R: np.ndarray):
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(R, R.conj().T, atol=1e-10 * max(1.0, np.abs(R).max())):
        raise NumericError(f"{name} is not Hermitian")
    w = np.linalg.eigvalsh(R)
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise NumericError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3g})")


def sample_kron_covariance(channels: Iterable[np.ndarray]) -> KronCovariance:
    """Kronecker factors from sample spatial covariances, averaged over subcarriers.

    With ``C_tx = E[H^H H]``, ``C_rx = E[H H^H]`` and ``p = tr C_rx`` the
    Kronecker model gives ``Cov(vec H) = C_tx^T kron C_rx / p``.
    """
    c_tx = c_rx = None
    count = 0
    for H in channels:
        H = np.asarray(H)
        tx = np.einsum("kri,krj->ij", H.conj(), H)
        rx = np.einsum("kir,kjr->ij", H, H.conj())
        c_tx = tx if c_tx is None else c_tx + tx
        c_rx = rx if c_rx is None else c_rx + rx
        count += H.shape[0]
    if count == 0:
        raise ValueError("empty training set")
    c_tx /= count
    c_rx /= count
    p = float(np.trace(c_rx).real)
    if p <= 0:
        raise NumericError("training channels have zero power")
    return KronCovariance(c_tx, c_rx / p)


def oracle_kron_covariance(cfg: SystemConfig, angle_range: float, n_nodes: int = 512) -> KronCovariance:
    """Covariance of a unit-power channel with AoA/AoD uniform in ``[-angle_range, angle_range]``.

    ``R = E[a(theta) a(theta)^H]`` by Gauss-Legendre quadrature on each side.
    """
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    theta = angle_range * x
    w = w / w.sum()

    def expected_outer(n):
        A = steering_vector_u(n, np.sin(theta))
        return (A * w) @ A.conj().T

    return KronCovariance(expected_outer(cfg.n_tx), expected_outer(cfg.n_rx))


def lmmse_kron(cfg: SystemConfig, rx: RxObservations, X: np.ndarray,
               cov: KronCovariance, lcfg: Optional[LmmseConfig] = None) -> EstimateResult:
    """Per-subcarrier LMMSE, ``h = C A^H (A C A^H + s2 I)^-1 y`` with ``A = X^T kron I``.

    Evaluated through the eigendecompositions of the two Kronecker factors
    so the ``(n_tx n_rx)``-sized covariance is never formed.
    """
    t0 = time.perf_counter()
    R_t, R_r = np.asarray(cov.R_t), np.asarray(cov.R_r)
    if R_t.shape != (cfg.n_tx, cfg.n_tx) or R_r.shape != (cfg.n_rx, cfg.n_rx):
        raise ValueError("covariance factor shapes do not match config")
    _check_psd("R_t", R_t)
    _check_psd("R_r", R_r)
    X = np.asarray(X)
    # A C A^H = (X^T R_t^T X^*) kron R_r
    B = X.T @ R_t.T @ X.conj()
    lam1, Q1 = np.linalg.eigh((B + B.conj().T) / 2)
    lam2, Q2 = np.linalg.eigh((R_r + R_r.conj().T) / 2)
    D = lam2[:, None] * lam1[None, :] + rx.noise_var  # (n_rx, T)
    inv_D = np.divide(1.0, D, out=np.zeros_like(D), where=np.abs(D) > 1e-300)

    Y = rx.y.transpose(1, 2, 0)  # (K, n_rx, T): Y_k = H_k X
    V = Q2.conj().T @ Y @ Q1.conj()
    V = Q2 @ (V * inv_D) @ Q1.T
    H_hat = R_r @ V @ X.conj().T @ R_t
    runtime_ms = (time.perf_counter() - t0) * 1e3
    return EstimateResult(H_hat, [], runtime_ms)
