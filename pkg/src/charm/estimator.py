"""Online phase of the radio-map-aided estimator.

Given the offline AoA/delay support, the received pilots are projected onto
the support's receive steering vectors, delay-compensated and averaged over
subcarriers, and each path's AoD is found by a one-dimensional dictionary
search. The channel is then rebuilt from the per-path parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .adps import PathSupport, extract_support
from .channel import MultipathSet, RxObservations, SystemConfig, steering_vector_u, synthesize_from_params
from .errors import ConfigError, EmptySupportError, ProjectionError

ATOM_NORM_FLOOR = 1e-12
# metrics this close to the maximum count as ties; the lowest index wins
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class EstimatorConfig:
    tikhonov_lambda: float = 1e-2
    condition_threshold: float = 100.0

    def __post_init__(self):
        if not self.tikhonov_lambda > 0:
            raise ConfigError("tikhonov_lambda must be > 0")
        if not self.condition_threshold > 1:
            raise ConfigError("condition_threshold must be > 1")


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    W: np.ndarray  # (L, n_rx); row l is w_l^H
    regularized: bool
    kappa: float


@dataclass(frozen=True)
class PathEstimate:
    aod_index: int
    aod_sin: float
    gain: complex
    u_hat: float
    tau_hat: float

    @property
    def aod(self) -> float:
        return float(np.arcsin(self.aod_sin))


@dataclass(eq=False)
class EstimateResult:
    """Channel estimate plus timing and diagnostics.

    ``runtime_ms`` covers the online phase only; offline work (ADPS,
    covariance training) is reported separately in ``offline_ms``.
    """

    H_hat: np.ndarray
    paths: list = field(default_factory=list)
    runtime_ms: float = 0.0
    offline_ms: float = 0.0
    kappa: float = float("nan")
    regularized: bool = False
    noise_var_z: Optional[np.ndarray] = None
    support: Optional[PathSupport] = None
    info: dict = field(default_factory=dict)

    @property
    def support_size(self) -> int:
        return len(self.paths)


def build_projection(cfg: SystemConfig, support: PathSupport,
                     ecfg: EstimatorConfig = EstimatorConfig()) -> ProjectionMatrix:
    """Least-squares separation of the support's receive directions.

    Falls back to power-weighted Tikhonov regularization when the Gram
    matrix condition number exceeds ``ecfg.condition_threshold``.
    """
    L = len(support)
    if L < 1:
        raise EmptySupportError("empty support")
    if L > cfg.n_rx:
        raise ProjectionError(f"support of {L} paths exceeds n_rx={cfg.n_rx}")
    A = steering_vector_u(cfg.n_rx, support.u_hat)
    gram = A.conj().T @ A
    kappa = float(np.linalg.cond(gram, 2))
    regularized = not kappa <= ecfg.condition_threshold
    if regularized:
        powers = support.powers
        if np.any(powers <= 0):
            raise ProjectionError("regularization needs positive peak powers")
        gram = gram + ecfg.tikhonov_lambda * np.diag(1.0 / powers)
    try:
        W = np.linalg.solve(gram, A.conj().T)
    except np.linalg.LinAlgError as exc:
        raise ProjectionError(f"singular projection system (kappa={kappa:.3g}, "
                              f"regularized={regularized})") from exc
    if not np.all(np.isfinite(W)):
        raise ProjectionError(f"non-finite projection (kappa={kappa:.3g})")
    return ProjectionMatrix(W, regularized, kappa)


def project_and_compensate(cfg: SystemConfig, rx: RxObservations, W: np.ndarray,
                           support: PathSupport) -> np.ndarray:
    """Per-path pilot-domain observations ``zbar`` of shape ``(L, T)``."""
    if isinstance(W, ProjectionMatrix):
        W = W.W
    y = rx.y
    if y.shape[1:] != (cfg.n_subcarriers, cfg.n_rx):
        raise ValueError(f"observation shape {y.shape} does not match config")
    z = np.einsum("lr,tkr->ltk", W, y)
    k = np.arange(cfg.n_subcarriers)
    comp = np.exp(2j * np.pi * cfg.subcarrier_spacing * np.outer(support.tau_hat, k))  # (L, K)
    return np.einsum("ltk,lk->lt", z, comp) / cfg.n_subcarriers


def aod_dictionary(cfg: SystemConfig, X: np.ndarray):
    """Pilot-domain AoD atoms ``U[t, g] = a_t(phi_g)^H x_t`` and their squared norms.

    This is the factor a path with AoD ``phi_g`` contributes to ``H[k] x_t``.
    """
    A_t = steering_vector_u(cfg.n_tx, cfg.aod_grid())
    U = np.asarray(X).T @ A_t.conj()
    return U, np.sum(np.abs(U) ** 2, axis=0)


def aod_search(cfg: SystemConfig, zbar: np.ndarray, X: np.ndarray,
               ecfg: EstimatorConfig = EstimatorConfig(), *, dictionary=None,
               u_hat: float = float("nan"), tau_hat: float = float("nan")) -> PathEstimate:
    """Pick the AoD atom maximizing ``|u_g^H zbar|^2 / ||u_g||^2`` and its LS gain."""
    U, norms = dictionary if dictionary is not None else aod_dictionary(cfg, X)
    valid = norms >= ATOM_NORM_FLOOR
    if not np.any(valid):
        raise ProjectionError("every AoD atom vanishes under this pilot matrix")
    corr = U.conj().T @ np.asarray(zbar)
    metric = np.full(norms.shape, -np.inf)
    metric[valid] = np.abs(corr[valid]) ** 2 / norms[valid]
    g = int(np.argmax(metric >= metric.max() * (1.0 - TIE_RTOL)))
    return PathEstimate(g, float(cfg.aod_grid()[g]), complex(corr[g] / norms[g]),
                        float(u_hat), float(tau_hat))


def reconstruct(cfg: SystemConfig, estimates: Sequence[PathEstimate]) -> np.ndarray:
    if len(estimates) < 1:
        raise ValueError("need at least one path estimate")
    return synthesize_from_params(
        cfg,
        [e.gain for e in estimates],
        [e.u_hat for e in estimates],
        [e.aod_sin for e in estimates],
        [e.tau_hat for e in estimates],
    )


def charm_estimate(cfg: SystemConfig, ecfg: EstimatorConfig, radio_map: Optional[MultipathSet],
                   rx: RxObservations, X: np.ndarray, refine: bool = True, trust: bool = False,
                   support: Optional[PathSupport] = None) -> EstimateResult:
    """Full pipeline: offline support extraction, then the timed online phase.

    A precomputed ``support`` skips the offline step.
    """
    t0 = time.perf_counter()
    if support is None:
        support = extract_support(cfg, radio_map, refine=refine, trust=trust)
    offline_ms = (time.perf_counter() - t0) * 1e3
    if len(support) == 0:
        raise EmptySupportError("support extraction returned no paths")

    t1 = time.perf_counter()
    proj = build_projection(cfg, support, ecfg)
    zbar = project_and_compensate(cfg, rx, proj.W, support)
    dictionary = aod_dictionary(cfg, X)
    estimates = [
        aod_search(cfg, zbar[l], X, ecfg, dictionary=dictionary,
                   u_hat=peak.u_hat, tau_hat=peak.tau_hat)
        for l, peak in enumerate(support.peaks)
    ]
    H_hat = reconstruct(cfg, estimates)
    runtime_ms = (time.perf_counter() - t1) * 1e3

    noise_var_z = np.sum(np.abs(proj.W) ** 2, axis=1) * rx.noise_var
    return EstimateResult(H_hat, estimates, runtime_ms, offline_ms, proj.kappa,
                          proj.regularized, noise_var_z, support)
