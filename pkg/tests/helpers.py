"""Scenario builders and naive reference implementations shared by the tests."""

import math

import numpy as np

from charm.channel import MultipathSet, SystemConfig, dft_pilots, steering_vector_u
from charm.estimator import aod_dictionary

TINY = SystemConfig(n_tx=8, n_rx=4, n_subcarriers=16)
SMALL = SystemConfig(n_tx=16, n_rx=8, n_subcarriers=32)


def identifiable_on_grid(cfg: SystemConfig, X: np.ndarray, rng, n_paths: int,
                         angle_range: float = math.pi / 3) -> MultipathSet:
    """On-grid paths that the ADPS and the pilots can resolve exactly.

    AoAs are at least one beamwidth apart, delays occupy distinct bins at
    least two bins apart, every AoD atom is visible under ``X`` and the
    gains stay within 3 dB of each other.
    """
    u_grid, v_grid, tau_grid = cfg.aoa_grid(), cfg.aod_grid(), cfg.delay_grid()
    u_lim = math.sin(angle_range)
    beam_bins = int(math.ceil(cfg.g_theta / cfg.n_rx))  # 2/n_rx in grid bins
    _, norms = aod_dictionary(cfg, X)
    visible = np.nonzero((norms > 1e-6) & (np.abs(v_grid) <= u_lim))[0]
    candidates_i = np.nonzero(np.abs(u_grid) <= u_lim)[0]
    while True:
        ii = rng.choice(candidates_i, size=n_paths, replace=False)
        if n_paths == 1 or np.min(np.diff(np.sort(ii))) >= beam_bins:
            break
    n_bins = min(cfg.g_tau, cfg.n_subcarriers // 4)
    jj = 2 * rng.choice(n_bins // 2, size=n_paths, replace=False)
    gg = rng.choice(visible, size=n_paths)
    mag = 10.0 ** (rng.uniform(-3.0, 0.0, n_paths) / 10.0)
    gains = mag * np.exp(2j * np.pi * rng.uniform(size=n_paths))
    return MultipathSet(gains=gains, aoa_sin=u_grid[ii], aod_sin=v_grid[gg], delays=tau_grid[jj])


def naive_channel(cfg: SystemConfig, paths: MultipathSet) -> np.ndarray:
    """Scalar triple loop over (k, rx, tx)."""
    H = np.zeros((cfg.n_subcarriers, cfg.n_rx, cfg.n_tx), complex)
    for k in range(cfg.n_subcarriers):
        for r in range(cfg.n_rx):
            for t in range(cfg.n_tx):
                acc = 0j
                for a, u, v, tau in zip(paths.gains, paths.aoa_sin, paths.aod_sin, paths.delays):
                    acc += (a * np.exp(-2j * np.pi * k * cfg.subcarrier_spacing * tau)
                            * np.exp(1j * np.pi * r * u) / math.sqrt(cfg.n_rx)
                            * np.exp(-1j * np.pi * t * v) / math.sqrt(cfg.n_tx))
                H[k, r, t] = acc
    return H


def naive_dirichlet(cfg: SystemConfig, tau: float) -> float:
    """Closed-form |sin(pi K x) / (K sin(pi x))| with x = tau * df."""
    x = tau * cfg.subcarrier_spacing
    K = cfg.n_subcarriers
    if abs(math.sin(math.pi * x)) < 1e-14:
        return 1.0
    return abs(math.sin(math.pi * K * x) / (K * math.sin(math.pi * x)))


def naive_adps(cfg: SystemConfig, radio_map: MultipathSet) -> np.ndarray:
    P = np.zeros((cfg.g_theta, cfg.g_tau))
    u_axis, tau_axis = cfg.aoa_grid(), cfg.delay_grid()
    for i, u in enumerate(u_axis):
        a_i = steering_vector_u(cfg.n_rx, u)
        for j, tau in enumerate(tau_axis):
            acc = 0.0
            for alpha, ul, taul in zip(radio_map.gains, radio_map.aoa_sin, radio_map.delays):
                spatial = abs(np.vdot(a_i, steering_vector_u(cfg.n_rx, ul))) ** 2
                acc += abs(alpha) ** 2 * spatial * naive_dirichlet(cfg, tau - taul) ** 2
            P[i, j] = acc
    return P


def naive_omp_scores(cfg: SystemConfig, residual: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Score of every (phi, tau, theta) atom by explicit atom construction."""
    k = np.arange(cfg.n_subcarriers)
    A_t = steering_vector_u(cfg.n_tx, cfg.aod_grid())
    A_r = steering_vector_u(cfg.n_rx, cfg.aoa_grid())
    scores = np.zeros((cfg.g_phi, cfg.g_tau, cfg.g_theta))
    r = residual.reshape(-1)
    for g in range(cfg.g_phi):
        pilot = np.array([np.vdot(A_t[:, g], X[:, t]) for t in range(X.shape[1])])
        for j, tau in enumerate(cfg.delay_grid()):
            delay = np.exp(-2j * np.pi * k * cfg.subcarrier_spacing * tau)
            for i in range(cfg.g_theta):
                atom = np.einsum("t,k,r->tkr", pilot, delay, A_r[:, i]).reshape(-1)
                norm2 = np.vdot(atom, atom).real
                if norm2 < 1e-12 * cfg.n_subcarriers:
                    continue
                scores[g, j, i] = abs(np.vdot(atom, r)) ** 2 / norm2
    return scores


def pilots(cfg, T, mode="evenly-spaced", seed=0):
    return dft_pilots(cfg, T, mode, seed)
