"""Offline phase: angular-delay power spectrum and support extraction.

The ADPS is a ``g_theta x g_tau`` power map over (sin-AoA, delay) built
from a path-level radio map. Its dominant local maxima, optionally refined
by three-point parabolic interpolation and clipped to a half-bin trust
region, give the AoA/delay support used by the online estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from .channel import MultipathSet, SystemConfig, steering_vector_u
from .errors import EmptySupportError

DEFAULT_THRESHOLD_DB = 10.0
FLAT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AdpsGrid:
    power: np.ndarray  # (g_theta, g_tau)
    u_axis: np.ndarray
    tau_axis: np.ndarray
    du: float
    dtau: float

    @property
    def shape(self):
        return self.power.shape


@dataclass(frozen=True)
class PeakRecord:
    i: int
    j: int
    u_grid: float
    tau_grid: float
    power: float
    u_ref: float
    tau_ref: float
    u_hat: float
    tau_hat: float

    @property
    def theta_grid(self) -> float:
        return float(np.arcsin(self.u_grid))

    @property
    def theta_hat(self) -> float:
        # refinement at the grid edge may step past +/-1; fold back into one period
        return float(np.arcsin(np.clip((self.u_hat + 1.0) % 2.0 - 1.0, -1.0, 1.0)))

    def to_dict(self) -> dict:
        return {
            "i": self.i, "j": self.j,
            "u_grid": self.u_grid, "tau_grid": self.tau_grid, "power": self.power,
            "u_ref": self.u_ref, "tau_ref": self.tau_ref,
            "u_hat": self.u_hat, "tau_hat": self.tau_hat,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PeakRecord":
        return cls(int(data["i"]), int(data["j"]), float(data["u_grid"]),
                   float(data["tau_grid"]), float(data["power"]), float(data["u_ref"]),
                   float(data["tau_ref"]), float(data["u_hat"]), float(data["tau_hat"]))


@dataclass(frozen=True)
class PathSupport:
    """Extracted peaks sorted by power (descending) plus provenance flags."""

    peaks: tuple
    refined: bool = False
    trust_clipped: bool = False

    def __len__(self):
        return len(self.peaks)

    @property
    def u_hat(self) -> np.ndarray:
        return np.array([p.u_hat for p in self.peaks], float)

    @property
    def tau_hat(self) -> np.ndarray:
        return np.array([p.tau_hat for p in self.peaks], float)

    @property
    def powers(self) -> np.ndarray:
        return np.array([p.power for p in self.peaks], float)

    def to_dict(self) -> dict:
        return {
            "refined": self.refined,
            "trust_clipped": self.trust_clipped,
            "peaks": [p.to_dict() for p in self.peaks],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PathSupport":
        return cls(tuple(PeakRecord.from_dict(p) for p in data["peaks"]),
                   bool(data["refined"]), bool(data["trust_clipped"]))


def l_max_for(cfg: SystemConfig) -> int:
    return min(cfg.n_rx, 16)


def dirichlet_k(cfg: SystemConfig, tau) -> np.ndarray:
    """Normalized K-point Dirichlet kernel ``|sum_k exp(-j 2 pi k df tau)| / K``.

    Evaluated as the explicit phase sum, which is exact at the kernel's
    nulls and periodic with period ``1/df``.
    """
    tau = np.asarray(tau, dtype=float)
    k = np.arange(cfg.n_subcarriers)
    # reduce the phase argument modulo one period first to keep it accurate
    x = np.mod(tau * cfg.subcarrier_spacing, 1.0)
    total = np.exp(-2j * np.pi * np.multiply.outer(x, k)).sum(axis=-1)
    return np.abs(total) / cfg.n_subcarriers


def build_adps(cfg: SystemConfig, radio_map: MultipathSet) -> AdpsGrid:
    """``P[i, j] = sum_l |alpha_l|^2 |a_r(u_i)^H a_r(u_l)|^2 D_K(tau_j - tau_l)^2``."""
    if len(radio_map) < 1:
        raise ValueError("radio map is empty")
    u_axis = cfg.aoa_grid()
    tau_axis = cfg.delay_grid()
    A_grid = steering_vector_u(cfg.n_rx, u_axis)
    A_path = steering_vector_u(cfg.n_rx, radio_map.aoa_sin)
    spatial = np.abs(A_grid.conj().T @ A_path) ** 2  # (g_theta, L)
    delay = dirichlet_k(cfg, tau_axis[:, None] - radio_map.delays[None, :]) ** 2  # (g_tau, L)
    power = (spatial * np.abs(radio_map.gains) ** 2) @ delay.T
    return AdpsGrid(power=power, u_axis=u_axis, tau_axis=tau_axis,
                    du=2.0 / cfg.g_theta, dtau=cfg.delay_resolution)


def extract_peaks(grid: AdpsGrid, threshold_db: float = DEFAULT_THRESHOLD_DB,
                  l_max: Optional[int] = None) -> PathSupport:
    """3x3 non-maximum suppression with a threshold relative to the global maximum.

    Both axes span exactly one period of the array and OFDM responses, so
    the neighbourhood wraps around. A point is kept when it is >= all of its
    neighbours and strictly above ``max(P) * 10**(-threshold_db/10)``. The result holds at
    most ``l_max`` peaks, strongest first, ties broken by lower ``(i, j)``.
    """
    P = grid.power
    gmax = float(P.max()) if P.size else 0.0
    if not gmax > 0.0:
        raise EmptySupportError("ADPS is identically zero; no peaks to extract")
    local_max = P >= maximum_filter(P, size=3, mode="wrap")
    keep = local_max & (P > gmax * 10.0 ** (-threshold_db / 10.0))
    ii, jj = np.nonzero(keep)
    # lexsort keys: last one is primary
    order = np.lexsort((jj, ii, -P[ii, jj]))
    if l_max is not None:
        order = order[:l_max]
    peaks = []
    for n in order:
        i, j = int(ii[n]), int(jj[n])
        u, tau = float(grid.u_axis[i]), float(grid.tau_axis[j])
        peaks.append(PeakRecord(i, j, u, tau, float(P[i, j]), u, tau, u, tau))
    return PathSupport(tuple(peaks))


def parabolic_refine(p_prev: float, p_center: float, p_next: float, spacing: float) -> float:
    """Vertex offset of the parabola through three equally spaced samples.

    Returns ``0.5 * (p_prev - p_next) / (p_prev - 2 p_center + p_next) * spacing``,
    or 0 for a flat triple.
    """
    if p_center < p_prev or p_center < p_next:
        raise ValueError("centre sample is not a local maximum")
    denom = p_prev - 2.0 * p_center + p_next
    if abs(denom) < FLAT_TOL * abs(p_center) or denom == 0.0:
        return 0.0
    # |offset| <= 1/2 holds exactly for a peak triple; the clamp only absorbs rounding
    offset = min(max(0.5 * (p_prev - p_next) / denom, -0.5), 0.5)
    return offset * spacing


def trust_clip(u_ref, tau_ref, u_grid, tau_grid, du, dtau):
    """Confine refined values to half a grid bin around the detected peak."""
    u_hat = min(max(u_ref, u_grid - du / 2.0), u_grid + du / 2.0)
    tau_hat = min(max(tau_ref, tau_grid - dtau / 2.0), tau_grid + dtau / 2.0)
    return u_hat, tau_hat


def refine_peak(grid: AdpsGrid, peak: PeakRecord) -> PeakRecord:
    P = grid.power
    n_u, n_tau = P.shape
    i, j = peak.i, peak.j
    du = parabolic_refine(P[(i - 1) % n_u, j], P[i, j], P[(i + 1) % n_u, j], grid.du)
    dtau = parabolic_refine(P[i, (j - 1) % n_tau], P[i, j], P[i, (j + 1) % n_tau], grid.dtau)
    u_ref = float(peak.u_grid + du)
    tau_ref = float(peak.tau_grid + dtau)
    return replace(peak, u_ref=u_ref, tau_ref=tau_ref, u_hat=u_ref, tau_hat=tau_ref)


def apply_trust_region(grid: AdpsGrid, peak: PeakRecord) -> PeakRecord:
    u_hat, tau_hat = trust_clip(peak.u_ref, peak.tau_ref, peak.u_grid, peak.tau_grid,
                                grid.du, grid.dtau)
    return replace(peak, u_hat=float(u_hat), tau_hat=float(tau_hat))


def extract_support(cfg: SystemConfig, radio_map: MultipathSet, refine: bool = True,
                    trust: bool = False, threshold_db: float = DEFAULT_THRESHOLD_DB,
                    l_max: Optional[int] = None) -> PathSupport:
    """ADPS -> peaks -> optional parabolic refinement -> optional trust clip."""
    grid = build_adps(cfg, radio_map)
    support = extract_peaks(grid, threshold_db, l_max if l_max is not None else l_max_for(cfg))
    peaks = support.peaks
    if refine:
        peaks = tuple(refine_peak(grid, p) for p in peaks)
    if trust:
        peaks = tuple(apply_trust_region(grid, p) for p in peaks)
    return PathSupport(peaks, refined=refine, trust_clipped=trust)
