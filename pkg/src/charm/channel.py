"""Physical-layer primitives for the downlink MIMO-OFDM model.

Array conventions used throughout the package:

* a channel tensor ``H`` has shape ``(K, n_rx, n_tx)``;
* a pilot matrix ``X`` has shape ``(n_tx, T)`` with unit-norm columns;
* received pilots ``y`` have shape ``(T, K, n_rx)``.

Angles are handled in the sine domain ``u = sin(theta)`` internally; all
dictionaries are uniform in ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError

MAX_PATHS = 64
NMSE_FLOOR = 1e-15


@dataclass(frozen=True)
class SystemConfig:
    """Array sizes, subcarrier grid and dictionary resolutions.

    ``g_theta``, ``g_phi`` and ``g_tau`` default to ``4 * n_rx``,
    ``4 * n_tx`` and ``n_subcarriers`` respectively.
    """

    n_tx: int = 64
    n_rx: int = 32
    n_subcarriers: int = 128
    subcarrier_spacing: float = 120e3
    carrier_freq: float = 2.0e9
    g_theta: Optional[int] = None
    g_phi: Optional[int] = None
    g_tau: Optional[int] = None

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_subcarriers"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not (self.subcarrier_spacing > 0 and math.isfinite(self.subcarrier_spacing)):
            raise ConfigError("subcarrier_spacing must be positive")
        if not (self.carrier_freq > 0 and math.isfinite(self.carrier_freq)):
            raise ConfigError("carrier_freq must be positive")
        defaults = {"g_theta": 4 * self.n_rx, "g_phi": 4 * self.n_tx, "g_tau": self.n_subcarriers}
        for name, default in defaults.items():
            value = getattr(self, name)
            if value is None:
                object.__setattr__(self, name, default)
            elif int(value) != value or value < 2:
                raise ConfigError(f"{name} must be an integer >= 2, got {value!r}")

    @property
    def K(self) -> int:
        return self.n_subcarriers

    @property
    def delay_resolution(self) -> float:
        """Delay bin width 1/(K df) in seconds."""
        return 1.0 / (self.n_subcarriers * self.subcarrier_spacing)

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def max_delay(self) -> float:
        """One OFDM delay ambiguity period, 1/df."""
        return 1.0 / self.subcarrier_spacing

    def aoa_grid(self) -> np.ndarray:
        """Sine-domain AoA dictionary, u_i = -1 + 2 i / g_theta."""
        return -1.0 + 2.0 * np.arange(self.g_theta) / self.g_theta

    def aod_grid(self) -> np.ndarray:
        return -1.0 + 2.0 * np.arange(self.g_phi) / self.g_phi

    def delay_grid(self) -> np.ndarray:
        return np.arange(self.g_tau) * self.delay_resolution

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown system keys: {sorted(unknown)}")
        return cls(**data)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Path:
    """One propagation path. Angles in radians, delay in seconds."""

    gain: complex
    aoa: float
    aod: float
    delay: float


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MultipathSet:
    """An ordered set of paths, stored column-wise.

    The sine of each angle is the canonical representation so that grid
    snapping is exact; radians are derived with ``arcsin``.
    """

    gains: np.ndarray
    aoa_sin: np.ndarray
    aod_sin: np.ndarray
    delays: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gains", _frozen(self.gains, complex))
        object.__setattr__(self, "aoa_sin", _frozen(self.aoa_sin, float))
        object.__setattr__(self, "aod_sin", _frozen(self.aod_sin, float))
        object.__setattr__(self, "delays", _frozen(self.delays, float))
        n = self.gains.size
        if not (self.aoa_sin.size == self.aod_sin.size == self.delays.size == n):
            raise ValueError("path parameter arrays must have equal length")
        if not 1 <= n <= MAX_PATHS:
            raise ValueError(f"path count must be in [1, {MAX_PATHS}], got {n}")
        for name in ("gains", "aoa_sin", "aod_sin", "delays"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite value in {name}")
        if np.any(np.abs(self.aoa_sin) > 1) or np.any(np.abs(self.aod_sin) > 1):
            raise ValueError("angle sines must lie in [-1, 1]")
        if np.any(self.delays < 0):
            raise ValueError("delays must be non-negative")

    @classmethod
    def from_paths(cls, paths: Iterable[Path]) -> "MultipathSet":
        paths = list(paths)
        return cls(
            gains=[p.gain for p in paths],
            aoa_sin=np.sin([p.aoa for p in paths]),
            aod_sin=np.sin([p.aod for p in paths]),
            delays=[p.delay for p in paths],
        )

    @classmethod
    def from_angles(cls, gains, aoa, aod, delays) -> "MultipathSet":
        return cls(gains=gains, aoa_sin=np.sin(aoa), aod_sin=np.sin(aod), delays=delays)

    @property
    def L(self) -> int:
        return int(self.gains.size)

    def __len__(self) -> int:
        return self.L

    @property
    def aoa(self) -> np.ndarray:
        return np.arcsin(self.aoa_sin)

    @property
    def aod(self) -> np.ndarray:
        return np.arcsin(self.aod_sin)

    @property
    def paths(self) -> list:
        return [
            Path(complex(g), float(a), float(d), float(t))
            for g, a, d, t in zip(self.gains, self.aoa, self.aod, self.delays)
        ]

    def replace(self, **changes) -> "MultipathSet":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, MultipathSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("gains", "aoa_sin", "aod_sin", "delays")
        )

    def __hash__(self):
        return hash((self.gains.tobytes(), self.aoa_sin.tobytes(),
                     self.aod_sin.tobytes(), self.delays.tobytes()))

    def to_dict(self) -> dict:
        return {
            "gain_re": self.gains.real.tolist(),
            "gain_im": self.gains.imag.tolist(),
            "aoa_sin": self.aoa_sin.tolist(),
            "aod_sin": self.aod_sin.tolist(),
            "delay_s": self.delays.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MultipathSet":
        gains = np.asarray(data["gain_re"], float) + 1j * np.asarray(data["gain_im"], float)
        return cls(gains=gains, aoa_sin=data["aoa_sin"], aod_sin=data["aod_sin"],
                   delays=data["delay_s"])


@dataclass(frozen=True, eq=False)
class RxObservations:
    """Received pilots ``y[t, k]`` (shape ``(T, K, n_rx)``) and the per-element noise variance."""

    y: np.ndarray
    noise_var: float

    @property
    def T(self) -> int:
        return self.y.shape[0]

    def digest(self) -> str:
        """Content hash, used to verify that paired methods saw the same data."""
        import hashlib

        h = hashlib.sha256(np.ascontiguousarray(self.y).tobytes())
        h.update(repr(float(self.noise_var)).encode())
        return h.hexdigest()


def steering_vector_u(n: int, u) -> np.ndarray:
    """ULA response for sine-domain direction(s) ``u``.

    Scalar ``u`` gives a length-``n`` vector; an array of directions gives an
    ``(n, len(u))`` matrix whose columns are steering vectors.
    """
    u = np.asarray(u, dtype=float)
    m = np.arange(n)
    if u.ndim == 0:
        return np.exp(1j * np.pi * m * u) / math.sqrt(n)
    return np.exp(1j * np.pi * np.outer(m, u.reshape(-1))) / math.sqrt(n)


def steering_vector(n: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA steering vector, unit norm.

    Element ``m`` equals ``exp(j*pi*m*sin(angle)) / sqrt(n)``.
    """
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    if abs(angle) > math.pi / 2:
        raise ValueError("angle must lie within (-pi/2, pi/2)")
    return steering_vector_u(n, math.sin(angle))


def delay_phases(cfg: SystemConfig, delays) -> np.ndarray:
    """``exp(-j 2 pi k df tau)`` as a ``(K, len(delays))`` matrix."""
    k = np.arange(cfg.n_subcarriers)
    return np.exp(-2j * np.pi * cfg.subcarrier_spacing * np.outer(k, np.asarray(delays, float)))


def synthesize_from_params(cfg: SystemConfig, gains, u_rx, u_tx, delays) -> np.ndarray:
    """Sum of rank-one path terms, the kernel shared by synthesis and reconstruction."""
    gains = np.asarray(gains, complex).reshape(-1)
    if gains.size == 0:
        return np.zeros((cfg.n_subcarriers, cfg.n_rx, cfg.n_tx), complex)
    A_r = steering_vector_u(cfg.n_rx, np.asarray(u_rx, float).reshape(-1))
    A_t = steering_vector_u(cfg.n_tx, np.asarray(u_tx, float).reshape(-1))
    weights = delay_phases(cfg, delays) * gains  # (K, L)
    # H[k] = A_r diag(weights[k]) A_t^H
    return np.einsum("kl,rl,tl->krt", weights, A_r, A_t.conj(), optimize=True)


def synthesize_channel(cfg: SystemConfig, paths: MultipathSet) -> np.ndarray:
    """Frequency-domain channel ``H[k]``, shape ``(K, n_rx, n_tx)``."""
    if len(paths) < 1:
        raise ValueError("need at least one path")
    if np.any(paths.delays >= cfg.max_delay):
        raise ValueError("path delay exceeds the OFDM ambiguity period 1/df")
    return synthesize_from_params(cfg, paths.gains, paths.aoa_sin, paths.aod_sin, paths.delays)


def simulate_rx(cfg: SystemConfig, H: np.ndarray, X: np.ndarray, snr_db: float,
                rng_seed: int) -> RxObservations:
    """Received pilots ``y[t, k] = H[k] x_t + n[t, k]``.

    The noise variance is calibrated against the empirical mean power per
    receive element of the noiseless signal. ``snr_db = inf`` disables noise.
    """
    H = np.asarray(H)
    X = np.asarray(X)
    if H.shape != (cfg.n_subcarriers, cfg.n_rx, cfg.n_tx):
        raise ValueError(f"channel shape {H.shape} does not match config")
    if X.ndim != 2 or X.shape[0] != cfg.n_tx or X.shape[1] < 1:
        raise ValueError(f"pilot matrix must be (n_tx, T>=1), got {X.shape}")
    signal = np.einsum("krn,nt->tkr", H, X)
    if math.isinf(snr_db) and snr_db > 0:
        return RxObservations(signal, 0.0)
    power = float(np.mean(signal.real ** 2 + signal.imag ** 2))
    if power <= 0.0:
        raise NumericError("received signal has zero power; noise variance for a finite SNR is undefined")
    noise_var = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
    return RxObservations(signal + math.sqrt(noise_var / 2.0) * noise, noise_var)


def nmse(H_hat: np.ndarray, H: np.ndarray) -> float:
    """Normalized squared error summed over subcarriers (linear)."""
    H_hat = np.asarray(H_hat)
    H = np.asarray(H)
    if H_hat.shape != H.shape:
        raise ValueError(f"shape mismatch {H_hat.shape} vs {H.shape}")
    ref = float(np.sum(np.abs(H) ** 2))
    if ref <= 0.0:
        raise NumericError("reference channel has zero norm")
    return float(np.sum(np.abs(H_hat - H) ** 2)) / ref


def to_db(value: float, floor: float = NMSE_FLOOR) -> float:
    return 10.0 * math.log10(max(value, floor))


def nmse_db(H_hat: np.ndarray, H: np.ndarray) -> float:
    return to_db(nmse(H_hat, H))


PILOT_MODES = ("evenly-spaced", "seeded-random")


def dft_pilots(cfg: SystemConfig, T: int, mode: str = "evenly-spaced", seed: int = 0) -> np.ndarray:
    """``T`` distinct unit-norm columns of the ``n_tx``-point DFT matrix."""
    n = cfg.n_tx
    if not 1 <= T <= n:
        raise ValueError(f"pilot length must be in [1, n_tx={n}], got {T}")
    if mode == "evenly-spaced":
        cols = (np.arange(T) * n) // T
    elif mode == "seeded-random":
        cols = np.sort(np.random.default_rng(seed).choice(n, size=T, replace=False))
    else:
        raise ValueError(f"unknown pilot mode {mode!r}; expected one of {PILOT_MODES}")
    rows = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(rows, cols) / n) / math.sqrt(n)
