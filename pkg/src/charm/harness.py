"""Synthetic scenarios, mismatch injection and Monte-Carlo sweeps.

Seeding
-------
Every (location, trial) pair gets its own seed derived from the master
seed with :class:`numpy.random.SeedSequence`. The seed does not depend on
the sweep condition or the method, so all methods in a trial, and all
conditions of a sweep, see common random numbers: the same scenario, the
same noise draw (scaled to the condition's SNR) and the same bias draw
(scaled to the condition's bias level).

Aggregation
-----------
Mean NMSE is reported as the dB value of the mean *linear* NMSE
(``nmse_db``); the mean of per-trial dB values is also emitted
(``nmse_db_mean_of_db``). Runtime is the median over trials.
"""

from __future__ import annotations

import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adps import PathSupport, extract_support
from .baselines import (KronCovariance, LmmseConfig, Omp3dConfig, joint_omp_3d, kron_omp,
                        lmmse_kron, oracle_kron_covariance, sample_kron_covariance)
from .channel import (MultipathSet, RxObservations, SystemConfig, dft_pilots, nmse,
                      simulate_rx, synthesize_channel, to_db)
from .errors import CharmError, ConfigError
from .estimator import EstimateResult, EstimatorConfig, charm_estimate

log = logging.getLogger(__name__)

BIAS_CLIP = 1.0 - 1e-6


@dataclass(frozen=True)
class ScenarioConfig:
    """Statistics of the synthetic path generator.

    ``delay_range`` and ``tau_rms`` default to ``[0, 1/(4 df)]`` and
    ``1/(16 df)`` once a :class:`SystemConfig` is known (see :meth:`resolved`).
    """

    n_locations: int = 24
    trials_per_location: int = 8
    path_count_range: Tuple[int, int] = (4, 12)
    angle_range: float = math.pi / 3
    delay_range: Optional[Tuple[float, float]] = None
    tau_rms: Optional[float] = None
    on_grid: bool = False
    master_seed: int = 0
    pilot_mode: str = "evenly-spaced"

    def __post_init__(self):
        if self.n_locations < 1:
            raise ConfigError("n_locations must be >= 1")
        if self.trials_per_location < 1:
            raise ConfigError("trials_per_location must be >= 1")
        lo, hi = self.path_count_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid path_count_range {self.path_count_range}")
        if not 0 < self.angle_range < math.pi / 2:
            raise ConfigError("angle_range must lie in (0, pi/2)")
        if self.delay_range is not None and not 0 <= self.delay_range[0] <= self.delay_range[1]:
            raise ConfigError(f"invalid delay_range {self.delay_range}")
        if self.tau_rms is not None and not self.tau_rms > 0:
            raise ConfigError("tau_rms must be > 0")
        object.__setattr__(self, "path_count_range", (int(lo), int(hi)))
        if self.delay_range is not None:
            object.__setattr__(self, "delay_range", tuple(float(v) for v in self.delay_range))

    def resolved(self, cfg: SystemConfig) -> "ScenarioConfig":
        delay_range = self.delay_range or (0.0, 1.0 / (4.0 * cfg.subcarrier_spacing))
        if delay_range[1] >= cfg.max_delay:
            raise ConfigError("delay_range must stay below 1/df")
        return replace(self, delay_range=delay_range,
                       tau_rms=self.tau_rms or 1.0 / (16.0 * cfg.subcarrier_spacing))


@dataclass(frozen=True)
class MismatchConfig:
    bias_std: float = 0.0

    def __post_init__(self):
        if not self.bias_std >= 0:
            raise ConfigError("bias_std must be >= 0")


def _snap(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    idx = np.abs(values[:, None] - grid[None, :]).argmin(axis=1)
    return grid[idx]


def generate_location(cfg: SystemConfig, scfg: ScenarioConfig,
                      location_seed: int) -> Tuple[MultipathSet, MultipathSet]:
    """Draw one location's ground-truth paths; the radio map is an exact copy."""
    s = scfg.resolved(cfg)
    rng = np.random.default_rng(location_seed)
    lo, hi = s.path_count_range
    L = int(rng.integers(lo, hi + 1))
    aoa = rng.uniform(-s.angle_range, s.angle_range, L)
    aod = rng.uniform(-s.angle_range, s.angle_range, L)
    delays = rng.uniform(s.delay_range[0], s.delay_range[1], L)
    gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / math.sqrt(2.0)
    u_r, u_t = np.sin(aoa), np.sin(aod)
    if s.on_grid:
        u_r = _snap(u_r, cfg.aoa_grid())
        u_t = _snap(u_t, cfg.aod_grid())
        delays = _snap(delays, cfg.delay_grid())
    gains = gains * np.exp(-delays / (2.0 * s.tau_rms))
    gains = gains / math.sqrt(float(np.sum(np.abs(gains) ** 2)))
    truth = MultipathSet(gains=gains, aoa_sin=u_r, aod_sin=u_t, delays=delays)
    return truth, MultipathSet(truth.gains, truth.aoa_sin, truth.aod_sin, truth.delays)


def inject_bias(radio_map: MultipathSet, mcfg: MismatchConfig, seed: int) -> MultipathSet:
    """Perturb every path's sin-AoA by a Gaussian offset of std ``bias_std``."""
    if mcfg.bias_std == 0.0:
        return radio_map
    rng = np.random.default_rng(seed)
    offsets = mcfg.bias_std * rng.standard_normal(len(radio_map))
    u = np.clip(radio_map.aoa_sin + offsets, -BIAS_CLIP, BIAS_CLIP)
    return radio_map.replace(aoa_sin=u)


# ----------------------------------------------------------------------------
# Methods


METHODS = ("charm", "charm-trust", "charm-norefine", "omp3d", "lmmse-kron", "kron-omp")
CHARM_OPTIONS = {
    "charm": dict(refine=True, trust=False),
    "charm-trust": dict(refine=True, trust=True),
    "charm-norefine": dict(refine=False, trust=False),
}


def validate_methods(methods: Sequence[str]) -> List[str]:
    methods = list(methods)
    if not methods:
        raise ConfigError("at least one method is required")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; valid methods: {', '.join(METHODS)}")
    return methods


@dataclass(frozen=True)
class MethodContext:
    """Everything a method needs besides the per-trial data."""

    cfg: SystemConfig
    ecfg: EstimatorConfig = EstimatorConfig()
    ocfg: Omp3dConfig = Omp3dConfig()
    lcfg: LmmseConfig = LmmseConfig()
    covariance: Optional[KronCovariance] = None


def run_method(method: str, ctx: MethodContext, radio_map: MultipathSet, rx: RxObservations,
               X: np.ndarray, support: Optional[PathSupport] = None) -> EstimateResult:
    if method in CHARM_OPTIONS:
        return charm_estimate(ctx.cfg, ctx.ecfg, radio_map, rx, X, support=support,
                              **CHARM_OPTIONS[method])
    if method == "omp3d":
        return joint_omp_3d(ctx.cfg, rx, X, ctx.ocfg)
    if method == "kron-omp":
        return kron_omp(ctx.cfg, rx, X, ctx.ocfg)
    if method == "lmmse-kron":
        if ctx.covariance is None:
            raise ConfigError("lmmse-kron needs a covariance")
        return lmmse_kron(ctx.cfg, rx, X, ctx.covariance, ctx.lcfg)
    raise ConfigError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")


def training_covariance(cfg: SystemConfig, scfg: ScenarioConfig, lcfg: LmmseConfig) -> KronCovariance:
    """Offline covariance for LMMSE-Kron, from generator draws disjoint from the test locations."""
    if lcfg.covariance == "oracle":
        return oracle_kron_covariance(cfg, scfg.angle_range)
    if lcfg.training_set_size < cfg.n_tx + cfg.n_rx:
        raise ConfigError(f"training_set_size must be >= n_tx + n_rx = {cfg.n_tx + cfg.n_rx}")
    seeds = np.random.SeedSequence([scfg.master_seed, 0x7A1]).generate_state(lcfg.training_set_size)
    channels = (synthesize_channel(cfg, generate_location(cfg, scfg, int(s))[0]) for s in seeds)
    return sample_kron_covariance(channels)


# ----------------------------------------------------------------------------
# Trials and sweeps


AXES = ("T", "snr", "bias")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: Tuple[float, ...]
    T: int = 4
    snr_db: float = 20.0
    bias_std: float = 0.0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}, got {self.axis!r}")
        if len(self.values) == 0:
            raise ConfigError("sweep needs at least one value")
        object.__setattr__(self, "values", tuple(self.values))

    def conditions(self) -> List[Tuple[int, float, float]]:
        """(T, snr_db, bias_std) for every swept value."""
        out = []
        for v in self.values:
            if self.axis == "T":
                out.append((int(v), self.snr_db, self.bias_std))
            elif self.axis == "snr":
                out.append((self.T, float(v), self.bias_std))
            else:
                out.append((self.T, self.snr_db, float(v)))
        return out


@dataclass(frozen=True)
class TrialRecord:
    method: str
    T: int
    snr_db: float
    bias_std: float
    location: int
    trial: int
    seed: int
    nmse_db: float
    runtime_ms: float
    kappa: float
    regularized: bool
    support_size: int

    @property
    def failed(self) -> bool:
        return math.isnan(self.nmse_db)

    def deterministic_fields(self) -> tuple:
        """Every field except the runtime, with NaN made comparable."""
        values = (getattr(self, f.name) for f in fields(self) if f.name != "runtime_ms")
        return tuple(None if isinstance(v, float) and math.isnan(v) else v for v in values)

    def key(self):
        return (self.T, self.snr_db, self.bias_std, self.location, self.trial,
                METHODS.index(self.method) if self.method in METHODS else len(METHODS), self.method)


def location_seed(master_seed: int, location: int) -> int:
    return int(np.random.SeedSequence([master_seed, 0x10C, location]).generate_state(1)[0])


def trial_seed(master_seed: int, location: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, 0x7E1, location, trial]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class TrialInputs:
    truth: MultipathSet
    radio_map: MultipathSet  # after bias injection
    H: np.ndarray
    X: np.ndarray
    rx: RxObservations
    seed: int


def build_trial(cfg: SystemConfig, scfg: ScenarioConfig, location: Tuple[MultipathSet, MultipathSet],
                trial_seed_value: int, T: int, snr_db: float, bias_std: float,
                H: Optional[np.ndarray] = None) -> TrialInputs:
    """Pilots, observations and (biased) radio map for one trial."""
    truth, radio_map = location
    if H is None:
        H = synthesize_channel(cfg, truth)
    X = dft_pilots(cfg, T, scfg.pilot_mode, seed=trial_seed_value + 2)
    rx = simulate_rx(cfg, H, X, snr_db, trial_seed_value)
    biased = inject_bias(radio_map, MismatchConfig(bias_std), trial_seed_value + 1)
    return TrialInputs(truth, biased, H, X, rx, trial_seed_value)


def _evaluate(method: str, ctx: MethodContext, inputs: TrialInputs, cond, loc: int, trial: int,
              supports: Dict) -> TrialRecord:
    T, snr_db, bias_std = cond
    support = None
    if method in CHARM_OPTIONS:
        # the support only depends on the (biased) map, so it is shared across SNR/T
        key = (method, bias_std)
        if key not in supports:
            supports[key] = extract_support(ctx.cfg, inputs.radio_map, **CHARM_OPTIONS[method])
        support = supports[key]
    try:
        res = run_method(method, ctx, inputs.radio_map, inputs.rx, inputs.X, support=support)
        err_db = to_db(nmse(res.H_hat, inputs.H))
        return TrialRecord(method, T, snr_db, bias_std, loc, trial, inputs.seed, err_db,
                           res.runtime_ms, res.kappa, res.regularized, res.support_size)
    except (CharmError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("method %s failed at location %d trial %d: %s", method, loc, trial, exc)
        return TrialRecord(method, T, snr_db, bias_std, loc, trial, inputs.seed, float("nan"),
                           float("nan"), float("nan"), False, 0)


def _run_locations(args) -> List[TrialRecord]:
    ctx, scfg, spec, methods, loc_items = args
    cfg = ctx.cfg
    records = []
    for loc, location in loc_items:
        H = synthesize_channel(cfg, location[0])
        for trial in range(scfg.trials_per_location):
            seed = trial_seed(scfg.master_seed, loc, trial)
            supports: Dict = {}
            for cond in spec.conditions():
                inputs = build_trial(cfg, scfg, location, seed, *cond, H=H)
                for method in methods:
                    records.append(_evaluate(method, ctx, inputs, cond, loc, trial, supports))
    return records


def generate_locations(cfg: SystemConfig, scfg: ScenarioConfig) -> List[Tuple[MultipathSet, MultipathSet]]:
    return [generate_location(cfg, scfg, location_seed(scfg.master_seed, loc))
            for loc in range(scfg.n_locations)]


def run_sweep(spec: SweepSpec, methods: Sequence[str], cfg: SystemConfig, scfg: ScenarioConfig,
              ecfg: EstimatorConfig = EstimatorConfig(), ocfg: Omp3dConfig = Omp3dConfig(),
              lcfg: LmmseConfig = LmmseConfig(), locations=None, jobs: int = 1,
              covariance: Optional[KronCovariance] = None) -> List[TrialRecord]:
    """Full factorial over condition x location x trial x method.

    ``locations`` overrides generated scenarios (e.g. loaded from files).
    Records come back sorted by (condition, location, trial, method).
    """
    methods = validate_methods(methods)
    if locations is None:
        locations = generate_locations(cfg, scfg)
    if "lmmse-kron" in methods and covariance is None:
        covariance = training_covariance(cfg, scfg, lcfg)
    ctx = MethodContext(cfg, ecfg, ocfg, lcfg, covariance)
    items = list(enumerate(locations))
    jobs = max(1, int(jobs))
    if jobs == 1 or len(items) == 1:
        records = _run_locations((ctx, scfg, spec, methods, items))
    else:
        chunks = [items[n::jobs] for n in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_run_locations, [(ctx, scfg, spec, methods, c) for c in chunks if c])
            records = [r for part in parts for r in part]
    return sorted(records, key=TrialRecord.key)


# ----------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True)
class ConditionSummary:
    method: str
    T: int
    snr_db: float
    bias_std: float
    count: int
    failures: int
    nmse_db: float
    nmse_db_mean_of_db: float
    runtime_ms_median: float


def aggregate(records: Sequence[TrialRecord]) -> List[ConditionSummary]:
    groups: Dict[tuple, List[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.T, r.snr_db, r.bias_std), []).append(r)
    out = []
    for (method, T, snr_db, bias_std), rs in groups.items():
        ok = [r for r in rs if not r.failed]
        if ok:
            lin = [10.0 ** (r.nmse_db / 10.0) for r in ok]
            mean_db = to_db(statistics.fmean(lin))
            mean_of_db = statistics.fmean(r.nmse_db for r in ok)
            runtime = statistics.median(r.runtime_ms for r in ok)
        else:
            mean_db = mean_of_db = runtime = float("nan")
        out.append(ConditionSummary(method, T, snr_db, bias_std, len(rs), len(rs) - len(ok),
                                    mean_db, mean_of_db, runtime))
    out.sort(key=lambda s: (METHODS.index(s.method) if s.method in METHODS else 99,
                            s.T, s.snr_db, s.bias_std))
    return out


def summary_lookup(records: Sequence[TrialRecord]) -> Dict[tuple, ConditionSummary]:
    return {(s.method, s.T, s.snr_db, s.bias_std): s for s in aggregate(records)}
