"""Radio-map-aided channel estimation for pilot-starved MIMO-OFDM, with baselines and a benchmark harness."""

from .adps import (AdpsGrid, PathSupport, PeakRecord, build_adps, dirichlet_k, extract_peaks,
                   extract_support, parabolic_refine, trust_clip)
from .baselines import (KronCovariance, LmmseConfig, Omp3dConfig, joint_omp_3d, kron_omp,
                        lmmse_kron, oracle_kron_covariance, sample_kron_covariance)
from .channel import (MultipathSet, Path, RxObservations, SystemConfig, dft_pilots, nmse, nmse_db,
                      simulate_rx, steering_vector, synthesize_channel)
from .estimator import (EstimateResult, EstimatorConfig, PathEstimate, ProjectionMatrix,
                        aod_search, build_projection, charm_estimate, project_and_compensate,
                        reconstruct)
from .harness import (METHODS, MismatchConfig, ScenarioConfig, SweepSpec, TrialRecord, aggregate,
                      generate_location, inject_bias, run_sweep)

__version__ = "0.1.0"
