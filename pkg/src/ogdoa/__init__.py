"""Off-grid sparse Bayesian DOA estimation for uniform linear arrays.

The estimator places a dense angular grid over [0, pi], models each true
direction as its nearest grid point plus a bounded offset (a first-order
manifold correction), and recovers both the sparse per-direction powers
and the offsets by evidence maximization. A subspace-reduced variant
works on the dominant right singular directions of the snapshot matrix.
The harness submodule reproduces the standard Monte Carlo accuracy,
outlier-sensitivity, and model-validation studies.
"""

from .arraymodel import (
    Dictionary,
    Grid,
    UlaConfig,
    build_dictionary,
    perturbed_manifold,
    steering_derivative,
    steering_vector,
)
from .backend import available_backends, default_backend_name, get_backend
from .harness import (
    AggregateReport,
    ExperimentSpec,
    TrialResult,
    ks_validation,
    outlier_study,
    report_read,
    report_write,
    run_experiment,
)
from .inference import (
    HyperState,
    InferenceConfig,
    InferenceTrace,
    OgsbiResult,
    Posterior,
    QuadraticForm,
    beta_quadratic,
    init_hyperstate,
    log_evidence,
    posterior_update,
    run_ogsbi,
    update_alpha,
    update_alpha0,
    update_beta,
)
from .scenario import (
    GroundTruthMap,
    Scenario,
    SnapshotData,
    draw_doas,
    generate_sources,
    ground_truth_map,
    inject_outliers,
    ks_gaussian_test,
    load_scenario,
    read_snapshots,
    synthesize,
    total_noise,
    write_snapshots,
)
from .spectrum import (
    DoaEstimate,
    Spectrum,
    estimate_powers,
    extract_doas,
    lower_bound,
    mse,
    mse_db,
    write_spectrum_csv,
)
from .svdreduce import ReducedData, SvdResult, run_ogsbi_svd, svd_reduce

__version__ = "0.1.0"
