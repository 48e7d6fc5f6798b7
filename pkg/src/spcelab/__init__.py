"""spcelab: a Monte Carlo laboratory for correlation experiments and purity tests.

Modules
-------
randkit
    Reproducible counter-based random streams, spherical-cap sampling, and
    the urn step-probability formula.
coin_lab
    Macroscopic coin experiments E1-E6: deterministic, alternating,
    Bernoulli, urn, mixed-box, and pure-box devices.
spce
    Contextual singlet pair model, empirical correlators, the CHSH statistic,
    and the single-probability-space models bounded by 2.
purity
    Nonparametric homogeneity and randomness battery with a
    pure / mixed / inconclusive verdict.
bertrand
    Three random-chord machines converging to 1/2, 1/3, and 1/4.
qkd
    Raw key extraction from matched-basis pairs and the CHSH eavesdropping
    check.
cli
    Config-driven command line with replayable run manifests.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DomainError, FormatError
from .randkit import (
    CapSpec,
    Direction,
    RngStream,
    angle_between,
    hypergeometric_step_prob,
    sample_cap,
    substream,
    uniform_direction,
)
from .coin_lab import (
    BoxKind,
    CoinFace,
    DeviceKind,
    TimeSeries,
    UrnState,
    draw_urn,
    read_timeseries_jsonl,
    regenerate_series,
    remove_coins,
    run_box_experiment,
    run_device,
    urn_count_batch,
    write_timeseries_jsonl,
)
from .spce import (
    BoundCheck,
    ExperimentRun,
    LambdaModel,
    PairRecord,
    Polarizer,
    SharedLambdaRun,
    ch_factorized_probability,
    chsh,
    correlator_stderr,
    empirical_correlator,
    factorized_correlator,
    independent_bound_check,
    passage_probability,
    run_experiment,
    run_shared_lambda_model,
    sample_pair,
    singlet_joint_probs,
    write_run_jsonl,
)
from .purity import (
    PurityVerdict,
    Reduction,
    Sample,
    TestReport,
    Verdict,
    chi2_homogeneity,
    holm_adjust,
    ks_two_sample,
    purity_verdict,
    random_subensemble,
    reduce_intensity,
    runs_test,
)
from .bertrand import (
    ChordTrial,
    Machine,
    ProbabilityEstimate,
    estimate_probability,
    machine_m1,
    machine_m2,
    machine_m3,
    run_trial,
)
from .qkd import KeyPair, ekert_test_statistic, generate_keys, mismatch_rate
