"""Exact and sample-based CRPS estimation for Gaussian and sampled forecasts."""

from .exact import (
    CrpsTermValues,
    crps_gaussian,
    crps_gaussian_terms,
    dkw_epsilon,
    predicted_plugin_bias,
)
from .estimators import (
    CrpsEstimate,
    EmpiricalCdf,
    QuantileGrid,
    crps_energy_form,
    crps_pwm_plugin,
    crps_quantile,
    crps_unbiased,
    empirical_cdf,
    empirical_quantile,
    pinball_loss,
)
from .forecast import (
    GaussianPredictive,
    SamplePanel,
    TimeSeriesDataset,
    draw_samples,
    fit_gp,
    gen_ackley,
    gen_multisin,
)
from .kernquad import (
    CrpsKernel,
    NystromFeatures,
    WeightedSupport,
    choose_xi,
    crps_kernquad,
    kernel_eval,
    nystrom_features,
    quantize,
    recombine,
)
from .harness import (
    ScoreAggregate,
    aggregate_seeds,
    run_convergence,
    run_ranking,
    run_slicewise,
    score_model,
)

__version__ = "0.1.0"
