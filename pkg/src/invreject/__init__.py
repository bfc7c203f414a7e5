"""invreject: reject candidate ODE models against noisy time-course data
without estimating parameters.

The pipeline: differential-algebra elimination turns a model into its
input-output invariant; Gaussian-process regression estimates the output
derivatives the invariant needs; and a calibrated singular-value test decides
whether the data could satisfy the invariant for any coefficient values.
"""

from .diffpoly import (
    CharSet,
    DiffAlgebraError,
    DiffMonomial,
    DiffPolynomial,
    DiffVar,
    EliminationError,
    OrderOverflowError,
    OutOfScopeError,
    Ranking,
    ZeroPolynomialError,
    characteristic_set,
    extract_input_output,
    pseudo_divide,
)
from .dsl import ParseError
from .gpr import (
    GPError,
    GPPosterior,
    Hyperparams,
    fit_hyperparameters,
    hermite,
    log_marginal_likelihood,
    posterior_derivatives,
    quality_gate,
    se_kernel_deriv,
)
from .invariant import (
    InvariantSpec,
    ModelSpec,
    Slot,
    eliminate,
    identifiability_count,
    normalize_monic,
    parse_invariant,
    parse_model,
    render_invariant,
    substitute_known,
)
from .params import ParamPoly
from .simulate import (
    SimulationError,
    TimeSeries,
    add_noise,
    closed_form_example31,
    exact_output_derivatives,
    integrate_model,
    read_csv,
    write_csv,
)
from .solvability import (
    LinearSystem,
    SolvabilityError,
    SolvabilityReport,
    build_system,
    coefficient_conditioning,
    decide,
    deterministic_reject,
    frobenius_chi_tail,
    monomial_noise_scale,
    pvalue_bound,
    test_statistic,
    tropp_tail,
)

__version__ = "0.1.0"
