import numpy as np
import pytest

from invreject.cli import builtin_model_text
from invreject.invariant import eliminate, parse_invariant, parse_model
from invreject.simulate import example31_timeseries

# The two- and three-compartment input-output equations with unknown
# coefficient placeholders.
COMP3_INVARIANT = "d3y + c1*d2y + c2*d1y + c3*y = d2u1 + c4*d1u1 + c5*u1"
COMP2_INVARIANT = "d2y + c1*d1y + c2*y = d1u1 + c3*u1"


@pytest.fixture(scope="session")
def builtin_models():
    names = ("lv2", "lv3", "lorenz", "lc2", "lc3", "comp2_input", "comp3_input")
    return {n: parse_model(builtin_model_text(n), name=n) for n in names}


@pytest.fixture(scope="session")
def builtin_invariants(builtin_models):
    out = {}
    for name in ("lv2", "lv3", "lorenz", "lc2", "lc3"):
        spec, _ = eliminate(builtin_models[name])
        out[name] = spec
    return out


@pytest.fixture(scope="session")
def comp2_spec():
    return parse_invariant(COMP2_INVARIANT, name="comp2")


@pytest.fixture(scope="session")
def comp3_spec():
    return parse_invariant(COMP3_INVARIANT, name="comp3")


@pytest.fixture()
def bench_grid():
    return np.linspace(0.0, 1.0, 100)


@pytest.fixture()
def bench_series(bench_grid):
    return example31_timeseries(bench_grid)
