import pytest

from hhr import measure, model


def desk_params(**overrides):
    base = dict(
        lambda0=1.0,
        alpha=0.5,
        beta=1.0,
        S0=100.0,
        r=0.03,
        rho=-0.5,
        v0=0.2,
        kappa=2.0,
        vbar=0.3,
        sigma=0.5,
        eta=0.1,
        T=1.0,
        mu=model.PiecewiseFlat.from_pairs([[0.0, 0.05], [0.5, 0.04]]),
    )
    base.update(overrides)
    return model.ModelParams(**base)


@pytest.fixture(scope="session")
def desk_model():
    return model.validate(desk_params())


@pytest.fixture(scope="session")
def desk_dist():
    return model.ExponentialJump(2.0)


@pytest.fixture(scope="session")
def desk_selection(desk_model, desk_dist):
    sel, report = measure.select_measure(desk_model, desk_dist, fraction=0.8)
    return sel


@pytest.fixture(scope="session")
def desk_report(desk_model, desk_dist):
    return measure.a_bounds(desk_model, desk_dist)
