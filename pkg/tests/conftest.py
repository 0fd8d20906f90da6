from __future__ import annotations

import pytest

from panelmsm import pipeline, simulate


@pytest.fixture(scope="session")
def small_sim():
    """One modest simulated panel reused by smoke tests."""
    cfg = simulate.preset("realism", n_units=60, n_periods=26, seed=97)
    return simulate.generate_panel(cfg)


@pytest.fixture(scope="session")
def fitted_small(small_sim):
    """A full estimation pass (low B) on the small panel."""
    cfg = pipeline.RunConfig(
        roles=pipeline.Roles(covariates=("x",), province="province"),
        bootstrap_b=25,
        seed=7,
    )
    arts = pipeline.run_estimation(cfg, small_sim)
    return cfg, arts
