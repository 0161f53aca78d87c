from __future__ import annotations

import pytest

from abem.adaptivity import MarkingParams, StopRule, adaptive_loop
from abem.config import bundled_config, load_config

LSHAPE_LEVELS = 20
LSHAPE_UNIFORM_LEVELS = 6


def bundled(name: str):
    """Config, geometry, initial mesh and problem of a bundled experiment."""
    cfg = load_config(bundled_config(name))
    geo = cfg.build_geometry()
    pde = cfg.build_pde()
    base = cfg.build_mesh(geo)
    return cfg, geo, base, cfg.build_problem(pde, geo, base)


@pytest.fixture(scope="session")
def lshape_setup():
    return bundled("lshape-singular")


@pytest.fixture(scope="session")
def lshape_adaptive(lshape_setup):
    """Adaptive lshape-singular run with every level's system retained."""
    cfg, _, base, prob = lshape_setup
    return adaptive_loop(prob, base, cfg.degree, MarkingParams(cfg.theta),
                         StopRule(None, LSHAPE_LEVELS), retain_systems=True,
                         quad=cfg.build_quad())


@pytest.fixture(scope="session")
def lshape_uniform(lshape_setup):
    cfg, _, base, prob = lshape_setup
    return adaptive_loop(prob, base, cfg.degree, MarkingParams(cfg.theta),
                         StopRule(None, LSHAPE_UNIFORM_LEVELS), mode="uniform",
                         quad=cfg.build_quad())
