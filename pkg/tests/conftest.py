import math

import numpy as np
import pytest

from mixedfield.scenario import SystemConfig, UserPlacement, canonical_scenario


@pytest.fixture(scope="session")
def default_config():
    return SystemConfig()


def random_drop_scenario(seed, antenna_count=65, cells=2, users=3, nlos=3):
    """Seeded random user drop in the canonical layout's default region."""
    cfg = SystemConfig(
        antenna_count=antenna_count,
        cell_count=cells,
        users_per_cell=users,
        nlos_path_count=nlos,
        rng_seed=seed,
    )
    scenario = canonical_scenario(cfg)
    ray = cfg.rayleigh_distance()
    rng = np.random.default_rng(seed)
    placements = []
    for m in range(cells):
        for k in range(users):
            placements.append(
                UserPlacement(
                    cell=m,
                    index=k,
                    angle=rng.uniform(math.pi / 3.0, 2.0 * math.pi / 3.0),
                    range_m=rng.uniform(0.1 * ray, ray),
                    scatterers=tuple(
                        (
                            rng.uniform(math.pi / 3.0, 2.0 * math.pi / 3.0),
                            rng.uniform(0.1 * ray, ray),
                        )
                        for _ in range(nlos)
                    ),
                )
            )
    return scenario.with_users(placements)
