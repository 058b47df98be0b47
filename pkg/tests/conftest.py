"""Shared fixtures: the seeded benchmark scenario and its constructed head.

Session scope keeps the expensive pieces (numba compilation, per-frame attack
crafting) shared across test modules; everything here is deterministic, so
sharing cannot leak state between tests.
"""

import numpy as np
import pytest

from fuselag import experiment, geometry, scenario
from fuselag.types import AttackConfig, PostprocessConfig


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    geometry.warm_up()


@pytest.fixture(scope="session")
def bench_scenario():
    return scenario.generate_scenario(seed=42, n_agents=2, n_objects=3,
                                      n_frames=20)


@pytest.fixture(scope="session")
def anchors(bench_scenario):
    return experiment.default_anchors(bench_scenario)


@pytest.fixture(scope="session")
def head(bench_scenario, anchors):
    return scenario.synth_head_weights(anchors, bench_scenario.grid.channels)


@pytest.fixture(scope="session")
def attack_cfg():
    return AttackConfig()


@pytest.fixture(scope="session")
def post_cfg():
    return PostprocessConfig()


@pytest.fixture(scope="session")
def frame_bundles(bench_scenario, head, anchors, attack_cfg):
    """Crafted attack bundles for every frame of the benchmark scenario."""
    return [experiment.prepare_frame(bench_scenario, f, head, anchors,
                                     attack_cfg)
            for f in range(1, bench_scenario.n_frames)]


def random_boxes(rng: np.random.Generator, n: int):
    """Random proposal boxes with descending scores for NMS tests."""
    from fuselag.types import ProposalBox

    scores = np.sort(rng.uniform(0.2, 1.0, n))[::-1]
    return [
        ProposalBox(x=float(rng.uniform(-8, 8)), y=float(rng.uniform(-8, 8)),
                    z=1.5, length=float(rng.uniform(0.5, 6.0)),
                    width=float(rng.uniform(0.5, 4.0)), height=1.6,
                    yaw=float(rng.uniform(-np.pi, np.pi)),
                    score=float(scores[i]), source_index=(0, 0, i))
        for i in range(n)
    ]
