"""Perturbation optimization: exact gradients, budget respect, objectives."""

import numpy as np
import pytest

from fuselag import attack, losses, warp
from fuselag.types import (AnchorConfig, AttackConfig, FeatureMap, HeadWeights,
                           PoseSE2, StructuralError, ValidationError)

POSE = PoseSE2(0.0, 0.0, 0.0)


def fmap(data, agent=0):
    return FeatureMap(agent_id=agent, timestamp=0, pose=POSE,
                      data=np.asarray(data, dtype=np.float64), resolution=0.4)


def small_instance(seed, h=6, w=6, channels=3, agents=2):
    rng = np.random.default_rng(seed)
    features = [fmap(rng.normal(scale=0.5, size=(channels, h, w)), a)
                for a in range(agents)]
    head = HeadWeights(kernels=rng.normal(scale=0.3,
                                          size=(8, channels, 3, 3)),
                       bias=rng.normal(scale=0.1, size=8), num_anchors=1)
    anchors = AnchorConfig(resolution=0.4)
    return features, head, anchors


def test_gradient_matches_finite_differences_small_grid():
    cfg = AttackConfig()
    for seed in range(3):
        features, head, anchors = small_instance(seed)
        rng = np.random.default_rng(100 + seed)
        delta = rng.normal(scale=0.1, size=features[1].data.shape)
        _, grad, _ = attack.loss_and_grad(features, 1, 0, delta, head,
                                          anchors, cfg,
                                          attack.LatencyObjective())
        eps = 1e-6
        for _ in range(40):
            idx = tuple(rng.integers(0, s) for s in delta.shape)
            d_hi = delta.copy()
            d_hi[idx] += eps
            d_lo = delta.copy()
            d_lo[idx] -= eps
            hi, _, _ = attack.loss_and_grad(features, 1, 0, d_hi, head,
                                            anchors, cfg,
                                            attack.LatencyObjective())
            lo, _, _ = attack.loss_and_grad(features, 1, 0, d_lo, head,
                                            anchors, cfg,
                                            attack.LatencyObjective())
            numeric = (hi - lo) / (2 * eps)
            scale = max(abs(numeric), abs(grad[idx]), 1e-8)
            assert abs(grad[idx] - numeric) / scale <= 1e-4


def test_gradient_through_transport_warp():
    cfg = AttackConfig()
    features, head, anchors = small_instance(7, h=8, w=8)
    transport = warp.derive_transform(PoseSE2(0, 0, 0),
                                      PoseSE2(0.3, -0.2, 0.25), 0.4)
    rng = np.random.default_rng(7)
    delta = rng.normal(scale=0.1, size=features[1].data.shape)
    _, grad, _ = attack.loss_and_grad(features, 1, 0, delta, head, anchors,
                                      cfg, attack.LatencyObjective(),
                                      transport=transport)
    eps = 1e-6
    checked = 0
    for _ in range(60):
        idx = tuple(rng.integers(0, s) for s in delta.shape)
        d_hi = delta.copy()
        d_hi[idx] += eps
        d_lo = delta.copy()
        d_lo[idx] -= eps
        hi, _, _ = attack.loss_and_grad(features, 1, 0, d_hi, head, anchors,
                                        cfg, attack.LatencyObjective(),
                                        transport=transport)
        lo, _, _ = attack.loss_and_grad(features, 1, 0, d_lo, head, anchors,
                                        cfg, attack.LatencyObjective(),
                                        transport=transport)
        numeric = (hi - lo) / (2 * eps)
        if abs(numeric) < 1e-10 and abs(grad[idx]) < 1e-10:
            continue  # cell warped fully out of the grid
        scale = max(abs(numeric), abs(grad[idx]), 1e-8)
        assert abs(grad[idx] - numeric) / scale <= 1e-4
        checked += 1
    assert checked >= 20


def test_zero_weight_head_gives_zero_gradient():
    features, _, anchors = small_instance(1)
    head = HeadWeights(kernels=np.zeros((8, 3, 3, 3)), bias=np.zeros(8),
                       num_anchors=1)
    grad = attack.grad_wrt_delta(features[:1], features[1],
                                 np.zeros_like(features[1].data), head,
                                 anchors, AttackConfig())
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_single_cell_hand_chain():
    """C=1, 1x1 grid, single agent: the whole chain collapses to scalars."""
    cfg = AttackConfig(lambda1=1.0, lambda2=0.0, tau=0.5)
    v = 0.3
    features = [fmap(np.full((1, 1, 1), v))]
    kernels = np.zeros((8, 1, 1, 1))
    kernels[0, 0, 0, 0] = 1.0  # score logit = fused value
    head = HeadWeights(kernels=kernels, bias=np.zeros(8), num_anchors=1)
    anchors = AnchorConfig(resolution=0.4)
    value, grad, s = attack.loss_and_grad(features, 0, 0,
                                          np.zeros((1, 1, 1)), head, anchors,
                                          cfg, attack.LatencyObjective())
    # single agent: fused = v + delta exactly, score = sigmoid(v)
    sig = 1.0 / (1.0 + np.exp(-v))
    assert s[0, 0, 0] == pytest.approx(sig)
    expected_value, conf_grad = losses.loss_conf_with_grad(
        np.array([sig]), cfg.tau, cfg.surrogate_beta)
    assert value == pytest.approx(expected_value)
    expected_grad = conf_grad[0] * sig * (1 - sig)
    assert grad[0, 0, 0] == pytest.approx(expected_grad, rel=1e-10)


def test_delta_shape_mismatch():
    features, head, anchors = small_instance(2)
    with pytest.raises(StructuralError):
        attack.loss_and_grad(features, 1, 0, np.zeros((1, 2, 2)), head,
                             anchors, AttackConfig(),
                             attack.LatencyObjective())


def test_bim_respects_budget_and_trace_length():
    features, head, anchors = small_instance(3)
    cfg = AttackConfig(steps=10, step_size=0.1, linf_budget=0.35)
    result = attack.bim_optimize(features, 1, 0, head, anchors, cfg)
    assert np.max(np.abs(result.delta)) <= cfg.linf_budget + 1e-12
    assert len(result.losses) == cfg.steps + 1
    assert len(result.pre_nms_counts) == cfg.steps + 1
    assert np.all(np.isfinite(result.delta))


def test_bim_single_step_is_one_signed_update():
    features, head, anchors = small_instance(4)
    cfg = AttackConfig(steps=1, step_size=0.1)
    result = attack.bim_optimize(features, 1, 0, head, anchors, cfg)
    _, grad, _ = attack.loss_and_grad(features, 1, 0,
                                      np.zeros_like(result.delta), head,
                                      anchors, cfg, attack.LatencyObjective())
    expected = np.clip(-cfg.step_size * np.sign(grad), -cfg.linf_budget,
                       cfg.linf_budget)
    np.testing.assert_allclose(result.delta, expected, atol=1e-12)


def test_bim_zero_steps_rejected_by_config():
    with pytest.raises(ValidationError):
        AttackConfig(steps=0)


def test_bim_deterministic():
    features, head, anchors = small_instance(5)
    cfg = AttackConfig(steps=4)
    a = attack.bim_optimize(features, 1, 0, head, anchors, cfg)
    b = attack.bim_optimize(features, 1, 0, head, anchors, cfg)
    np.testing.assert_array_equal(a.delta, b.delta)
    assert a.losses == b.losses


def test_bim_loss_decreases_overall():
    features, head, anchors = small_instance(6)
    cfg = AttackConfig(steps=10)
    result = attack.bim_optimize(features, 1, 0, head, anchors, cfg)
    assert result.losses[-1] < result.losses[0]


def test_objectives_return_consistent_shapes():
    cfg = AttackConfig()
    n = 25
    rng = np.random.default_rng(8)
    s = rng.uniform(0.01, 0.99, n)
    x = rng.normal(size=n)
    y = rng.normal(size=n)
    length = rng.uniform(1, 4, n)
    width = rng.uniform(1, 3, n)
    z = rng.uniform(1, 3, n)
    for objective in (attack.LatencyObjective(),
                      attack.PgdObjective(benign_scores=s),
                      attack.PriorArtObjective(top_k=8)):
        value, *grads = objective(s, x, y, length, width, z, cfg)
        assert np.isfinite(value)
        for g in grads:
            assert g.shape == (n,)


def test_prior_art_objective_ignores_low_rank_geometry():
    cfg = AttackConfig()
    n = 40
    rng = np.random.default_rng(9)
    s = np.linspace(0.9, 0.1, n)
    x = rng.normal(size=n)
    y = rng.normal(size=n)
    length = rng.uniform(1, 3, n)
    width = rng.uniform(1, 3, n)
    obj = attack.PriorArtObjective(top_k=5)
    _, _, gx, gy, gl, gw, _ = obj(s, x, y, length, width, np.ones(n), cfg)
    # geometry gradients vanish outside the top-k by score
    assert np.all(gx[5:] == 0.0)
    assert np.all(gl[5:] == 0.0)


def test_pre_nms_counts_mostly_non_decreasing(frame_bundles):
    """On the benchmark scene the crafted trace grows in at least 8/10 steps."""
    for bundle in frame_bundles[:5]:
        counts = bundle.trace_counts
        ups = sum(1 for a, b in zip(counts, counts[1:]) if b >= a)
        assert ups >= 8, counts
