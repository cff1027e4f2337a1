import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from univperturb.datasets import gaussian_blobs, split
from univperturb.defense import (ALPHA_MAX, PerturbationPool, RobustnessConfig, adaptive_magnitude,
                                 finetune_with_pool, perturb_training_set, robustness_iteration)
from univperturb.errors import ConfigError, DomainError
from univperturb.models import SampleSet, TrainConfig, affine_model, init_mlp, model_to_dict, train
from univperturb.numerics import make_rng
from univperturb.universal import Perturbation, UniversalConfig


def test_adaptive_magnitude_closed_form():
    w_diff = np.array([3.0, 4.0])
    m = affine_model(np.vstack([np.zeros(2), w_diff]), np.array([0.0, 0.0]))
    x = np.array([0.6, 0.8]) * 2.0  # margin g = w_diff . x = 10
    v = -w_diff / 5 * 0.5  # antiparallel, ||v|| = 0.5
    alpha = adaptive_magnitude(m, x, v)
    # crossing at alpha = g / (||w|| ||v||)
    assert alpha == pytest.approx(10 / (5 * 0.5), rel=1e-6)
    assert m.predict(x + alpha * v) != m.predict(x)


def test_adaptive_magnitude_absent_and_errors():
    m = affine_model(np.array([[0.0, 0.0], [1.0, 0.0]]))
    x = np.array([1.0, 0.0])
    assert adaptive_magnitude(m, x, np.array([0.0, 1.0])) is None
    assert adaptive_magnitude(m, x, np.array([-1e-3, 0.0])) is None  # crossing beyond alpha_max
    with pytest.raises(DomainError):
        adaptive_magnitude(m, x, np.zeros(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adaptive_magnitude_brackets_first_crossing(seed):
    rng = make_rng(seed)
    m = init_mlp(5, 4, (8,), seed=seed % 1000)
    x = rng.standard_normal(5)
    v = rng.standard_normal(5)
    alpha = adaptive_magnitude(m, x, v)
    if alpha is None:
        return
    k = m.predict(x)
    assert 0 < alpha <= ALPHA_MAX
    assert m.predict(x + alpha * v) != k
    assert m.predict(x + alpha / (1 + 1e-4) * v) == k


def pool_for(model, dim, n=3, xi=1.0, seed=0):
    rng = make_rng(seed)
    return PerturbationPool([Perturbation(np.clip(rng.standard_normal(dim), -xi, xi), math.inf, xi,
                                          model.model_id(), i) for i in range(n)])


def test_pool_invariants():
    m = init_mlp(3, 2, ())
    with pytest.raises(ConfigError):
        PerturbationPool([])
    with pytest.raises(DomainError):
        PerturbationPool([Perturbation(np.zeros(3), 2, 1.0, m.model_id())])
    a = Perturbation(np.ones(3) * 0.1, 2, 1.0, m.model_id())
    with pytest.raises(ConfigError):
        PerturbationPool([a, Perturbation(np.ones(3) * 0.1, 2, 2.0, m.model_id())])
    with pytest.raises(ConfigError):
        PerturbationPool([a, Perturbation(np.ones(3) * 0.1, math.inf, 1.0, m.model_id())])
    with pytest.raises(ConfigError):
        PerturbationPool([a, Perturbation(np.ones(3) * 0.1, 2, 1.0, "other")])


def small_task():
    data = gaussian_blobs(num_classes=3, dim=8, per_class=60, center_scale=2.0, noise=0.7, seed=3)
    sp = split(data, {"train": 0.6, "val": 0.4}, seed=0)
    m = train(init_mlp(8, 3, (16,), seed=0), sp["train"], TrainConfig(lr=0.05, epochs=10, seed=0))
    return m, sp


def test_mix_prob_zero_matches_plain_training():
    m, sp = small_task()
    cfg = TrainConfig(lr=0.005, epochs=3, seed=4)
    plain = train(m.copy(), sp["train"], cfg)
    mixed = finetune_with_pool(m.copy(), sp["train"], pool_for(m, 8), 3, 0.0, make_rng(1), cfg)
    assert model_to_dict(plain) == model_to_dict(mixed)


def test_finetune_deterministic_and_changes_model():
    m, sp = small_task()
    pool = pool_for(m, 8)
    a = finetune_with_pool(m.copy(), sp["train"], pool, 2, 0.5, make_rng(2), TrainConfig(lr=0.005, seed=1))
    b = finetune_with_pool(m.copy(), sp["train"], pool, 2, 0.5, make_rng(2), TrainConfig(lr=0.005, seed=1))
    assert model_to_dict(a) == model_to_dict(b)
    assert model_to_dict(a) != model_to_dict(m)


def test_finetune_argument_checks():
    m, sp = small_task()
    pool = pool_for(m, 8)
    with pytest.raises(ConfigError):
        finetune_with_pool(m, sp["train"], pool, 0, 0.5, make_rng(0))
    with pytest.raises(ConfigError):
        finetune_with_pool(m, sp["train"], pool, 1, 1.5, make_rng(0))
    with pytest.raises(ConfigError):
        finetune_with_pool(m, sp["train"], [], 1, 0.5, make_rng(0))


def test_mixing_fraction_and_clean_labels():
    m = affine_model(np.array([[0.0, 0.0], [1.0, 0.0]]))
    rng = make_rng(5)
    data = SampleSet(rng.standard_normal((10_000, 2)), rng.integers(0, 2, 10_000))
    pool = PerturbationPool([Perturbation(np.array([0.0, 0.5]), math.inf, 1.0, m.model_id())])
    mixed, mask = perturb_training_set(m, data, pool, 0.5, make_rng(6))
    assert 0.47 <= mask.mean() <= 0.53
    np.testing.assert_array_equal(mixed.labels, data.labels)
    np.testing.assert_array_equal(mixed.inputs[~mask], data.inputs[~mask])
    # orthogonal to the boundary: no crossing, so alpha falls back to 1
    np.testing.assert_allclose(mixed.inputs[mask] - data.inputs[mask], np.tile([0.0, 0.5], (mask.sum(), 1)))


def test_perturbed_samples_sit_just_past_the_boundary():
    m = affine_model(np.array([[0.0, 0.0], [1.0, 0.0]]))
    data = SampleSet(np.array([[1.0, 0.0], [3.0, 1.0]]), [1, 1])
    pool = PerturbationPool([Perturbation(np.array([-1.0, 0.0]), math.inf, 1.0, m.model_id())])
    mixed, mask = perturb_training_set(m, data, pool, 1.0, make_rng(0))
    assert mask.all()
    np.testing.assert_allclose(mixed.inputs[:, 0], 0.0, atol=1e-8)
    assert np.all(m.predict(mixed.inputs) == 0)


def test_robustness_iteration_reports():
    m, sp = small_task()
    cfg = RobustnessConfig(universal=UniversalConfig(p=math.inf, xi=0.8, delta=0.2, max_passes=3),
                           train=TrainConfig(lr=0.05, seed=0), pool_size=2, epochs=1, x_size=50, fresh_runs=1,
                           seed=1)
    tuned, reports = robustness_iteration(m, sp["train"], sp["val"], cfg, rounds=1)
    assert [r.round for r in reports] == [0, 1]
    for r in reports:
        assert 0.0 <= r.fresh_fooling_rate <= 1.0 and not math.isnan(r.clean_accuracy)
    assert model_to_dict(tuned) != model_to_dict(m)
    _, again = robustness_iteration(m, sp["train"], sp["val"], cfg, rounds=1)
    assert again == reports
    with pytest.raises(ConfigError):
        robustness_iteration(m, sp["train"], sp["val"], cfg, rounds=0)


@pytest.mark.parametrize("kw", [{"pool_size": 0}, {"epochs": 0}, {"x_size": 0}, {"fresh_runs": 0},
                                {"mix_prob": -0.1}])
def test_robustness_config_validation(kw):
    with pytest.raises(ConfigError):
        RobustnessConfig(**kw)
