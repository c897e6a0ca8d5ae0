"""Model core: gradients against finite differences, data generation, IO."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decentsim import (
    ConfigurationError,
    Dataset,
    ModelSpec,
    ParseError,
    ShapeError,
    class_centers,
    cross_gradient,
    evaluate,
    finite_difference_gradient,
    generate_synthetic,
    init_params,
    load_csv,
    loss_and_gradient,
    unflatten,
)


def rel_err(a, b):
    denom = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


@pytest.mark.parametrize("spec", [
    ModelSpec(4, 3),
    ModelSpec(2, 3, hidden_dim=8),
    ModelSpec(2, 3, hidden_dim=8, activation="relu"),
    ModelSpec(5, 2, hidden_dim=4),
])
def test_analytic_gradient_matches_central_differences(spec):
    rng = np.random.default_rng(11)
    data = generate_synthetic(spec.num_classes, spec.input_dim, 20, 0.4, 5)
    for _ in range(5):
        params = rng.standard_normal(spec.param_count) * 0.5
        batch = rng.choice(data.n, size=8, replace=False)
        _, grad = loss_and_gradient(spec, params, data, batch)
        fd = finite_difference_gradient(spec, params, data, batch, h=1e-4)
        assert rel_err(grad, fd) <= 1e-5


def test_zero_params_two_class_loss_is_ln2():
    data = generate_synthetic(2, 3, 10, 0.2, 0)
    spec = ModelSpec(3, 2)
    loss, _ = loss_and_gradient(spec, np.zeros(spec.param_count), data,
                                np.arange(data.n))
    assert abs(loss - np.log(2.0)) < 1e-15


def test_uniform_logits_loss_is_log_num_classes():
    data = generate_synthetic(5, 6, 8, 0.2, 1)
    spec = ModelSpec(6, 5)
    loss, _ = loss_and_gradient(spec, np.zeros(spec.param_count), data,
                                np.arange(data.n))
    assert abs(loss - np.log(5.0)) < 1e-12


def test_gradient_is_deterministic():
    spec = ModelSpec(3, 4, hidden_dim=5)
    data = generate_synthetic(4, 3, 12, 0.3, 9)
    params = init_params(spec, np.random.default_rng(2))
    batch = np.arange(10)
    out1 = loss_and_gradient(spec, params, data, batch)
    out2 = loss_and_gradient(spec, params, data, batch)
    assert out1[0] == out2[0]
    assert (out1[1] == out2[1]).all()


def test_one_small_step_decreases_batch_loss():
    spec = ModelSpec(4, 3, hidden_dim=6)
    data = generate_synthetic(3, 4, 20, 0.3, 3)
    params = init_params(spec, np.random.default_rng(0))
    batch = np.arange(16)
    loss, grad = loss_and_gradient(spec, params, data, batch)
    loss2, _ = loss_and_gradient(spec, params - 1e-3 * grad, data, batch)
    assert loss2 < loss


def test_cross_gradient_equals_gradient_at_foreign_params():
    spec = ModelSpec(4, 3)
    data = generate_synthetic(3, 4, 15, 0.3, 4)
    foreign = init_params(spec, np.random.default_rng(5))
    batch = np.arange(12)
    _, direct = loss_and_gradient(spec, foreign, data, batch)
    assert (cross_gradient(spec, foreign, data, batch) == direct).all()


def test_finite_difference_rejects_nonpositive_step():
    spec = ModelSpec(2, 2)
    data = generate_synthetic(2, 2, 5, 0.2, 0)
    with pytest.raises(ConfigurationError):
        finite_difference_gradient(spec, np.zeros(spec.param_count), data,
                                   np.arange(4), h=0.0)


def test_evaluate_breaks_argmax_ties_toward_lowest_class():
    # Zero params give identical logits for every class.
    feats = np.array([[1.0, 2.0], [3.0, -1.0]])
    data = Dataset(feats, np.array([0, 2]), num_classes=3)
    spec = ModelSpec(2, 3)
    _, acc = evaluate(spec, np.zeros(spec.param_count), data)
    assert acc == 0.5  # the label-0 row counts, the label-2 row cannot


def test_evaluate_perfect_memorization_of_two_points():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    data = Dataset(feats, np.array([0, 1]), num_classes=2)
    spec = ModelSpec(2, 2, hidden_dim=4)
    params = init_params(spec, np.random.default_rng(1))
    for _ in range(400):
        _, grad = loss_and_gradient(spec, params, data, np.array([0, 1]))
        params = params - 0.5 * grad
    loss, acc = evaluate(spec, params, data)
    assert acc == 1.0
    assert loss < 0.05


@given(
    input_dim=st.integers(1, 6),
    num_classes=st.integers(2, 5),
    hidden=st.sampled_from([0, 1, 4, 9]),
)
@settings(max_examples=40, deadline=None)
def test_unflatten_layers_reassemble_to_the_flat_vector(input_dim, num_classes, hidden):
    spec = ModelSpec(input_dim, num_classes, hidden_dim=hidden)
    params = np.random.default_rng(0).standard_normal(spec.param_count)
    flat_again = np.concatenate([
        np.concatenate([w.ravel(), b]) for w, b in unflatten(spec, params)
    ])
    assert (flat_again == params).all()


def test_unflatten_rejects_wrong_length():
    spec = ModelSpec(3, 2)
    with pytest.raises(ShapeError):
        unflatten(spec, np.zeros(spec.param_count + 1))


def test_param_count_examples():
    assert ModelSpec(2, 3, hidden_dim=8).param_count == 2 * 8 + 8 + 8 * 3 + 3
    assert ModelSpec(16, 10, hidden_dim=32).param_count == 16 * 32 + 32 + 32 * 10 + 10
    assert ModelSpec(19, 5).param_count == 100


# ------------------------------------------------------------- synthetic data


def test_synthetic_is_deterministic_and_class_major():
    a = generate_synthetic(4, 3, 10, 0.2, 42)
    b = generate_synthetic(4, 3, 10, 0.2, 42)
    assert (a.features == b.features).all()
    assert (a.labels == b.labels).all()
    assert (a.labels == np.repeat(np.arange(4), 10)).all()


def test_synthetic_seeds_give_different_draws():
    a = generate_synthetic(3, 4, 10, 0.2, 1)
    b = generate_synthetic(3, 4, 10, 0.2, 2)
    assert not (a.features == b.features).all()


def test_synthetic_tight_spread_clusters_near_distinct_centers():
    data = generate_synthetic(2, 2, 50, 1e-4, 0)
    c0 = data.features[data.labels == 0].mean(axis=0)
    c1 = data.features[data.labels == 1].mean(axis=0)
    assert np.allclose(c0, [1.0, 0.0], atol=1e-3)
    assert np.allclose(c1, [-1.0, 0.0], atol=1e-3)


def test_synthetic_low_dim_centers_stay_on_unit_circle():
    data = generate_synthetic(6, 2, 400, 1e-5, 3)
    for c in range(6):
        center = data.features[data.labels == c].mean(axis=0)
        assert abs(np.linalg.norm(center) - 1.0) < 1e-3


def test_high_dim_centers_use_an_evenly_spaced_circle():
    # Adjacent classes sit 2*sin(pi/C) apart regardless of the ambient dim,
    # so class confusability is controlled by C and spread alone.
    centers = class_centers(10, 16)
    assert centers.shape == (10, 16)
    assert np.allclose(np.linalg.norm(centers, axis=1), 1.0)
    assert np.allclose(centers[:, 2:], 0.0)
    gaps = np.linalg.norm(centers - np.roll(centers, 1, axis=0), axis=1)
    assert np.allclose(gaps, 2.0 * np.sin(np.pi / 10))


def test_synthetic_is_learnable_by_a_central_baseline():
    # Four classes in two dimensions, moderate noise: plain SGD on the pooled
    # data should separate almost everything.
    data = generate_synthetic(4, 2, 500, 0.15, 3)
    spec = ModelSpec(2, 4)
    params = np.zeros(spec.param_count)
    rng = np.random.default_rng(0)
    for _ in range(300):
        batch = rng.choice(data.n, size=64, replace=False)
        _, grad = loss_and_gradient(spec, params, data, batch)
        params -= 0.5 * grad
    _, acc = evaluate(spec, params, data)
    assert acc >= 0.95


def test_synthetic_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        generate_synthetic(1, 2, 10, 0.2, 0)
    with pytest.raises(ConfigurationError):
        generate_synthetic(3, 2, 0, 0.2, 0)
    with pytest.raises(ConfigurationError):
        generate_synthetic(3, 2, 10, 0.0, 0)
    with pytest.raises(ConfigurationError):
        generate_synthetic(3, 1, 10, 0.2, 0)  # dim 1 fits two classes only


# ------------------------------------------------------------------ CSV input


def test_load_csv_roundtrip(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("0,1.5,-2.0\n1,0.25,3.5\n0,0.0,1.0\n")
    data = load_csv(str(path))
    assert data.n == 3
    assert data.num_classes == 2
    assert data.features[1, 1] == 3.5
    assert (data.labels == [0, 1, 0]).all()


def test_load_csv_errors_name_the_line(tmp_path):
    bad_width = tmp_path / "w.csv"
    bad_width.write_text("0,1.0,2.0\n1,3.0\n")
    with pytest.raises(ParseError, match="line 2"):
        load_csv(str(bad_width))

    bad_value = tmp_path / "v.csv"
    bad_value.write_text("0,1.0\n1,abc\n")
    with pytest.raises(ParseError, match="line 2"):
        load_csv(str(bad_value))

    bad_label = tmp_path / "l.csv"
    bad_label.write_text("-1,1.0\n")
    with pytest.raises(ParseError, match="line 1"):
        load_csv(str(bad_label))

    empty = tmp_path / "e.csv"
    empty.write_text("\n\n")
    with pytest.raises(ParseError):
        load_csv(str(empty))
