import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgcn.data import PipelineConfig, Sample, segment_and_window, trace_from_text
from stgcn.gradcheck import check_gradients, random_sample
from stgcn.model import (
    ConfigError,
    ModelConfig,
    TrainHyper,
    _head_forward,
    backward,
    backward_batch,
    fit,
    forward,
    forward_batch,
    gcn_forward,
    gru_cell,
    init_params,
    loss,
    param_shapes,
    predict,
    predict_batch,
    train,
)
from stgcn.numerics import ShapeError, make_rng, softmax

from .conftest import make_trace_lines

SMALL = ModelConfig(hidden_dim=5, num_windows=4)


def zero_params(config):
    return {k: np.zeros(s) for k, s in param_shapes(config).items()}


def as_sample(x, lap, label=0):
    return Sample(features=x, adjacencies=None, laplacians=lap, label=label)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(hidden_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(num_classes=3)
    with pytest.raises(ConfigError):
        ModelConfig(gcn_output_activation="tanh")


def test_param_shapes_match_init():
    p = init_params(ModelConfig())
    assert {k: v.shape for k, v in p.items()} == param_shapes(ModelConfig())
    assert p["theta_r"].shape == (64, 32) and p["w_out"].shape == (96, 2)
    assert all(not v.any() for k, v in p.items() if k.startswith("b"))


def test_gcn_zero_weights(rng):
    x = rng.normal(size=(3, 6))
    lap = rng.random((3, 3))
    p = {"theta0": np.zeros((6, 4)), "theta1": np.zeros((4, 4))}
    assert np.all(gcn_forward(x, lap, p, "sigmoid") == 0.5)
    assert np.all(gcn_forward(x, lap, p, "relu") == 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(3)), st.sampled_from(["sigmoid", "relu"]))
def test_gcn_permutation_equivariance(seed, perm, act):
    r = np.random.default_rng(seed)
    x = r.normal(size=(3, 6))
    from stgcn.graph import build_snapshot

    lap = build_snapshot(r.normal(scale=3, size=(3, 2))).laplacian
    p = init_params(ModelConfig(hidden_dim=8), r)
    P = np.eye(3)[list(perm)]
    lhs = gcn_forward(P @ x, P @ lap @ P.T, p, act)
    assert np.abs(lhs - P @ gcn_forward(x, lap, p, act)).max() <= 1e-9


def test_gru_update_gate_extremes(rng):
    p = init_params(ModelConfig(hidden_dim=4), rng)
    p["theta_u"] = np.zeros_like(p["theta_u"])
    f, h_prev = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    p["b_u"] = np.full(4, 1e3)
    h, _ = gru_cell(f, h_prev, p)
    assert np.array_equal(h, h_prev)
    p["b_u"] = np.full(4, -1e3)
    h, cache = gru_cell(f, h_prev, p)
    assert np.array_equal(h, cache["c"])


def test_gru_all_zero():
    p = zero_params(ModelConfig(hidden_dim=4))
    h, cache = gru_cell(np.zeros((3, 4)), np.zeros((3, 4)), p)
    assert np.all(cache["r"] == 0.5) and np.all(cache["u"] == 0.5)
    assert np.all(cache["c"] == 0.0) and np.all(h == 0.0)


def test_gru_shape_error():
    p = zero_params(ModelConfig(hidden_dim=4))
    with pytest.raises(ShapeError):
        gru_cell(np.zeros((3, 5)), np.zeros((3, 4)), p)


def test_zero_weights_give_uniform_probs(rng):
    x, lap, _ = random_sample(SMALL, rng)
    probs, _ = forward(as_sample(x[0], lap[0]), zero_params(SMALL), SMALL)
    assert list(probs) == [0.5, 0.5]


def test_predict_tie_resolves_low(rng):
    x, lap, _ = random_sample(SMALL, rng)
    label, prob = predict(as_sample(x[0], lap[0]), zero_params(SMALL), SMALL)
    assert (label, prob) == (0, 0.5)


def test_predict_is_argmax(rng):
    x, lap, _ = random_sample(SMALL, rng, batch=20)
    p = init_params(SMALL, rng)
    p["b_out"] = np.array([0.0, 0.01])
    labels, probs = predict_batch(x, lap, p, SMALL)
    full, _ = forward_batch(x, lap, p, SMALL)
    assert np.array_equal(labels, full.argmax(axis=1))
    assert np.array_equal(probs, full[:, 1])


def test_window_count_mismatch(rng):
    x, lap, _ = random_sample(ModelConfig(hidden_dim=5, num_windows=3), rng)
    with pytest.raises(ShapeError):
        forward(as_sample(x[0], lap[0]), init_params(SMALL), SMALL)


def test_identical_windows_pooling(rng):
    x, lap, _ = random_sample(ModelConfig(num_windows=1, hidden_dim=5), rng)
    xs = np.repeat(x, SMALL.num_windows, axis=1)
    laps = np.repeat(lap, SMALL.num_windows, axis=1)
    p = init_params(SMALL, rng)
    probs, tape = forward_batch(xs, laps, p, SMALL)
    # recompute the chain on the single window and pool externally
    f = gcn_forward(x[0, 0], lap[0, 0], p)
    h = np.zeros((3, 5))
    states = []
    for _ in range(SMALL.num_windows):
        h, _ = gru_cell(f, h, p)
        states.append(h)
    pooled = np.mean(states, axis=0)
    assert np.abs(tape.pooled[0] - pooled).max() <= 1e-12
    _, logits = _head_forward(pooled[None], p)
    assert np.abs(probs[0] - softmax(logits[0])).max() <= 1e-12


def test_pooling_is_not_first_window(rng):
    x, lap, _ = random_sample(SMALL, rng)
    p = init_params(SMALL, rng)
    probs, tape = forward_batch(x, lap, p, SMALL)
    first_h = tape.steps[0][1]
    h0, _ = gru_cell(tape.steps[0][0][-1], first_h["h_prev"], p)
    _, logits = _head_forward(h0[None], p)
    assert np.abs(softmax(logits)[0] - probs[0]).max() > 1e-6


def test_tape_replay_is_bitwise(rng):
    x, lap, _ = random_sample(SMALL, rng, batch=3)
    p = init_params(SMALL, rng)
    probs, tape = forward_batch(x, lap, p, SMALL)
    again, _ = forward_batch(tape.x, tape.lap, p, SMALL)
    assert np.array_equal(probs, again) and np.array_equal(probs, tape.probs)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_probabilities_normalized(seed):
    r = np.random.default_rng(seed)
    x, lap, _ = random_sample(SMALL, r, batch=4)
    probs, _ = forward_batch(x * 10, lap, init_params(SMALL, r), SMALL)
    assert np.abs(probs.sum(axis=1) - 1).max() <= 1e-12


def test_zero_point_gradients():
    cfg = ModelConfig(hidden_dim=4, num_windows=3, gcn_output_activation="relu")
    x = np.zeros((3, 3, 6))
    lap = np.repeat(np.eye(3)[None], 3, axis=0)
    p = zero_params(cfg)
    probs, tape = forward(as_sample(x, lap), p, cfg)
    g = backward(tape, 1, p, cfg)
    assert list(g["b_out"]) == [0.5, -0.5]
    for name in ("theta0", "theta1", "theta_r", "theta_u", "theta_c", "w_out"):
        assert not g[name].any()


def test_gradient_scale_is_linear(rng):
    x, lap, y = random_sample(SMALL, rng, batch=2)
    p = init_params(SMALL, rng)
    _, tape = forward_batch(x, lap, p, SMALL)
    g1 = backward_batch(tape, y, p, SMALL)
    g2 = backward_batch(tape, y, p, SMALL, scale=2.0)
    for k in g1:
        assert np.array_equal(g2[k], 2 * g1[k])


@pytest.mark.parametrize("act", ["sigmoid", "relu"])
def test_gradients_match_finite_differences(act):
    cfg = ModelConfig(hidden_dim=4, num_windows=5, gcn_output_activation=act)
    errs = check_gradients("stgcn", cfg, seed=11)
    assert max(errs.values()) < 1e-4, errs


def test_batched_gradient_equals_mean_of_singles(rng):
    x, lap, y = random_sample(SMALL, rng, batch=3)
    p = init_params(SMALL, rng)
    _, tape = forward_batch(x, lap, p, SMALL)
    g = backward_batch(tape, y, p, SMALL)
    singles = []
    for i in range(3):
        _, t = forward_batch(x[i : i + 1], lap[i : i + 1], p, SMALL)
        singles.append(backward_batch(t, y[i : i + 1], p, SMALL))
    for k in g:
        np.testing.assert_allclose(g[k], sum(s[k] for s in singles) / 3, atol=1e-14)


def test_loss_function():
    assert loss(np.array([0.5, 0.5]), 1) == pytest.approx(np.log(2))
    assert loss(np.array([1.0, 0.0]), 0) == 0.0
    with pytest.raises(ValueError):
        loss(np.array([0.5, 0.5]), 2)


def tiny_set(rng, n=12, config=SMALL):
    x, lap, _ = random_sample(config, rng, batch=n)
    y = np.arange(n) % 2
    return x, lap, y


def test_fit_zero_lr_constant_history(rng):
    x, lap, y = tiny_set(rng, n=8)
    init = init_params(SMALL, make_rng(0))
    params, hist, _ = fit("stgcn", x, lap, y, SMALL, TrainHyper(lr=0.0, batch=8, iterations=5), params=init)
    # each pass reshuffles, so the batch mean is summed in a different order
    assert len(hist) == 5 and np.abs(hist - hist[0]).max() <= 1e-12
    assert all(np.array_equal(params[k], init[k]) for k in init)


def test_fit_deterministic_and_nonnegative(rng):
    x, lap, y = tiny_set(rng)
    hyper = TrainHyper(lr=1e-2, batch=5, iterations=12)
    p1, h1, _ = fit("stgcn", x, lap, y, SMALL, hyper)
    p2, h2, _ = fit("stgcn", x, lap, y, SMALL, hyper)
    assert np.array_equal(h1, h2) and np.all(h1 >= 0)
    for k in p1:
        assert np.array_equal(p1[k], p2[k])


def test_fit_rejects_bad_sets(rng):
    x, lap, _ = tiny_set(rng, n=4)
    with pytest.raises(ConfigError):
        fit("stgcn", x, lap, np.zeros(4, int), SMALL, TrainHyper(iterations=1))
    with pytest.raises(ConfigError):
        fit("stgcn", x[:0], lap[:0], np.zeros(0, int), SMALL, TrainHyper(iterations=1))
    with pytest.raises(ConfigError):
        fit("nope", x, lap, np.array([0, 1, 0, 1]), SMALL, TrainHyper(iterations=1))


def test_fit_progress_callback(rng):
    x, lap, y = tiny_set(rng, n=6)
    seen = []
    fit("stgcn", x, lap, y, SMALL, TrainHyper(lr=1e-3, batch=4, iterations=10, log_every=5), progress=lambda i, v: seen.append(i))
    assert seen == [5, 10]


def test_train_on_dataset(rng):
    from stgcn.data import Dataset

    x, lap, y = tiny_set(rng, n=6)
    params, history = train(Dataset(x, lap, y), SMALL, TrainHyper(lr=1e-3, batch=6, iterations=3))
    assert len(history) == 3 and set(params) == set(param_shapes(SMALL))


def translated_trace(shift):
    lines = make_trace_lines(
        60,
        score_fn=lambda i: 10.0 * (i // 20),
        pos_fn=lambda a, i: (3.0 * a + 0.1 * i + shift[0], 2.0 * np.sin(i / 5 + a) + shift[1]),
        fov=1,
    )
    return trace_from_text("\n".join(lines))


def test_prediction_invariant_to_translation_with_fov_only():
    cfg = PipelineConfig(features="fov_only")
    a = segment_and_window(translated_trace((0.0, 0.0)), cfg)
    b = segment_and_window(translated_trace((123.25, -40.5)), cfg)
    mcfg = ModelConfig(input_dim=1, hidden_dim=6, num_windows=cfg.num_windows)
    p = init_params(mcfg, make_rng(1))
    for sa, sb in zip(a, b):
        la, pa = predict(sa, p, mcfg)
        lb, pb = predict(sb, p, mcfg)
        assert la == lb and pa == pytest.approx(pb, abs=1e-12)
