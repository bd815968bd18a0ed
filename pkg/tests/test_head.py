import copy

import numpy as np
import pytest

from embdistill.distill.head import ProjectionHead
from embdistill.distill.loss import log_power_sum_loss, log_power_sum_loss_grad
from embdistill.rng import make_rng

from _oracles import fd_gradient, max_rel_err


def identity_head(d, eps=1e-5):
    head = ProjectionHead(d, d, eps=eps, seed=0)
    head.weight = np.eye(d)
    return head


def test_normalization_fixed_point():
    # pre-normalized columns (biased variance) pass through almost unchanged
    rng = make_rng(21)
    x = rng.normal(size=(16, 4))
    x = (x - x.mean(axis=0)) / x.std(axis=0)  # population std
    head = identity_head(4)
    out, _ = head.forward(x, train=True)
    assert np.allclose(out, x, atol=1e-4)


def test_scale_zero_collapse():
    rng = make_rng(22)
    head = identity_head(3)
    head.gamma = np.zeros(3)
    head.beta = np.full(3, 2.5)
    out, _ = head.forward(rng.normal(size=(5, 3)), train=True)
    assert np.allclose(out, 2.5)


def test_two_row_normalization_exact():
    head = identity_head(1, eps=0.0)
    out, _ = head.forward(np.array([[0.0], [2.0]]), train=True)
    assert np.allclose(out, [[-1.0], [1.0]])


def test_running_stats_momentum_update():
    head = identity_head(1)
    head.forward(np.array([[0.0], [2.0]]), train=True)  # batch mean 1, biased var 1
    assert np.allclose(head.running_mean, 0.1)
    assert np.allclose(head.running_var, 0.9 * 1.0 + 0.1 * 1.0)


def test_eval_mode_uses_running_stats_and_never_updates():
    rng = make_rng(23)
    head = ProjectionHead(3, 2, seed=5)
    head.forward(rng.normal(size=(8, 3)), train=True)
    mean_before = head.running_mean.copy()
    var_before = head.running_var.copy()
    x = rng.normal(size=(4, 3))
    out, _ = head.forward(x, train=False)
    assert np.array_equal(head.running_mean, mean_before)
    assert np.array_equal(head.running_var, var_before)
    x_hat = (x - mean_before) / np.sqrt(var_before + head.eps)
    assert np.allclose(out, (x_hat * head.gamma + head.beta) @ head.weight)


def test_single_row_train_batch_rejected():
    head = ProjectionHead(2, 2)
    with pytest.raises(ValueError, match="at least 2"):
        head.forward(np.ones((1, 2)), train=True)


def test_eval_cache_not_differentiable():
    head = ProjectionHead(2, 2)
    _, cache = head.forward(np.ones((3, 2)), train=False)
    with pytest.raises(RuntimeError, match="train-mode"):
        head.backward(np.zeros((3, 2)), cache)


def test_zero_upstream_grad_gives_zero_grads():
    rng = make_rng(24)
    head = ProjectionHead(3, 2, seed=1)
    _, cache = head.forward(rng.normal(size=(4, 3)), train=True)
    grads, grad_input = head.backward(np.zeros((4, 2)), cache)
    assert all(np.allclose(g, 0.0) for g in grads.values())
    assert np.allclose(grad_input, 0.0)


def test_weight_grad_is_bn_output_transpose_times_upstream():
    rng = make_rng(25)
    head = ProjectionHead(3, 2, seed=2)
    x = rng.normal(size=(4, 3))
    _, cache = head.forward(x, train=True)
    upstream = rng.normal(size=(4, 2))
    grads, _ = head.backward(upstream, cache)
    assert np.allclose(grads["weight"], cache["y"].T @ upstream)


def _loss_through_head(head, x, target, train=True):
    out, _ = copy.deepcopy(head).forward(x, train=train)
    return log_power_sum_loss(out, target)


def test_full_chain_gradients_match_finite_differences():
    rng = make_rng(26)
    for trial in range(15):
        b = int(rng.integers(2, 7))
        d_in = int(rng.integers(1, 6))
        d_out = int(rng.integers(1, 6))
        head = ProjectionHead(d_in, d_out, seed=trial)
        x = rng.normal(size=(b, d_in))
        target = rng.normal(size=(b, d_out))

        work = copy.deepcopy(head)
        out, cache = work.forward(x, train=True)
        _, grad_out = log_power_sum_loss_grad(out, target)
        grads, grad_input = work.backward(grad_out, cache)

        for name in ("weight", "gamma", "beta"):
            def f(value, name=name):
                probe = copy.deepcopy(head)
                setattr(probe, name, value)
                out_p, _ = probe.forward(x, train=True)
                return log_power_sum_loss(out_p, target)

            numeric = fd_gradient(f, getattr(head, name))
            assert max_rel_err(grads[name], numeric) <= 1e-5, f"{name}, trial {trial}"

        numeric_x = fd_gradient(lambda v: _loss_through_head(head, v, target), x)
        assert max_rel_err(grad_input, numeric_x) <= 1e-5, f"input, trial {trial}"


def test_state_dict_round_trip():
    rng = make_rng(27)
    head = ProjectionHead(4, 3, seed=9)
    head.forward(rng.normal(size=(6, 4)), train=True)
    clone = ProjectionHead(4, 3, seed=0).load_state_dict(head.state_dict())
    x = rng.normal(size=(5, 4))
    assert np.array_equal(clone(x), head(x))
