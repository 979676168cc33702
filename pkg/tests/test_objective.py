import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmimvc.data import PairBatch
from hmimvc.errors import DegenerateTemperatureError
from hmimvc.model import init_params
from hmimvc.numerics import LayerParams
from hmimvc.objective import (compute_tau, contrastive_grad, contrastive_loss, loss_negative,
                              loss_positive, negative_from_distance, objective, prediction_loss,
                              reconstruction_loss, total_loss)


def pairs(anchor, partner, y):
    return PairBatch(np.array(anchor), np.array(partner), np.array(y))


def closed_form(r, tau):
    return np.where(r < tau, r * (tau - r) ** 2 / tau, 0.0)


# -- temperature ---------------------------------------------------------------

def test_tau_one_plus_three():
    z1 = np.zeros((2, 2))
    z2 = np.array([[1.0, 0.0], [0.0, 3.0]])
    # row 0 with itself is positive (d=1); row 1 vs row 1 at d=3 labelled negative
    tau = compute_tau(z1, z2, pairs([0, 1], [0, 1], [1, 0]))
    assert tau.tau == 4.0 and (tau.n_p, tau.n_n) == (1, 1)


def test_tau_two_plus_five():
    z1 = np.zeros((2, 1))
    z2 = np.array([[2.0], [5.0]])
    assert compute_tau(z1, z2, pairs([0, 0], [0, 1], [1, 0])).tau == 7.0


def test_tau_collapse():
    z = np.ones((3, 2))
    with pytest.raises(DegenerateTemperatureError):
        compute_tau(z, z.copy(), pairs([0, 1, 0], [0, 1, 2], [1, 1, 0]))


# -- per-pair terms ------------------------------------------------------------

def test_positive_values():
    assert loss_positive([[1.0, 2.0]], [[1.0, 2.0]])[0] == 0.0
    assert loss_positive([[1.0, 0.0]], [[0.0, 1.0]])[0] == 2.0


def test_negative_hand_value():
    assert negative_from_distance(1.0, 3.0) == pytest.approx(4.0 / 3.0, abs=1e-15)
    assert negative_from_distance(0.0, 3.0) == 0.0
    assert negative_from_distance(3.0, 3.0) == 0.0
    assert negative_from_distance(7.5, 3.0) == 0.0


def test_negative_closed_form_1000_draws():
    rng = np.random.default_rng(0)
    tau = rng.uniform(0.01, 10.0, size=1000)
    r = rng.uniform(0.0, 2.0, size=1000) * tau
    lit = negative_from_distance(r, tau)
    assert np.max(np.abs(lit - closed_form(r, tau))) < 1e-12
    assert np.all(lit[r >= tau] == 0.0)


def test_negative_peak_at_third():
    tau = 2.5
    r = np.linspace(0, tau, 300001)
    vals = negative_from_distance(r, tau)
    i = int(np.argmax(vals))
    assert abs(r[i] - tau / 3) < 1e-4
    assert vals[i] == pytest.approx(4 * tau ** 2 / 27, rel=1e-8)
    assert np.all(vals[1:-1] > 0)


def test_contrastive_hand_sum():
    # one positive with squared distance 2, one negative beyond tau
    z1 = np.array([[0.0, 0.0], [0.0, 0.0]])
    z2 = np.array([[1.0, 1.0], [10.0, 0.0]])
    assert contrastive_loss(z1, z2, pairs([0, 0], [0, 1], [1, 0]), tau=1.0) == 0.5


def test_contrastive_zero_cases():
    z = np.random.default_rng(0).normal(size=(3, 2))
    assert contrastive_loss(z, z.copy(), pairs([0, 1, 2], [0, 1, 2], [1, 1, 1]), 1.0) == 0.0
    far = z + 100.0
    assert contrastive_loss(z, far, pairs([0, 1], [1, 2], [0, 0]), 1.0) == 0.0


def test_contrastive_decreases_when_positive_moves_closer():
    rng = np.random.default_rng(1)
    z1, z2 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    pb = pairs([0, 1, 2, 3, 0, 1], [0, 1, 2, 3, 2, 3], [1, 1, 1, 1, 0, 0])
    before = contrastive_loss(z1, z2, pb, 2.0)
    z2[1] = 0.5 * (z1[1] + z2[1])
    assert contrastive_loss(z1, z2, pb, 2.0) < before


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 20.0))
def test_losses_nonnegative(seed, tau):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.normal(size=(5, 3)) * tau, rng.normal(size=(5, 3))
    pb = pairs(np.arange(10) % 5, rng.integers(0, 5, 10), rng.integers(0, 2, 10))
    assert contrastive_loss(z1, z2, pb, tau) >= 0
    assert np.all(loss_negative(z1, z2, tau) >= 0)


def test_contrastive_gradient_fd():
    rng = np.random.default_rng(2)
    z1, z2 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    pb = pairs([0, 1, 2, 3, 0, 1, 2, 3], [0, 1, 2, 3, 1, 2, 3, 0], [1, 1, 1, 1, 0, 0, 0, 0])
    tau = 4.0

    def f(flat):
        a, b = flat[:12].reshape(4, 3), flat[12:].reshape(4, 3)
        v, g1, g2 = contrastive_grad(a, b, pb, tau)
        return v, np.concatenate([g1.ravel(), g2.ravel()])

    from hmimvc.numerics import grad_check
    assert grad_check(f, np.concatenate([z1.ravel(), z2.ravel()])) < 1e-6


# -- prediction and reconstruction ------------------------------------------------

def test_prediction_zero_predictors_unit_latents():
    params = init_params([3, 3], latent_dim=2, hidden=(4, 4, 4), seed=0)
    for name in ("pred1", "pred2"):
        for p in params.stacks[name]:
            p.weight[:] = 0
            p.bias[:] = 0
    rng = np.random.default_rng(0)
    z1 = rng.normal(size=(5, 2))
    z1 /= np.linalg.norm(z1, axis=1, keepdims=True)
    z2 = rng.normal(size=(5, 2))
    z2 /= np.linalg.norm(z2, axis=1, keepdims=True)
    assert prediction_loss(z1, z2, params) == pytest.approx(2.0, abs=1e-14)


def test_prediction_exact_map_is_zero():
    params = init_params([3, 3], latent_dim=2, hidden=(4,), seed=0)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    params.stacks["pred1"] = [LayerParams.create(rot)]
    params.stacks["pred2"] = [LayerParams.create(rot.T)]
    z1 = np.random.default_rng(0).normal(size=(6, 2))
    z2 = z1 @ rot.T
    assert prediction_loss(z1, z2, params) == pytest.approx(0.0, abs=1e-24)


def test_reconstruction_zero_decoders():
    params = init_params([2, 2], latent_dim=2, hidden=(4, 4, 4), seed=0)
    for name in ("dec1", "dec2"):
        for p in params.stacks[name]:
            p.weight[:] = 0
            p.bias[:] = 0
    # every row of each view has squared norm s = 25
    x1 = np.tile([3.0, 4.0], (4, 1))
    x2 = np.tile([0.0, 5.0], (4, 1))
    z = np.zeros((4, 2))
    assert reconstruction_loss(x1, x2, z, z, params) == 25.0


def test_reconstruction_perfect_decoder():
    params = init_params([2, 2], latent_dim=2, hidden=(4,), seed=0)
    params.stacks["dec1"] = [LayerParams.create(np.hstack([np.eye(2), np.zeros((2, 2))]))]
    params.stacks["dec2"] = [LayerParams.create(np.hstack([np.zeros((2, 2)), np.eye(2)]))]
    rng = np.random.default_rng(0)
    x1, x2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    assert reconstruction_loss(x1, x2, x1, x2, params) == 0.0


# -- total ---------------------------------------------------------------------

def test_total_cases():
    assert total_loss(0, 0, 0).total == 0.0
    assert total_loss(0.5, 0.2, 0.3).total == pytest.approx(1.0, abs=1e-15)
    masked = total_loss(0.5, 0.2, 0.3, {"rec"})
    assert masked.total == 0.3 and masked.l_cl == 0.5


def test_objective_cl_requires_tau():
    params = init_params([3, 4], latent_dim=2, hidden=(4,), seed=0)
    x = np.random.default_rng(0).normal(size=(3, 3))
    with pytest.raises(ValueError):
        objective(params, x, np.ones((3, 4)), pairs([0], [1], [0]), None, {"cl"})


def test_inactive_components_get_no_gradient():
    params = init_params([3, 4], latent_dim=2, hidden=(4,), seed=0)
    rng = np.random.default_rng(0)
    _, grads = objective(params, rng.normal(size=(5, 3)), rng.normal(size=(5, 4)), None, None, {"rec"})
    assert not any(k.startswith("pred") for k in grads)
    assert any(k.startswith("dec") for k in grads) and any(k.startswith("enc") for k in grads)
