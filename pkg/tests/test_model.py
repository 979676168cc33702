import hashlib

import numpy as np
import pytest

from hmimvc.errors import CheckpointError, DimensionError
from hmimvc.model import (PAPER_HIDDEN, checkpoint_bytes, decode, encode, init_params, load_checkpoint,
                          load_params, predict_latent, save_params)
from hmimvc.numerics import AdamState, LayerParams


def small(seed=0, dims=(5, 7), hidden=(8, 8, 8)):
    return init_params(dims, latent_dim=3, hidden=hidden, seed=seed)


def zero_out(params):
    for layers in params.stacks.values():
        for p in layers:
            p.weight[:] = 0
            p.bias[:] = 0


def test_full_width_encoder_shapes():
    params = init_params([20, 59], latent_dim=10, hidden=PAPER_HIDDEN, seed=0)
    shapes = [p.weight.shape for p in params.layers("enc", 1)]
    assert shapes == [(1024, 20), (1024, 1024), (1024, 1024), (10, 1024)]
    dec = [p.weight.shape for p in params.layers("dec", 2)]
    assert dec == [(1024, 20), (1024, 1024), (1024, 1024), (59, 1024)]
    pred = [p.weight.shape for p in params.layers("pred", 1)]
    assert pred[0] == (1024, 10) and pred[-1] == (10, 1024)


def test_heads_are_affine():
    params = small()
    for layers in params.stacks.values():
        assert [p.has_bn for p in layers] == [True, True, True, False]


def test_init_deterministic():
    a, b = small(seed=4), small(seed=4)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert checkpoint_bytes(a) != checkpoint_bytes(small(seed=5))


def test_he_variance():
    params = init_params([200, 300], latent_dim=10, hidden=(400, 400, 400), seed=1)
    for p in params.layers("enc", 1)[:3]:
        fan_in = p.weight.shape[1]
        assert abs(p.weight.var() / (2.0 / fan_in) - 1.0) < 0.2


def test_zero_params_give_zero_outputs():
    params = small()
    zero_out(params)
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert np.all(encode(params, 1, x) == 0)
    assert np.all(decode(params, 1, np.ones((4, 6))) == 0)
    assert np.all(predict_latent(params, 2, np.ones((4, 3))) == 0)


def test_shapes():
    params = small()
    x1 = np.random.default_rng(0).normal(size=(6, 5))
    z = encode(params, 1, x1)
    assert z.shape == (6, 3)
    assert decode(params, 2, np.hstack([z, z])).shape == (6, 7)
    assert predict_latent(params, 1, z).shape == (6, 3)


def test_identity_predictor():
    params = small()
    params.stacks["pred1"] = [LayerParams.create(np.eye(3))]
    z = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(predict_latent(params, 1, z), z)


def test_wrong_input_width():
    with pytest.raises(DimensionError):
        encode(small(), 1, np.ones((3, 7)))
    with pytest.raises(DimensionError):
        decode(small(), 1, np.ones((3, 3)))
    with pytest.raises(DimensionError):
        encode(small(), 3, np.ones((3, 5)))


def test_eval_forward_is_pure():
    params = small()
    before = checkpoint_bytes(params)
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert np.array_equal(encode(params, 1, x), encode(params, 1, x))
    assert checkpoint_bytes(params) == before


def test_checkpoint_round_trip(tmp_path):
    params = small(seed=2)
    adam = AdamState(step=7)
    adam.m = {"enc1.0.weight": np.ones_like(params.stacks["enc1"][0].weight)}
    adam.v = {"enc1.0.weight": np.full_like(params.stacks["enc1"][0].weight, 2.0)}
    save_params(params, tmp_path / "a.hmiw", adam, {"epochs_done": 3})
    ck = load_checkpoint(tmp_path / "a.hmiw")
    assert ck.meta == {"epochs_done": 3} and ck.adam.step == 7
    again = checkpoint_bytes(ck.params, ck.adam, ck.meta)
    digest = lambda b: hashlib.sha256(b).hexdigest()
    assert digest(again) == digest((tmp_path / "a.hmiw").read_bytes())


def test_checkpoint_truncated(tmp_path):
    save_params(small(), tmp_path / "a.hmiw")
    raw = (tmp_path / "a.hmiw").read_bytes()
    (tmp_path / "a.hmiw").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "a.hmiw")
    (tmp_path / "a.hmiw").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "a.hmiw")


def test_checkpoint_architecture_mismatch(tmp_path):
    save_params(small(), tmp_path / "a.hmiw")
    with pytest.raises(DimensionError):
        load_params(tmp_path / "a.hmiw", view_dims=[5, 8])
    assert load_params(tmp_path / "a.hmiw", view_dims=[5, 7], latent_dim=3).latent_dim == 3
