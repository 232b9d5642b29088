import numpy as np
import pytest
import torch

from sasssl.errors import ConfigurationError, InputError, NumericalError
from sasssl.nncore import (
    TOY_ENCODER,
    EncoderConfig,
    LinearHead,
    MLPHead,
    build_encoder,
    clone_params,
    encoder_forward,
    flatten,
    grad_check,
    he_init_,
    init_params,
    linear_head_forward,
    params_equal,
    projector_forward,
    unflatten,
)
from sasssl.probe import bce_loss
from sasssl.ssl import byol_loss, ntxent_loss


def test_init_deterministic_and_seed_sensitive():
    a, b, c = init_params(TOY_ENCODER, 1), init_params(TOY_ENCODER, 1), init_params(TOY_ENCODER, 2)
    assert params_equal(a, b)
    assert not params_equal(a, c)


def test_he_variance():
    cfg = EncoderConfig(stage_widths=(64, 128), blocks_per_stage=(1, 1), feature_dim=128)
    params = init_params(cfg, 0)
    w = params["stages.1.conv2.weight"]
    assert w.numel() >= 10_000
    fan_in = w[0].numel()
    assert abs(w.var().item() / (2.0 / fan_in) - 1) < 0.2


def test_init_zero_bias_unit_norm_scale():
    head = he_init_(MLPHead(8, 16, 4, hidden_norm=True), 0)
    assert torch.all(head.net[0].bias == 0) and torch.all(head.net[1].weight == 1) and torch.all(head.net[1].bias == 0)


def test_output_shape_and_eval_batch_independence():
    enc = build_encoder(TOY_ENCODER, 3).eval()
    x = torch.rand(1, 2, 64, 64)
    one = enc(x)
    two = enc(torch.cat([x, x]))
    assert one.shape == (1, 64) and two.shape == (2, 64)
    torch.testing.assert_close(two[0], one[0], rtol=0, atol=1e-6)
    torch.testing.assert_close(two[1], one[0], rtol=0, atol=1e-6)


def test_eval_permutation_equivariance():
    enc = build_encoder(TOY_ENCODER, 4).eval()
    x = torch.rand(5, 2, 64, 64)
    perm = torch.tensor([3, 0, 4, 1, 2])
    torch.testing.assert_close(enc(x)[perm], enc(x[perm]), rtol=0, atol=1e-6)


def test_functional_forward_uses_given_params():
    enc = build_encoder(TOY_ENCODER, 5).eval()
    other = init_params(TOY_ENCODER, 6)
    x = torch.rand(2, 2, 64, 64)
    ref = build_encoder(TOY_ENCODER, 6).eval()(x)
    torch.testing.assert_close(encoder_forward(enc, x, other), ref)


def test_shape_mismatch_rejected():
    enc = build_encoder(TOY_ENCODER, 0)
    with pytest.raises(InputError):
        enc(torch.rand(2, 3, 64, 64))
    with pytest.raises(InputError):
        enc(torch.rand(2, 2, 32, 32))
    with pytest.raises(InputError):
        MLPHead(8, 4, 2)(torch.rand(3, 7))
    with pytest.raises(InputError):
        LinearHead(8)(torch.rand(3, 9))


def test_encoder_config_validation():
    with pytest.raises(ConfigurationError):
        EncoderConfig(input_channels=3).validate()
    with pytest.raises(ConfigurationError):
        EncoderConfig(feature_dim=4).validate()


def test_projector_zero_input_gives_final_bias():
    head = he_init_(MLPHead(8, 16, 4), 0)
    out = projector_forward(head, torch.zeros(3, 8))
    assert torch.all(out == 0) and out.shape == (3, 4)


def test_linear_head_bias_and_logistic():
    head = LinearHead(5)
    with torch.no_grad():
        head.fc.weight.zero_()
        head.fc.bias.fill_(0.7)
    out = linear_head_forward(head, torch.rand(4, 5))
    assert out.shape == (4, 1) and torch.all(out == 0.7)
    assert torch.sigmoid(torch.tensor(0.0)).item() == 0.5


def test_flatten_round_trip():
    params = init_params(TOY_ENCODER, 0)
    vec = flatten(params)
    back = unflatten(vec, params)
    assert params_equal(back, params)
    v2 = torch.randn_like(vec)
    assert torch.equal(flatten(unflatten(v2, params)), v2)
    with pytest.raises(InputError):
        unflatten(vec[:-1], params)


def test_clone_is_independent():
    params = init_params(TOY_ENCODER, 0)
    copy = clone_params(params)
    copy["stem.0.weight"].add_(1)
    assert not params_equal(copy, params)


def test_grad_check_quadratic():
    # Central differences are exact on a quadratic, so a wide step only
    # shrinks roundoff.
    theta = {"a": torch.randn(300, dtype=torch.float64), "b": torch.randn(4, 5, dtype=torch.float64)}
    err = grad_check(lambda p: sum((v**2).sum() for v in p.values()) / 2, theta, epsilon=1e-2)
    assert err < 1e-8


def test_grad_check_nonfinite_loss():
    with pytest.raises(NumericalError):
        grad_check(lambda p: p["a"].sum() / 0.0, {"a": torch.ones(3, dtype=torch.float64)})


def test_grad_check_detects_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x**2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.ones(3, dtype=torch.float64)

    assert grad_check(lambda p: Wrong.apply(p["a"]), {"a": torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)}) > 0.1


def test_grad_ntxent_through_projector(toy_stack):
    s = toy_stack
    gen = torch.Generator().manual_seed(1)
    k_pos = torch.randn(4, 6, generator=gen, dtype=torch.float64)
    queue = torch.randn(8, 6, generator=gen, dtype=torch.float64)
    feats = torch.randn(4, 8, generator=gen, dtype=torch.float64)

    def loss(p):
        return ntxent_loss(s.call("projector", p, feats), k_pos, queue, 0.2)

    assert grad_check(loss, s.params("projector")) < 1e-4


def test_grad_byol_through_predictor(toy_stack):
    s = toy_stack
    gen = torch.Generator().manual_seed(2)
    z1 = torch.randn(4, 6, generator=gen, dtype=torch.float64)
    z2 = torch.randn(4, 6, generator=gen, dtype=torch.float64)
    h1 = torch.randn(4, 6, generator=gen, dtype=torch.float64)
    h2 = torch.randn(4, 6, generator=gen, dtype=torch.float64)

    def loss(p):
        return byol_loss(s.call("predictor", p, h1), s.call("predictor", p, h2), z1, z2)

    assert grad_check(loss, s.params("predictor")) < 1e-4


def test_grad_bce_through_linear_head(toy_stack):
    s = toy_stack
    feats = torch.randn(6, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    labels = torch.tensor([0, 1, 1, 0, 1, 0])

    def loss(p):
        return bce_loss(torch.sigmoid(s.call("linear", p, feats).squeeze(1)), labels)

    assert grad_check(loss, s.params("linear")) < 1e-4


def test_grad_through_two_block_encoder(toy_stack):
    s = toy_stack

    def loss(p):
        f = s.call("encoder", p, s.x1)
        return (torch.tanh(f) ** 2).sum() + f[:, 0].mean()

    assert grad_check(loss, s.params("encoder"), n_coords=200) < 1e-4
