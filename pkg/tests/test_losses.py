import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from shimforge.attack import AttackConfig, Shim, loss_align, loss_norm, loss_semantic, loss_total
from shimforge.attack.shim import adamw_update
from shimforge.errors import NumericError, ShapeError

E = torch.randn(4, 32, generator=torch.Generator().manual_seed(0), dtype=torch.float64)


@pytest.fixture(autouse=True)
def float64_default():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def test_hinge_values():
    d = torch.zeros(2, 4, 32)
    d[1, 0, 0] = 12.0
    assert torch.equal(loss_norm(d, 10.0), torch.tensor([10.0, 0.0]))
    d[1, 0, 0] = 3.0
    assert loss_norm(d, 10.0)[1] == pytest.approx(7.0)


def test_hinge_gradient_is_zero_on_plateau_and_at_origin():
    d = torch.zeros(1, 4, 32, requires_grad=True)
    (g,) = torch.autograd.grad(loss_norm(d, 10.0).sum(), d)
    assert torch.all(g == 0)
    d = torch.full((1, 4, 32), 2.0, requires_grad=True)
    (g,) = torch.autograd.grad(loss_norm(d, 10.0).sum(), d)
    assert torch.all(g == 0)


def test_semantic_bounds_and_extremes():
    assert loss_semantic(torch.zeros(4, 32), E).item() == pytest.approx(-1.0)
    assert loss_semantic(2.5 * E, E).item() == pytest.approx(-1.0)
    assert loss_semantic(-2 * E, E).item() == pytest.approx(1.0)
    with pytest.raises(NumericError):
        loss_semantic(-E, E)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_semantic_in_unit_interval(seed, scale):
    d = scale * torch.randn(3, 4, 32, generator=torch.Generator().manual_seed(seed))
    s = loss_semantic(d, E)
    assert torch.all(s >= -1 - 1e-12) and torch.all(s <= 1 + 1e-12)


def test_semantic_gradient_along_null_context_is_zero():
    d = torch.zeros(1, 4, 32, requires_grad=True)
    (g,) = torch.autograd.grad(loss_semantic(d, E).sum(), d)
    assert abs(float((g[0] * E).sum())) < 1e-12


def test_align_mse_and_shape_check():
    x = torch.randn(2, 3, 4, 4)
    assert torch.allclose(loss_align(x, x + 0.5), torch.full((2,), 0.25))
    with pytest.raises(ShapeError):
        loss_align(x, x[:, :2])


def test_total_is_weighted_sum():
    g = torch.Generator().manual_seed(3)
    d = torch.randn(2, 4, 32, generator=g)
    x, a = torch.randn(2, 3, 4, 4, generator=g), torch.randn(2, 3, 4, 4, generator=g)
    t = loss_total(d, E, x, a, 10.0, 1e5, 0.1)
    assert torch.allclose(t.total, t.norm + 1e5 * t.semantic + 0.1 * t.align, rtol=0, atol=1e-12 * 1e5)
    zero = loss_total(d, E, x, a, 10.0, 0.0, 0.0)
    assert torch.equal(zero.total, loss_norm(d, 10.0))


def test_adamw_matches_torch_optimizer():
    cfg = AttackConfig(lr=0.01, weight_decay=1e-3, clip_norm=1.0)
    g = torch.Generator().manual_seed(4)
    shim = Shim.zeros(100, 2, E)
    shim.delta = torch.randn(2, 4, 32, generator=g)
    refs = [torch.nn.Parameter(shim.delta[i].clone()) for i in range(2)]
    opts = [torch.optim.AdamW([p], lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-3) for p in refs]
    for _ in range(25):
        grad = 3 * torch.randn(2, 4, 32, generator=g)
        adamw_update(shim, grad, torch.ones(2, dtype=torch.bool), cfg)
        for p, opt, gi in zip(refs, opts, grad):
            p.grad = gi.clone()
            torch.nn.utils.clip_grad_norm_([p], 1.0)
            opt.step()
    for i in range(2):
        assert torch.allclose(shim.delta[i], refs[i].detach(), rtol=1e-10, atol=1e-12)


def test_adamw_leaves_inactive_samples_alone():
    cfg = AttackConfig()
    shim = Shim.zeros(100, 2, E)
    before = shim.delta.clone()
    adamw_update(shim, torch.ones(2, 4, 32), torch.tensor([True, False]), cfg)
    assert torch.equal(shim.delta[1], before[1])
    assert not torch.equal(shim.delta[0], before[0])
    assert shim.steps.tolist() == [1, 0]

