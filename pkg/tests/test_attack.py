import json

import numpy as np
import pytest
import torch

from shimforge.attack import (
    AttackConfig,
    load_config,
    optimize_shim,
    preset,
    regen,
    rinse,
    run_attack,
    shim_gradient,
    step_memory_bytes,
)
from shimforge.attack.ambiguity import ambiguity_coexist
from shimforge.attack.shim import shim_objective
from shimforge.diffusion import Denoiser, DenoiserConfig, DiffusionModel, encode
from shimforge.errors import ConfigError
from shimforge.watermark import TreeRingKey


def fd_check(model, t, delta, x_t, anchor, cfg, coords, h=1e-5):
    grad, _, _ = shim_gradient(model, t, delta, x_t, anchor, cfg)
    worst = 0.0
    for idx in coords:
        plus, minus = delta.clone(), delta.clone()
        plus[idx] += h
        minus[idx] -= h
        # only sample idx[0] depends on this coordinate
        with torch.no_grad():
            fp = shim_objective(model, t, plus, x_t, anchor, cfg)[0].total[idx[0]]
            fm = shim_objective(model, t, minus, x_t, anchor, cfg)[0].total[idx[0]]
        fd = float((fp - fm) / (2 * h))
        g = float(grad[idx])
        worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-12))
    return worst


FD_CONFIGS = [
    dict(gamma1=1e5, gamma2=0.1, eps_hat=10.0, t=100, scale=0.5),
    dict(gamma1=1e5, gamma2=0.1, eps_hat=10.0, t=600, scale=3.0),
    dict(gamma1=1.0, gamma2=10.0, eps_hat=1.0, t=200, scale=2.0),
    dict(gamma1=1e3, gamma2=1.0, eps_hat=5.0, t=60, scale=1.0),
    dict(gamma1=10.0, gamma2=0.0, eps_hat=20.0, t=1000, scale=4.0),
]


def fd_case(model, case: int, seed: int):
    """Random shim and latent; the anchor sits near the unshimmed step, as it does during an attack."""
    c = FD_CONFIGS[case]
    cfg = AttackConfig(K=1000, selected=(c["t"],), gamma1=c["gamma1"], gamma2=c["gamma2"], eps_hat=c["eps_hat"])
    g = torch.Generator().manual_seed(seed)
    delta = c["scale"] * torch.randn(2, *model.null_context.shape, dtype=torch.float64, generator=g)
    x_t = torch.randn(2, 3, 32, 32, dtype=torch.float64, generator=g)
    with torch.no_grad():
        anchor = model.sampler_step(x_t, c["t"]) + 0.1 * torch.randn(2, 3, 32, 32, dtype=torch.float64, generator=g)
    rng = np.random.default_rng(seed)
    coords = [tuple(int(rng.integers(n)) for n in delta.shape) for _ in range(20)]
    return c["t"], delta, x_t, anchor, cfg, coords


@pytest.mark.parametrize("case", range(len(FD_CONFIGS)))
def test_gradient_matches_central_differences(random_model64, case):
    assert fd_check(random_model64, *fd_case(random_model64, case, case)) < 1e-4


def test_gradient_on_hinge_plateau_is_semantic_only(random_model64):
    m = random_model64
    cfg = AttackConfig(gamma1=1e5, gamma2=0.0, eps_hat=1.0)
    delta = 2.0 * torch.ones(1, *m.null_context.shape, dtype=torch.float64)
    x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    grad, terms, _ = shim_gradient(m, 100, delta, x, x, cfg)
    assert float(terms.norm[0]) == 0.0
    d = delta.clone().requires_grad_(True)
    e = m.null_context
    shifted = (e + d).flatten(1)
    cos = (shifted @ e.reshape(-1, 1)).squeeze() / (shifted.norm() * e.norm())
    (expected,) = torch.autograd.grad(-1e5 * cos, d)
    assert torch.allclose(grad, expected, rtol=1e-10, atol=1e-10)


def test_one_forward_per_iteration(random_model64):
    m = random_model64
    cfg = AttackConfig(max_iters=7, tol=0.0)
    x = torch.randn(2, 3, 32, 32, dtype=torch.float64)
    before = m.calls
    _, _, trace = optimize_shim(m, 100, x, x, cfg)
    assert trace.iterations == 7
    assert trace.calls == trace.iterations == m.calls - before


def test_gradient_independent_of_retained_history(random_model64):
    m = random_model64
    cfg = AttackConfig()
    x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    delta = torch.randn(1, *m.null_context.shape, dtype=torch.float64)
    anchor = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    g1, _, _ = shim_gradient(m, 100, delta, x.clone(), anchor, cfg)
    # x_t produced by a graph-carrying chain of earlier steps
    x0 = x.clone().requires_grad_(True)
    with torch.enable_grad():
        chained = m.sampler_step(m.sampler_step(x0 * 1.0, 140), 120)
        chained = chained - chained.detach() + x
        g2, _, _ = shim_gradient(m, 100, delta, chained, anchor, cfg)
    assert torch.equal(g1, g2)


def test_step_memory_independent_of_total_timesteps():
    sizes = []
    for T in (500, 1000, 2000):
        torch.manual_seed(0)
        m = DiffusionModel(Denoiser(DenoiserConfig(T=T)), dtype=torch.float64)
        x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
        sizes.append(step_memory_bytes(m, 200, torch.zeros(1, *m.null_context.shape, dtype=torch.float64), x, x, AttackConfig()))
    assert sizes[0] == sizes[1] == sizes[2] > 0


def test_max_iters_zero_is_plain_step(random_model64):
    m = random_model64
    x = torch.randn(2, 3, 32, 32, dtype=torch.float64)
    delta, x_prev, trace = optimize_shim(m, 100, x, x, AttackConfig(max_iters=0))
    assert torch.all(delta == 0)
    assert torch.equal(x_prev, m.sampler_step(x, 100))
    assert trace.iterations == 0


def test_zero_shim_neutral_with_noisy_start(random_denoiser, small_images):
    m = DiffusionModel(random_denoiser)
    cfg = AttackConfig(K=140, selected=(100, 60), max_iters=0, seed=5)
    out = run_attack(m, small_images[:2], cfg).images
    assert np.array_equal(out, regen(m, small_images[:2], 140, seed=5))
    empty = run_attack(m, small_images[:2], cfg.with_(selected=())).images
    assert np.array_equal(empty, out)


def test_attack_deterministic(random_denoiser, small_images):
    m = DiffusionModel(random_denoiser)
    cfg = AttackConfig(K=140, selected=(100,), max_iters=3, seed=1)
    a = run_attack(m, small_images[:2], cfg)
    b = run_attack(m, small_images[:2], cfg)
    assert np.array_equal(a.images, b.images)
    assert list(a.trace_rows()) == list(b.trace_rows())


def test_trace_csv(tmp_path, random_denoiser, small_images):
    m = DiffusionModel(random_denoiser)
    res = run_attack(m, small_images[:1], AttackConfig(K=140, selected=(100,), max_iters=4))
    path = tmp_path / "trace.csv"
    res.write_trace_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,t,sample,L_norm,L_semantic,L_align,L_total,delta_norm"
    assert len(lines) == 1 + res.traces[0].iterations


def test_rinse_one_round_equals_regen(random_denoiser, small_images):
    m = DiffusionModel(random_denoiser)
    assert np.array_equal(rinse(m, small_images[:2], 100, 1, seed=3), regen(m, small_images[:2], 100, seed=3))
    with pytest.raises(ConfigError):
        rinse(m, small_images[:2], 100, 0)


def test_off_grid_config_rejected(random_denoiser, small_images):
    m = DiffusionModel(random_denoiser)
    with pytest.raises(ConfigError):
        run_attack(m, small_images[:1], AttackConfig(K=150, selected=(100,)))


def test_presets_carry_published_values():
    late, early = preset("late-noisy"), preset("early-inverse")
    assert (late.K, late.selected, late.start_mode) == (140, (100, 60), "noisy")
    assert (early.K, early.selected, early.start_mode) == (1000, (600, 200), "inverse")
    for p in (late, early):
        assert (p.gamma1, p.gamma2, p.eps_hat, p.lr, p.clip_norm) == (1e5, 0.1, 10.0, 0.01, 1.0)
    with pytest.raises(ConfigError):
        preset("nope")


def test_config_validation_and_json(tmp_path):
    with pytest.raises(ConfigError):
        AttackConfig(K=100, selected=(120,))
    with pytest.raises(ConfigError):
        AttackConfig(start_mode="sideways")
    with pytest.raises(ConfigError):
        AttackConfig.from_dict({"K": 140, "bogus": 1})
    cfg = AttackConfig(eps_hat={100: 5.0, 60: 8.0})
    assert cfg.margin(60) == 8.0
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg


def test_coexist_rejects_same_channel(random_denoiser, small_images):
    m = DiffusionModel(random_denoiser)
    with pytest.raises(ConfigError):
        ambiguity_coexist(m, small_images[:1], TreeRingKey.random(1, channel=0), avoid_channel=0)


def test_inverse_start_uses_anchor(random_denoiser, small_images):
    m = DiffusionModel(random_denoiser)
    cfg = AttackConfig(K=200, selected=(), start_mode="inverse")
    res = run_attack(m, small_images[:1], cfg)
    anchors = m.invert(encode(small_images[:1], dtype=m.dtype), upto=200)
    assert torch.equal(res.start_latent, anchors[200])
