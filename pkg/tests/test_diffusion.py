import dataclasses
import copy
import math

import numpy as np
import pytest
import torch

from shimforge.diffusion import (
    Denoiser,
    DenoiserConfig,
    DiffusionModel,
    SamplerGrid,
    decode,
    encode,
    forward_diffuse,
    load_weights,
    make_schedule,
    procedural_dataset,
    save_weights,
    train_denoiser,
)
from shimforge.diffusion.denoiser import count_parameters
from shimforge.diffusion.weights import MAGIC, from_bytes, to_bytes
from shimforge.errors import ArtifactIOError, ChecksumError, ConfigError, GridError, ShapeError, TrainingError


def test_schedule_invariants():
    s = make_schedule(1000)
    ab = s.alpha_bar[1:]
    assert np.all(np.diff(ab) < 0)
    assert ab[0] > 0.99 and ab[-1] < 0.01
    assert np.all((ab > 0) & (ab < 1))
    # independent product of 1 - beta
    betas = np.linspace(1e-4, 0.02, 1000)
    assert ab[-1] == pytest.approx(math.prod(1 - b for b in betas), rel=1e-12)


def test_schedule_two_steps_closed_form():
    s = make_schedule(2)
    assert s.alpha_bar[2] == pytest.approx((1 - 1e-4) * (1 - 0.02), rel=1e-15)
    with pytest.raises(ConfigError):
        make_schedule(1)


def test_grid():
    g = SamplerGrid(1000, 50)
    assert g.timesteps[0] == 20 and g.timesteps[-1] == 1000 and len(g.timesteps) == 50
    assert g.prev(20) == 0 and g.prev(140) == 120 and g.next(120) == 140
    assert 140 in g and 130 not in g
    assert g.descending_from(60) == [60, 40, 20]
    with pytest.raises(GridError):
        g.check(130)


def test_forward_diffuse_cases():
    s = make_schedule(1000)
    x0 = torch.rand(2, 3, 32, 32, dtype=torch.float64) * 2 - 1
    zero = torch.zeros_like(x0)
    assert torch.equal(forward_diffuse(s, x0, 300, zero), math.sqrt(s.alpha_bar[300]) * x0)
    assert torch.allclose(forward_diffuse(s, x0, 1, torch.randn_like(x0)), x0, atol=0.05)
    with pytest.raises(ConfigError):
        forward_diffuse(s, x0, 0, zero)


def test_forward_diffuse_variance():
    s = make_schedule(1000)
    x0 = torch.full((10000, 1, 1, 1), 0.3, dtype=torch.float64)
    noise = torch.from_numpy(np.random.default_rng(0).standard_normal(x0.shape))
    t = 400
    resid = forward_diffuse(s, x0, t, noise) - math.sqrt(s.alpha_bar[t]) * x0
    assert float(resid.var()) == pytest.approx(1 - s.alpha_bar[t], rel=0.03)


def test_codec():
    img = np.random.default_rng(0).uniform(0, 1, (2, 32, 32, 3))
    z = encode(img)
    assert z.shape == (2, 3, 32, 32)
    assert np.array_equal(decode(z), img)
    edge = encode(np.array([[[[0.0, 1.0, 0.5]]]]))
    assert edge.flatten().tolist() == [-1.0, 1.0, 0.0]
    assert decode(torch.full((1, 3, 2, 2), 3.0)).max() == 1.0
    assert decode(torch.full((1, 3, 2, 2), -3.0)).min() == 0.0


def test_denoiser_size_and_shapes(random_denoiser):
    assert count_parameters(random_denoiser) <= 200_000
    x = torch.randn(2, 3, 32, 32)
    e = random_denoiser.null_context.detach()
    out = random_denoiser(x, torch.tensor(10), e)
    assert out.shape == x.shape
    with pytest.raises(ShapeError):
        random_denoiser(torch.randn(2, 3, 16, 16), torch.tensor(10), e)
    with pytest.raises(ShapeError):
        random_denoiser(x, torch.tensor(10), torch.randn(5, 32))


def test_denoiser_deterministic_and_zero_shim(random_model64):
    m = random_model64
    x = torch.randn(2, 3, 32, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    a = m.predict(x, 500)
    b = m.predict(x.clone(), 500)
    c = m.predict(x, 500, m.null_context + torch.zeros_like(m.null_context))
    assert torch.equal(a, b) and torch.equal(a, c)


def test_attention_rows_sum_to_one_and_linear_in_values(random_model64):
    attn = random_model64.denoiser.attn
    attn.keep_weights = True
    try:
        random_model64.predict(torch.randn(2, 3, 32, 32, dtype=torch.float64), 300)
        w = attn.last_weights
    finally:
        attn.keep_weights = False
    assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-12)
    v1, v2 = torch.randn(2, w.shape[-1], 32, dtype=torch.float64), torch.randn(2, w.shape[-1], 32, dtype=torch.float64)
    assert torch.allclose(w @ (2 * v1 + v2), 2 * (w @ v1) + w @ v2, atol=1e-12)


def test_ddim_update_matches_textbook_and_zeta(random_model64):
    m = random_model64
    x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    for t in m.grid.timesteps:
        eps = m.predict(x, t)
        scale, zeta = m.coefficients(t)
        assert torch.allclose(scale * x - zeta * eps, m.ddim_update(x, t, eps), atol=1e-10, rtol=0)
        prev = m.grid.prev(t)
        ab_t, ab_p = m.alpha_bar(t), m.alpha_bar(prev)
        expected = math.sqrt(ab_p / ab_t) * math.sqrt(1 - ab_t) - math.sqrt(1 - ab_p)
        assert abs(zeta - expected) < 1e-10


def _zero_eps_model(den):
    eps_den = Denoiser(dataclasses.replace(den.config, prediction="eps"))
    eps_den.load_state_dict(den.state_dict())
    den = eps_den
    with torch.no_grad():
        den.conv_out.weight.zero_()
        den.conv_out.bias.zero_()
    return DiffusionModel(den, dtype=torch.float64)


def test_zero_noise_prediction_chain(random_denoiser):
    m = _zero_eps_model(random_denoiser)
    x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    step = m.sampler_step(x, 500)
    assert torch.allclose(step, math.sqrt(m.alpha_bar(480) / m.alpha_bar(500)) * x, rtol=1e-14, atol=0)
    out = m.generate(x)
    assert torch.allclose(out, x / math.sqrt(m.alpha_bar(1000)), rtol=1e-10, atol=0)


def test_final_step_returns_x0_prediction(random_model64):
    m = random_model64
    x = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    eps = m.predict(x, 20)
    x0_hat = (x - math.sqrt(1 - m.alpha_bar(20)) * eps) / math.sqrt(m.alpha_bar(20))
    assert torch.allclose(m.sampler_step(x, 20), x0_hat, atol=1e-12)


def test_off_grid_step_rejected(random_model64):
    with pytest.raises(GridError):
        random_model64.sampler_step(torch.zeros(1, 3, 32, 32, dtype=torch.float64), 130)


def test_invert_step_composition(random_model64):
    m = random_model64
    x = torch.randn(2, 3, 32, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    for t in (20, 500, 1000):
        xr = m.invert_step(x, t)
        assert float((m.sampler_step(xr, t) - x).abs().max()) < 1e-6


def test_invert_zero_image_is_finite_and_deterministic(random_denoiser):
    m = DiffusionModel(random_denoiser, dtype=torch.float32)
    z = torch.zeros(1, 3, 32, 32)
    a = m.invert(z, upto=200)
    b = m.invert(z, upto=200)
    assert a.timesteps == [0, 20, 40, 60, 80, 100, 120, 140, 160, 180, 200]
    for t in a.timesteps:
        assert torch.isfinite(a[t]).all()
        assert torch.equal(a[t], b[t])


def test_weights_round_trip_bit_exact(tmp_path, random_denoiser):
    path = tmp_path / "w.bin"
    save_weights(path, random_denoiser, {"step": 7})
    den, meta = load_weights(path)
    assert meta == {"step": 7}
    assert path.read_bytes().startswith(MAGIC)
    for (n1, p1), (n2, p2) in zip(random_denoiser.state_dict().items(), den.state_dict().items()):
        assert n1 == n2
        assert torch.equal(p1.double(), p2)
    assert to_bytes(den, meta) == path.read_bytes()


def test_weights_corruption_detected(tmp_path, random_denoiser):
    blob = bytearray(to_bytes(random_denoiser))
    blob[len(blob) // 2] ^= 0x01
    with pytest.raises(ChecksumError):
        from_bytes(bytes(blob))
    with pytest.raises(ArtifactIOError):
        from_bytes(b"not a weights file")


def test_training_short_run_is_deterministic_and_learns():
    data = procedural_dataset(64, 3)
    cfg = DenoiserConfig(channels=(8, 8, 16), time_knots=16)
    a = train_denoiser(data, steps=30, seed=1, model_config=cfg)
    b = train_denoiser(data, steps=30, seed=1, model_config=cfg)
    for p, q in zip(a.denoiser.parameters(), b.denoiser.parameters()):
        assert torch.equal(p, q)
    assert a.losses == b.losses
    long = train_denoiser(data, steps=300, seed=1, model_config=cfg)
    assert long.running_loss("last", 50) < 0.5 * long.running_loss("first", 50)
    assert long.log_rows(50)[-1][0] == 300


def test_training_resume_continues_step_count():
    data = procedural_dataset(16, 4)
    cfg = DenoiserConfig(channels=(8, 8, 16), time_knots=16)
    a = train_denoiser(data, steps=20, seed=1, model_config=cfg)
    b = train_denoiser(data, steps=10, seed=2, init=a.denoiser, start_step=a.step)
    assert b.step == 30 and b.log_rows(10) == [(30, pytest.approx(np.mean(b.losses)))]


def test_training_divergence_reports_step():
    data = procedural_dataset(8, 5)
    cfg = DenoiserConfig(channels=(8, 8, 16), time_knots=16)
    den = Denoiser(cfg)
    with torch.no_grad():
        den.conv_out.bias.fill_(float("nan"))
    with pytest.raises(TrainingError) as info:
        train_denoiser(data, steps=5, seed=0, init=den, start_step=40)
    assert info.value.step == 40


def test_training_rejects_empty_dataset():
    with pytest.raises(ConfigError):
        train_denoiser(np.empty((0, 32, 32, 3)), steps=1)


def test_invert_step_is_per_sample(random_denoiser):
    m = DiffusionModel(random_denoiser, dtype=torch.float32)
    g = torch.Generator().manual_seed(5)
    # mixed scales finish after different numbers of iterations
    x = torch.cat([0.3 * torch.randn(2, 3, 32, 32, generator=g), 3 * torch.randn(3, 3, 32, 32, generator=g)])
    for t in (20, 600, 1000):
        batch = m.invert_step(x, t)
        for i in range(len(x)):
            alone = m.invert_step(x[i : i + 1], t)
            assert float((batch[i] - alone[0]).abs().max()) < 1e-4
        assert float((m.sampler_step(batch, t) - x).abs().max()) < 1e-4


def test_v_output_converts_to_noise(random_denoiser):
    den = copy.deepcopy(random_denoiser).double()
    x = torch.randn(2, 3, 32, 32, dtype=torch.float64)
    t = torch.tensor([20, 1000])
    ctx = den.null_context.detach()
    v = den.raw(x, t, ctx)
    eps = den(x, t, ctx)
    ab = torch.tensor([den.alpha_bar[20], den.alpha_bar[1000]], dtype=torch.float64)[:, None, None, None]
    # the implied clean image is sqrt(ab) x - sqrt(1-ab) v
    x0 = (x - (1 - ab).sqrt() * eps) / ab.sqrt()
    assert torch.allclose(x0, ab.sqrt() * x - (1 - ab).sqrt() * v, atol=1e-9, rtol=0)
