import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from shimforge import __version__
from shimforge.cli import main
from shimforge.diffusion import Denoiser, DenoiserConfig, DiffusionModel, load_weights, procedural_dataset, quantize8
from shimforge.io import config_hash

ROOT = Path(__file__).resolve().parents[1]
PIPELINE = {"seed": 0, "n_data": 2000, "steps": 6000, "batch_size": 32, "version": __version__}


def pytest_configure(config):
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def random_denoiser():
    torch.manual_seed(0)
    return Denoiser(DenoiserConfig())


@pytest.fixture(scope="session")
def random_model64(random_denoiser):
    return DiffusionModel(random_denoiser, dtype=torch.float64)


@pytest.fixture(scope="session")
def small_images():
    return quantize8(procedural_dataset(8, 99))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pipeline():
    root = ROOT / ".acceptance_cache" / config_hash(PIPELINE)
    done = root / "done.json"
    if done.is_file():
        return root, json.loads(done.read_text())
    if root.exists():
        pytest.fail(f"{root} holds an incomplete run; delete it and re-run")
    seed = str(PIPELINE["seed"])
    timings, codes = {}, {}
    steps = [
        ("gen-data", ["gen-data", "--n", str(PIPELINE["n_data"]), "--out", str(root / "data")]),
        ("train", ["train", "--data", str(root / "data" / "images"), "--steps", str(PIPELINE["steps"]),
                   "--batch-size", str(PIPELINE["batch_size"]), "--out", str(root / "train")]),
        ("eval", ["eval", "--weights", str(root / "train" / "weights.bin"), "--out", str(root / "eval")]),
        ("eval-repeat", ["eval", "--weights", str(root / "train" / "weights.bin"), "--out", str(root / "eval-repeat")]),
    ]
    for name, argv in steps:
        started = time.perf_counter()
        codes[name] = main([argv[0], "--seed", seed, *argv[1:]])
        timings[name] = time.perf_counter() - started
        if codes[name] not in (0, 1):
            pytest.fail(f"{name} exited with {codes[name]}")
    info = {"timings": timings, "codes": codes}
    done.write_text(json.dumps(info, indent=2))
    return root, info


@pytest.fixture(scope="session")
def report(pipeline):
    return json.loads((pipeline[0] / "eval" / "report.json").read_text())


@pytest.fixture(scope="session")
def bench_timings(pipeline):
    return json.loads((pipeline[0] / "eval" / "timings.json").read_text())


@pytest.fixture(scope="session")
def trained(pipeline):
    return load_weights(pipeline[0] / "train" / "weights.bin")[0]
