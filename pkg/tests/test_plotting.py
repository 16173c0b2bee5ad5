import numpy as np
import pytest
from matplotlib import colormaps
from PIL import Image

from shimforge.errors import ShapeError
from shimforge.metrics import Cell, MetricsReport
from shimforge.plotting import diff_grid, diff_grid_figure, plot_bit_accuracy, plot_roc


@pytest.fixture
def images(rng):
    return rng.uniform(0, 1, (4, 32, 32, 3))


def test_grid_width_and_zero_diff_panel(images):
    target = images[0]
    iterates = [("it 0", target.copy()), ("it 5", images[1]), ("it 10", images[2])]
    fig = diff_grid_figure(target, iterates, images[3])
    assert len(fig.axes) == len(iterates) + 2
    first = fig.axes[1].images[0]
    assert np.all(first.get_array() == 0)
    rgba = first.to_rgba(first.get_array())
    assert np.allclose(rgba[..., :3], colormaps["magma"](0.0)[:3])
    assert max(colormaps["magma"](0.0)[:3]) < 0.02


def test_grid_rejects_mismatched_shapes(images):
    with pytest.raises(ShapeError):
        diff_grid_figure(images[0], [("it 0", images[1][:16])], images[2])


def test_figures_are_reproducible(tmp_path, images):
    a = diff_grid(images[0], [("it 0", images[1])], images[2], tmp_path / "a.png")
    b = diff_grid(images[0], [("it 0", images[1])], images[2], tmp_path / "b.png")
    assert a.read_bytes() == b.read_bytes()
    assert Image.open(a).size[0] > Image.open(a).size[1]


def test_report_figures(tmp_path):
    rep = MetricsReport(config={}, seeds={})
    rep.cells = [Cell("spread", "watermarked", n=4, BA=1.0), Cell("spread", "regen", n=4, BA=0.5)]
    rep.rocs = {"spread/regen": {"null": list(np.linspace(0.3, 0.7, 500)), "positive": [0.5, 0.9]}}
    assert plot_roc(rep, "spread", tmp_path / "roc.png").stat().st_size > 0
    assert plot_bit_accuracy(rep, tmp_path / "ba.png").stat().st_size > 0
