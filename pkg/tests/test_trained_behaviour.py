"""Properties of a trained anchored two-moons model (one training run shared by the module)."""

import numpy as np
import pytest
from scipy.spatial import Delaunay

from anchored_ood import config, experiments
from anchored_ood.datasets import rotate
from anchored_ood.metrics import auroc
from anchored_ood.ntk import grid_points, model_predictor, toy_anchor_demo
from anchored_ood.scoring import draw_anchors

from conftest import ROOT


@pytest.fixture(scope="module")
def trained():
    cfg = config.load(ROOT / "configs" / "two_moons.ini")
    data = experiments.prepare_data(cfg)
    return cfg, data, experiments.train_model(cfg, data, anchored=True).model


def test_std_map_peaks_away_from_training_data(trained):
    cfg, data, model = trained
    anchors = draw_anchors(data.x_train, 5, seed=1)
    hull = Delaunay(data.x_train)
    axis = np.linspace(-2.5, 2.5, 41)
    demo = toy_anchor_demo(model_predictor(model), anchors, axis, axis)
    inside = hull.find_simplex(grid_points(axis, axis)) >= 0
    ring = experiments.ood_features(cfg, data)
    ring_std = np.stack([model_predictor(model)(c, ring) for c in anchors]).std(axis=0)
    assert ring_std.max() > demo.std.ravel()[inside].max()


def test_rotation_difficulty_is_monotone_for_small_angles(trained):
    # two moons is symmetric under a half turn, so detection only gets easier up to about 0.6 rad
    cfg, data, model = trained
    values = []
    for theta in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6):
        shifted = data.normalizer(rotate(data.test, theta).features)
        table = experiments.score_split(cfg, model, True, data, shifted)
        values.append(auroc(table.amp[table.is_ood == 0], table.amp[table.is_ood == 1]))
    assert all(b > a for a, b in zip(values, values[1:]))
