"""Config-driven experiments behind the CLI verbs.

Each ``run_*`` function writes its artifacts into ``out_dir`` and returns a
dict mapping artifact names to paths. Outputs depend only on the config
(including its seed); nothing here writes timestamps.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import checkpoint, datasets
from .anchoring import TrainResult, Transform, train_anchored, train_vanilla
from .config import TRANSFORM_SETS, ExperimentConfig
from .errors import ShapeError
from .metrics import all_metrics, evaluate_rules, metrics_csv, metrics_table, overlap_coefficient, METRIC_COLUMNS
from .nn import MlpModel
from .ntk import (
    gamma,
    gram_analytic,
    gram_anchored,
    interior_unit_pairs,
    kernel_spectrum,
    ntk_convergence,
    ntk_predictor,
    random_unit_pairs,
    toy_anchor_demo,
    unit_circle_grid,
    anchored_kernel,
)
from .scoring import ScoreTable, draw_anchors, score_dataset


@dataclass
class PreparedData:
    train: datasets.SyntheticDataset
    test: datasets.SyntheticDataset
    normalizer: datasets.Normalizer

    @property
    def x_train(self) -> np.ndarray:
        return self.normalizer(self.train.features)

    @property
    def x_test(self) -> np.ndarray:
        return self.normalizer(self.test.features)

    @property
    def num_classes(self) -> int:
        return self.train.num_classes


def _csv_text(header: List[str], rows, version: str) -> str:
    buf = io.StringIO()
    buf.write(f"# format={version}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    d = cfg["dataset"]
    seeds = cfg.seeds()
    if d["generator"] == "two_moons":
        train = datasets.gen_two_moons(d["n_train"], d["noise"], seeds["data"])
        test = datasets.gen_two_moons(d["n_test"], d["noise"], seeds["test"])
    else:
        train = datasets.gen_gaussian_blobs(d["n_train"], d["centers"], d["sigma"], seeds["data"])
        test = datasets.gen_gaussian_blobs(d["n_test"], d["centers"], d["sigma"], seeds["test"])
    return PreparedData(train, test, datasets.Normalizer.fit(train.features))


def layer_sizes(cfg: ExperimentConfig, data: PreparedData, anchored: bool | None = None) -> tuple:
    anchored = cfg["model"]["anchored"] if anchored is None else anchored
    d = data.train.dim
    return ((2 * d) if anchored else d, *cfg["model"]["hidden"], data.num_classes)


def train_model(
    cfg: ExperimentConfig, data: PreparedData, anchored: bool | None = None, transforms=None
) -> TrainResult:
    anchored = cfg["model"]["anchored"] if anchored is None else anchored
    model = MlpModel.init(layer_sizes(cfg, data, anchored), cfg.seeds()["init"])
    if anchored:
        return train_anchored(model, data.x_train, data.train.labels, cfg.sgd(), cfg.consistency(transforms))
    return train_vanilla(model, data.x_train, data.train.labels, cfg.sgd())


def ood_features(cfg: ExperimentConfig, data: PreparedData, kind: str | None = None, level: int | None = None):
    """Normalized OOD features per ``[ood]``; ``kind``/``level`` override the config."""
    o = cfg["ood"]
    kind = kind or o["generator"]
    seed = cfg.seeds()["ood"]
    if kind == "ring":
        data_radius = float(np.linalg.norm(data.x_train, axis=1).max())
        ring = datasets.gen_ood_ring(o["n"], o["radius_factor"] * data_radius,
                                     o["width_factor"] * data_radius, seed, dim=data.train.dim)
        return ring.features
    if kind == "rotated":
        return data.normalizer(datasets.rotate(data.test, o["rotation"]).features)
    if kind == "corrupted":
        lvl = o["level"] if level is None else level
        return data.normalizer(datasets.corrupt(data.test, o["corruption"], lvl, seed).features)
    if kind == "id":
        d = cfg["dataset"]
        if d["generator"] == "two_moons":
            fresh = datasets.gen_two_moons(o["n"], d["noise"], seed)
        else:
            fresh = datasets.gen_gaussian_blobs(o["n"], d["centers"], d["sigma"], seed)
        return data.normalizer(fresh.features)
    raise ValueError(f"unknown OOD generator {kind!r}")


def score_split(
    cfg: ExperimentConfig, model: MlpModel, anchored: bool, data: PreparedData, x_ood, k: int | None = None
) -> ScoreTable:
    """ID test rows (``is_ood=0``) followed by OOD rows, scored with one shared anchor draw."""
    k = cfg["inference"]["k"] if k is None else k
    mode = cfg.temperature()
    anchors = draw_anchors(data.x_train, k, cfg.seeds()["anchors"]) if anchored else None
    common = dict(mode=mode, anchored=anchored, anchors=anchors)
    id_table = score_dataset(model, data.x_test, labels=data.test.labels, is_ood=0, **common)
    ood_table = score_dataset(model, x_ood, is_ood=1, **common)
    return ScoreTable.concat([id_table, ood_table])


def id_accuracy(table: ScoreTable) -> float:
    ids = table.is_ood == 0
    return float(np.mean(table.pred_class[ids] == table.label[ids]))


def check_architecture(cfg: ExperimentConfig, data: PreparedData, model: MlpModel, anchored: bool) -> None:
    expected = layer_sizes(cfg, data, anchored)
    if tuple(model.layer_sizes) != tuple(expected):
        raise ShapeError(
            f"checkpoint architecture {list(model.layer_sizes)} does not match "
            f"config architecture {list(expected)}"
        )


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def run_train(cfg: ExperimentConfig, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    data = prepare_data(cfg)
    anchored = cfg["model"]["anchored"]
    result = train_model(cfg, data)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    checkpoint.save(ckpt, result.model, anchored, {"config_seed": cfg.seed})
    trace = _csv_text(
        ["epoch", "loss", "accuracy", "lr"],
        ((r.epoch, r.loss, r.accuracy, r.lr) for r in result.trace),
        "train_trace/1",
    )
    return {"checkpoint": ckpt, "trace": _write(out / "train_trace.csv", trace)}


def run_eval(cfg: ExperimentConfig, checkpoint_path, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    model, meta = checkpoint.load(checkpoint_path)
    anchored = meta.get("anchored", "true") == "true"
    data = prepare_data(cfg)
    check_architecture(cfg, data, model, anchored)
    table = score_split(cfg, model, anchored, data, ood_features(cfg, data))
    table.meta.update({"ood": cfg["ood"]["generator"], "seed": str(cfg.seed)})
    rules = [r for r in cfg["inference"]["rules"] if anchored or r != "amp"] or ["msp"]
    rows = evaluate_rules(table, rules)
    header = (f"# k={table.meta['k']} temperature={table.meta['temperature']} "
              f"ood={cfg['ood']['generator']} id_accuracy={id_accuracy(table):.4f}\n")
    return {
        "scores": _write(out / "scores.csv", table.to_csv()),
        "metrics": _write(out / "metrics.csv", metrics_csv(rows)),
        "table": _write(out / "metrics.txt", header + metrics_table(rows)),
    }


def ablation_grid(cfg: ExperimentConfig) -> Dict[str, Dict[int, float]]:
    """FPR95 of AMP for every (transform set, K) cell of ``[ablate]``."""
    data = prepare_data(cfg)
    x_ood = ood_features(cfg, data)
    grid: Dict[str, Dict[int, float]] = {}
    for name in cfg["ablate"]["transform_sets"]:
        transforms = tuple(Transform.parse(t) for t in TRANSFORM_SETS[name])
        model = train_model(cfg, data, anchored=True, transforms=transforms).model
        grid[name] = {}
        for k in cfg["ablate"]["anchors"]:
            table = score_split(cfg, model, True, data, x_ood, k=k)
            grid[name][k] = all_metrics(table.amp[table.is_ood == 0], table.amp[table.is_ood == 1])["fpr95"]
    return grid


def run_ablate(cfg: ExperimentConfig, out_dir) -> Dict[str, Path]:
    grid = ablation_grid(cfg)
    ks = list(cfg["ablate"]["anchors"])
    text = _csv_text(["transform_set"] + [f"K_{k}" for k in ks],
                     ([name] + [row[k] for k in ks] for name, row in grid.items()), "ablation/1")
    return {"ablation": _write(Path(out_dir) / "ablation.csv", text)}


def taylor_gaps(n_pairs: int, dim: int, norms, seed: int) -> List[tuple]:
    """``(|c|, max |exact - approx|)`` over interior unit pairs, one random anchor direction per pair."""
    xi, xj = interior_unit_pairs(n_pairs, dim, seed)
    dirs = np.random.default_rng([seed, 1]).standard_normal((n_pairs, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rows = []
    for r in norms:
        gaps = [abs(anchored_kernel(a, b, r * u, "exact") - anchored_kernel(a, b, r * u, "approx"))
                for a, b, u in zip(xi, xj, dirs)]
        rows.append((float(r), float(max(gaps))))
    return rows


def run_ntk(cfg: ExperimentConfig, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    n = cfg["ntk"]
    seed = cfg.seeds()["ntk"]
    paths = {}

    conv = ntk_convergence(n["widths"], n["pairs"], n["seeds"], n["dim"], seed)
    paths["convergence"] = _write(out / "convergence.csv",
                                  _csv_text(["width", "mean_relative_error"], conv, "ntk_convergence/1"))

    grid = unit_circle_grid(n["grid"])
    c = np.random.default_rng(seed).standard_normal(2)
    c *= n["anchor_norm"] / np.linalg.norm(c)
    vanilla = kernel_spectrum(gram_analytic(grid))
    anchored = kernel_spectrum(gram_anchored(grid, c))
    zero = kernel_spectrum(gram_anchored(grid, np.zeros(2)))
    paths["spectrum"] = _write(out / "spectrum.csv", _csv_text(
        ["index", "vanilla", "anchored", "anchored_c0"],
        ((i, vanilla[i], anchored[i], zero[i]) for i in range(len(vanilla))), "ntk_spectrum/1"))

    xi, xj = random_unit_pairs(n["pairs"], n["dim"], seed)
    zero_c = np.zeros(n["dim"])
    rows = [(i, float(a @ b), gram_analytic(np.vstack([a, b])).entries[0, 1],
             anchored_kernel(a, b, zero_c, "exact"), gamma(a, b, zero_c)) for i, (a, b) in enumerate(zip(xi, xj))]
    paths["anchor_c0"] = _write(out / "anchored_vs_vanilla.csv", _csv_text(
        ["pair", "cosine", "vanilla", "anchored_c0", "gamma_c0"], rows, "ntk_anchored_c0/1"))
    gaps = taylor_gaps(n["pairs"], n["dim"], np.geomspace(1e-3, 0.05, 6), seed)
    paths["taylor"] = _write(out / "taylor_gap.csv", _csv_text(["anchor_norm", "max_gap"], gaps, "ntk_taylor/1"))

    d = cfg["dataset"]
    toy = datasets.gen_two_moons(n["demo_train"], d["noise"], cfg.seeds()["data"])
    norm = datasets.Normalizer.fit(toy.features)
    x_toy = norm(toy.features)
    anchors = draw_anchors(x_toy, n["demo_anchors"], cfg.seeds()["anchors"])
    axis = np.linspace(-3.0, 3.0, n["demo_resolution"])
    maps = toy_anchor_demo(ntk_predictor(x_toy, toy.labels), anchors, axis, axis)
    paths["decision_maps"] = _write(out / "decision_maps.csv", maps.to_csv())
    return paths


def sweep_results(cfg: ExperimentConfig):
    """Per-level metrics, shared-edge AMP histograms and ID-vs-level overlap coefficients."""
    data = prepare_data(cfg)
    anchored = cfg["model"]["anchored"]
    model = train_model(cfg, data).model
    rules = [r for r in cfg["inference"]["rules"] if anchored or r != "amp"] or ["msp"]
    hist_rule = "amp" if anchored else "msp"
    tables = {}
    for level in cfg["ood"]["levels"]:
        tables[level] = score_split(cfg, model, anchored, data, ood_features(cfg, data, "corrupted", level))
    metrics = {lv: evaluate_rules(t, rules) for lv, t in tables.items()}
    first = next(iter(tables.values()))
    id_scores = first.rule(hist_rule)[first.is_ood == 0]
    ood_scores = {lv: t.rule(hist_rule)[t.is_ood == 1] for lv, t in tables.items()}
    everything = np.concatenate([id_scores, *ood_scores.values()])
    edges = np.linspace(everything.min(), everything.max(), cfg["ood"]["histogram_bins"] + 1)
    hist_id = np.histogram(id_scores, edges)[0]
    hists = {lv: np.histogram(s, edges)[0] for lv, s in ood_scores.items()}
    overlap = {lv: overlap_coefficient(hist_id, h) for lv, h in hists.items()}
    return metrics, edges, hist_id, hists, overlap


def run_sweep(cfg: ExperimentConfig, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    metrics, edges, hist_id, hists, overlap = sweep_results(cfg)
    rows = [(lv, rule, *(m[c] for c in METRIC_COLUMNS)) for lv, per in metrics.items() for rule, m in per.items()]
    levels = list(hists)
    hist_rows = [(edges[i], edges[i + 1], int(hist_id[i]), *(int(hists[lv][i]) for lv in levels))
                 for i in range(len(edges) - 1)]
    return {
        "metrics": _write(out / "sweep_metrics.csv",
                          _csv_text(["level", "rule", *METRIC_COLUMNS], rows, "sweep_metrics/1")),
        "histograms": _write(out / "histograms.csv", _csv_text(
            ["bin_left", "bin_right", "id", *(f"level_{lv}" for lv in levels)], hist_rows, "sweep_histograms/1")),
        "overlap": _write(out / "overlap.csv",
                          _csv_text(["level", "overlap_coefficient"], overlap.items(), "sweep_overlap/1")),
    }


def run_metrics(scores_path, out_dir, rules=None) -> Dict[str, Path]:
    """Metrics table from an existing score CSV (``is_ood`` column splits the populations)."""
    table = ScoreTable.read_csv(scores_path)
    if not np.any(table.is_ood == 1) or not np.any(table.is_ood == 0):
        raise ValueError("score CSV must contain both ID (is_ood=0) and OOD (is_ood=1) rows")
    if rules is None:
        rules = ["amp", "msp", "entropy", "energy"] if table.meta.get("anchored", "true") == "true" \
            else ["msp", "entropy", "energy"]
    rows = evaluate_rules(table, rules)
    out = Path(out_dir)
    return {
        "metrics": _write(out / "metrics.csv", metrics_csv(rows)),
        "table": _write(out / "metrics.txt", metrics_table(rows)),
    }
