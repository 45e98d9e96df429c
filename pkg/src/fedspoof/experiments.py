"""Experiment pipelines: client construction from a partitioned corpus,
centralized / federated / position-baseline training, pooled evaluation, and
the comparison matrix.

Evaluation ground truth is the simulator's attacked flag at each window's
last timestep; it never enters training.  Test windows are normalized with
the owning client's locally fitted state, and scores are pooled across
clients for one corpus-level ROC.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import features as feat
from . import lstm, metrics
from .domain import Trace
from .federation import FederationConfig, LocalClient, run_rounds
from .fusion import FusionConfig, fuse_trace, pds_score
from .simulate import PartitionResult, SimConfig, device_models, partition


@dataclass
class ClientBundle:
    """A client plus the simulator-side evaluation data for its test traces."""

    client: LocalClient
    test_x: np.ndarray
    test_truth: np.ndarray
    test_pds: np.ndarray
    platform_ids: tuple[int, ...]


def _build_test_set(
    client: LocalClient, test_traces: list[Trace]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cfg = client.feature_cfg
    xs, truths, pds_vals = [], [], []
    for trace in test_traces:
        fused = fuse_trace(trace, client.fusion_cfg)
        raw = feat.extract_raw(trace, fused)
        fx = feat.apply_normalization(raw, client.feature_norm)
        wx, _, last = feat.make_windows(
            fx, np.zeros(fx.shape[0], dtype=np.float32), cfg.window_len, cfg.stride
        )
        if wx.shape[0] == 0:
            continue
        attacked = np.array([s.attacked for s in trace.samples], dtype=bool)
        xs.append(wx)
        truths.append(attacked[last])
        pds_vals.append(pds_score(trace, fused)[last])
    if not xs:
        w = cfg.window_len
        return (
            np.empty((0, w, feat.N_FEATURES), dtype=np.float32),
            np.empty(0, dtype=bool),
            np.empty(0),
        )
    return np.concatenate(xs), np.concatenate(truths), np.concatenate(pds_vals)


def build_bundles(
    part: PartitionResult,
    fusion_cfg: FusionConfig,
    feature_cfg: feat.FeatureConfig,
    train_cfg: lstm.TrainConfig,
    master_seed: int,
) -> list[ClientBundle]:
    """Run every client's local pipeline and assemble its evaluation data."""
    bundles = []
    for client_id in sorted(part.clients):
        split = part.clients[client_id]
        client = LocalClient.from_traces(
            client_id,
            split.train,
            fusion_cfg,
            feature_cfg,
            replace(train_cfg, rng_seed=master_seed + client_id),
        )
        test_x, truth, pds_vals = _build_test_set(client, split.test)
        bundles.append(
            ClientBundle(
                client=client,
                test_x=test_x,
                test_truth=truth,
                test_pds=pds_vals,
                platform_ids=tuple(sorted({t.platform_id for t in split.train + split.test})),
            )
        )
    return bundles


def pooled_test(bundles: list[ClientBundle]) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([b.test_x for b in bundles])
    truth = np.concatenate([b.test_truth for b in bundles])
    return x, truth


def model_scores(params: lstm.LstmModelParams, bundles: list[ClientBundle]) -> np.ndarray:
    return np.concatenate([lstm.predict(params, b.test_x) for b in bundles])


def pds_pooled(bundles: list[ClientBundle]) -> np.ndarray:
    return np.concatenate([b.test_pds for b in bundles])


def run_federated(
    bundles: list[ClientBundle], fed_cfg: FederationConfig
) -> tuple[lstm.LstmModelParams, list[dict]]:
    state, rows = run_rounds([b.client for b in bundles], fed_cfg)
    return state.params, rows


def pooled_training_set(bundles: list[ClientBundle]) -> tuple[np.ndarray, np.ndarray]:
    """All clients' windows in one array, interleaved by window position so
    the time-ordered validation tail still mixes every client."""
    xs = [b.client.train_x for b in bundles]
    ys = [b.client.train_y for b in bundles]
    order = [
        (ci, wi)
        for wi in range(max(len(y) for y in ys))
        for ci in range(len(bundles))
        if wi < len(ys[ci])
    ]
    x = np.concatenate([xs[ci][wi : wi + 1] for ci, wi in order])
    y = np.array([ys[ci][wi] for ci, wi in order], dtype=np.float32)
    return x, y


def run_centralized(
    bundles: list[ClientBundle],
    train_cfg: lstm.TrainConfig,
    seed: int,
    max_epochs: int,
) -> tuple[lstm.LstmModelParams, lstm.TrainReport]:
    x, y = pooled_training_set(bundles)
    cfg = replace(train_cfg, max_epochs=max_epochs, rng_seed=seed)
    params = lstm.init_params(seed)
    return lstm.train_local(params, x, y, cfg)


def _auc_or_nan(scores: np.ndarray, truth: np.ndarray) -> tuple[float, int, int]:
    n_pos = int(truth.sum())
    n_neg = int(truth.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return math.nan, n_pos, n_neg
    return metrics.auc_from_scores(scores, truth), n_pos, n_neg


@dataclass
class MatrixRow:
    cell: str
    split: str
    method: str
    detail: str
    auc: float
    n_pos: int
    n_neg: int


def _emit_roc(scores, truth, out_dir, name) -> None:
    if out_dir is None or truth.sum() in (0, truth.size):
        return
    metrics.write_roc_csv(metrics.roc(scores, truth), os.path.join(out_dir, f"roc_{name}.csv"))


GNUPLOT_SCRIPT = """\
# plot the ROC curves emitted next to this script: gnuplot plot_roc.gp
set datafile separator ','
set xlabel 'false positive rate'
set ylabel 'true positive rate'
set key bottom right
set terminal pngcairo size 900,700
set output 'roc.png'
plot for [file in system('ls roc_*.csv')] file using 2:3 every ::1 with lines title file
"""

ALL_CELLS = ("clfl", "per_device", "per_model", "cross_model")
ALL_SPLITS = ("iid", "trace")


def experiment_matrix(
    traces: list[Trace],
    sim_cfg: SimConfig,
    fusion_cfg: FusionConfig,
    feature_cfg: feat.FeatureConfig,
    train_cfg: lstm.TrainConfig,
    fed_cfg: FederationConfig,
    master_seed: int,
    out_dir: str | None = None,
    cells: tuple[str, ...] = ALL_CELLS,
    splits: tuple[str, ...] = ALL_SPLITS,
) -> list[MatrixRow]:
    """Run the comparison matrix and emit the AUC table plus ROC CSVs.

    Cells: clfl (centralized vs federated vs position baseline), per_device
    (each device trains and tests alone), per_model (federation within each
    hardware family), cross_model (federation on one family, tested on the
    others); each in an iid variant (test traces are the training traces) and
    a trace-split variant (held-out test traces).
    """
    models = device_models(sim_cfg)
    budget_epochs = fed_cfg.rounds * fed_cfg.local_epochs
    rows: list[MatrixRow] = []

    for split in splits:
        holdout = split == "trace"
        uniform_mode = "non-iid-by-trace" if holdout else "iid"

        if "clfl" in cells:
            part = partition(traces, uniform_mode, sim_cfg.n_clients, master_seed)
            bundles = build_bundles(part, fusion_cfg, feature_cfg, train_cfg, master_seed)
            _, truth = pooled_test(bundles)

            fed_params, _ = run_federated(bundles, fed_cfg)
            scores = model_scores(fed_params, bundles)
            auc, np_, nn_ = _auc_or_nan(scores, truth)
            rows.append(MatrixRow("clfl", split, "federated", "all", auc, np_, nn_))
            _emit_roc(scores, truth, out_dir, f"clfl_{split}_federated")

            cen_params, _ = run_centralized(bundles, train_cfg, master_seed, budget_epochs)
            scores = model_scores(cen_params, bundles)
            auc, np_, nn_ = _auc_or_nan(scores, truth)
            rows.append(MatrixRow("clfl", split, "centralized", "all", auc, np_, nn_))
            _emit_roc(scores, truth, out_dir, f"clfl_{split}_centralized")

            scores = pds_pooled(bundles)
            auc, np_, nn_ = _auc_or_nan(scores, truth)
            rows.append(MatrixRow("clfl", split, "pds", "all", auc, np_, nn_))
            _emit_roc(scores, truth, out_dir, f"clfl_{split}_pds")

        if {"per_device", "per_model", "cross_model"} & set(cells):
            n_devices = len({t.platform_id for t in traces})
            part = partition(
                traces, "non-iid-by-device", n_devices, master_seed, trace_holdout=holdout
            )
            bundles = build_bundles(part, fusion_cfg, feature_cfg, train_cfg, master_seed)
            by_model: dict[str, list[ClientBundle]] = {}
            for b in bundles:
                by_model.setdefault(models[b.client.client_id], []).append(b)

            if "per_device" in cells:
                for b in bundles:
                    if b.client.n_train == 0 or b.test_x.shape[0] == 0:
                        continue
                    cfg = replace(
                        train_cfg, max_epochs=budget_epochs, rng_seed=master_seed + b.client.client_id
                    )
                    params, _ = lstm.train_local(
                        lstm.init_params(master_seed), b.client.train_x, b.client.train_y, cfg
                    )
                    scores = lstm.predict(params, b.test_x)
                    auc, np_, nn_ = _auc_or_nan(scores, b.test_truth)
                    rows.append(
                        MatrixRow(
                            "per_device", split, "local",
                            f"device_{b.client.client_id}", auc, np_, nn_,
                        )
                    )
                    _emit_roc(
                        scores, b.test_truth, out_dir,
                        f"per_device_{split}_{b.client.client_id}",
                    )

            if "per_model" in cells:
                for model_name, group in sorted(by_model.items()):
                    fed_params, _ = run_federated(group, fed_cfg)
                    scores = model_scores(fed_params, group)
                    _, truth = pooled_test(group)
                    auc, np_, nn_ = _auc_or_nan(scores, truth)
                    rows.append(
                        MatrixRow("per_model", split, "federated", model_name, auc, np_, nn_)
                    )
                    _emit_roc(scores, truth, out_dir, f"per_model_{split}_{model_name}")

            if "cross_model" in cells:
                for model_name, group in sorted(by_model.items()):
                    others = [b for b in bundles if models[b.client.client_id] != model_name]
                    if not others:
                        continue
                    fed_params, _ = run_federated(group, fed_cfg)
                    scores = model_scores(fed_params, others)
                    _, truth = pooled_test(others)
                    auc, np_, nn_ = _auc_or_nan(scores, truth)
                    rows.append(
                        MatrixRow(
                            "cross_model", split, "federated",
                            f"train_{model_name}", auc, np_, nn_,
                        )
                    )
                    _emit_roc(scores, truth, out_dir, f"cross_model_{split}_{model_name}")

    if out_dir is not None:
        write_auc_table(rows, os.path.join(out_dir, "auc_table.csv"))
        with open(os.path.join(out_dir, "plot_roc.gp"), "w", encoding="ascii") as fh:
            fh.write(GNUPLOT_SCRIPT)
    return rows


def write_auc_table(rows: list[MatrixRow], path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("cell,split,method,detail,auc,n_pos,n_neg\n")
        for r in rows:
            auc = "na" if math.isnan(r.auc) else f"{r.auc:.10g}"
            fh.write(f"{r.cell},{r.split},{r.method},{r.detail},{auc},{r.n_pos},{r.n_neg}\n")
