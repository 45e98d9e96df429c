"""Federated orchestration: client state, FedAvg aggregation, AUC quality
gate, and the round loop.

Clients keep their traces, features and labels local; the only values that
cross the client/server boundary are flat parameter vectors, sample counts
and unit-interval scores.  Transport is in-process message passing with
value-semantic messages, so the state machines stay transport-agnostic.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import features as feat
from . import labels as lab
from . import lstm, metrics
from .domain import Trace
from .fusion import FusionConfig, fuse_trace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundUpdate:
    """A client's trained parameters for one round."""

    client_id: int
    round_index: int
    params: lstm.LstmModelParams
    n_samples: int

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class QualityReport:
    """One evaluator's verdict on a candidate update."""

    candidate_client_id: int
    evaluating_client_id: int
    predicted_labels: np.ndarray
    auc_vs_reference: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.auc_vs_reference <= 1.0):
            raise ValueError("auc_vs_reference must be in [0, 1]")


@dataclass
class GlobalModelState:
    round_index: int
    params: lstm.LstmModelParams
    last_auc: float = 0.0


#: Every message type the server can receive from clients.  The privacy
#: contract is enforced against this tuple: none of these may carry position,
#: feature or raw-sensor fields.
SERVER_RECEIVABLE_MESSAGE_TYPES = (RoundUpdate, QualityReport)


def fedavg(updates: list[RoundUpdate], weighted: bool = True) -> lstm.LstmModelParams:
    """Coordinate-wise mean of client parameters, weighted by sample counts.

    Accumulates in 64-bit and returns the updates' dtype.  Updates are
    canonicalized by client id first, so the result is bitwise
    permutation-invariant; weights n_k / sum(n_k) make it exactly invariant
    under uniform scaling of all n_k.
    """
    if not updates:
        raise ValueError("fedavg needs at least one update")
    first = updates[0]
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids in one aggregation round")
    for u in updates:
        if (
            u.params.input_size != first.params.input_size
            or u.params.hidden_size != first.params.hidden_size
        ):
            raise ValueError("parameter layout mismatch across updates")
        if u.round_index != first.round_index:
            raise ValueError("updates from different rounds cannot be aggregated")

    ordered = sorted(updates, key=lambda u: u.client_id)
    total = float(sum(u.n_samples for u in ordered))
    acc = np.zeros(first.params.vector.size, dtype=np.float64)
    for u in ordered:
        w = u.n_samples / total if weighted else 1.0 / len(ordered)
        acc += w * u.params.vector.astype(np.float64)
    return lstm.LstmModelParams(
        first.params.input_size,
        first.params.hidden_size,
        acc.astype(first.params.vector.dtype),
    )


class LocalClient:
    """One mobile platform: local windows, self-supervised targets, and the
    binarized reference labels used when evaluating other clients' updates."""

    def __init__(
        self,
        client_id: int,
        train_x: np.ndarray,
        train_y: np.ndarray,
        train_cfg: lstm.TrainConfig,
        feature_norm: feat.NormalizationState | None = None,
        label_norm: lab.LabelNorm | None = None,
        fusion_cfg: FusionConfig | None = None,
        feature_cfg: feat.FeatureConfig | None = None,
    ):
        self.client_id = client_id
        self.train_x = np.asarray(train_x, dtype=np.float32)
        self.train_y = np.asarray(train_y, dtype=np.float32)
        self.train_cfg = train_cfg
        self.feature_norm = feature_norm
        self.label_norm = label_norm
        self.fusion_cfg = fusion_cfg
        self.feature_cfg = feature_cfg
        self.reference_binary = self.train_y > 0.5

    @property
    def n_train(self) -> int:
        return int(self.train_x.shape[0])

    @classmethod
    def from_traces(
        cls,
        client_id: int,
        traces: list[Trace],
        fusion_cfg: FusionConfig,
        feature_cfg: feat.FeatureConfig,
        train_cfg: lstm.TrainConfig,
    ) -> "LocalClient":
        """Run the local pipeline: fuse, self-label, normalize, window.

        Feature and label normalizations are fitted on this client's data
        only and never leave the client.
        """
        fused = [fuse_trace(t, fusion_cfg) for t in traces]
        raws = [feat.extract_raw(t, f) for t, f in zip(traces, fused)]
        devs = [lab.raw_deviations(t, f) for t, f in zip(traces, fused)]
        fnorm = feat.fit_normalization(raws, feature_cfg)
        lnorm = lab.fit_label_norm(devs)

        xs, ys = [], []
        for trace, fused_t, raw in zip(traces, fused, raws):
            series = lab.generate(trace, fused_t, lnorm)
            fx = feat.apply_normalization(raw, fnorm)
            wx, wy, _ = feat.make_windows(
                fx, series.values, feature_cfg.window_len, feature_cfg.stride
            )
            if wx.shape[0] == 0:
                log.warning(
                    "trace %d of client %d shorter than window; skipped",
                    trace.trace_id,
                    client_id,
                )
                continue
            xs.append(wx)
            ys.append(wy)
        if not xs:
            train_x = np.empty((0, feature_cfg.window_len, feat.N_FEATURES), dtype=np.float32)
            train_y = np.empty(0, dtype=np.float32)
        else:
            train_x = np.concatenate(xs)
            train_y = np.concatenate(ys)
        return cls(
            client_id,
            train_x,
            train_y,
            train_cfg,
            feature_norm=fnorm,
            label_norm=lnorm,
            fusion_cfg=fusion_cfg,
            feature_cfg=feature_cfg,
        )

    def _round_seed(self, round_index: int) -> int:
        # stable combination so identical client seeds give identical rounds
        return int(
            np.random.SeedSequence([self.train_cfg.rng_seed, round_index]).generate_state(1)[0]
        )

    def train(
        self,
        global_params: lstm.LstmModelParams,
        round_index: int,
        local_epochs: int,
        announced_mean_size: float | None,
    ) -> RoundUpdate:
        """Run local_epochs of training from the broadcast parameters."""
        cfg = replace(
            self.train_cfg,
            max_epochs=local_epochs,
            rng_seed=self._round_seed(round_index),
        )
        trained, _ = lstm.train_local(
            global_params.copy(), self.train_x, self.train_y, cfg, announced_mean_size
        )
        return RoundUpdate(
            client_id=self.client_id,
            round_index=round_index,
            params=trained,
            n_samples=self.n_train,
        )

    def eval_subset(self, max_windows: int) -> np.ndarray:
        """Deterministic, evenly spaced window subset used for gate scoring."""
        n = self.n_train
        if n <= max_windows:
            return np.arange(n)
        return np.unique(np.linspace(0, n - 1, max_windows).astype(np.int64))

    def score_candidate(
        self, params: lstm.LstmModelParams, max_windows: int
    ) -> tuple[np.ndarray, float] | None:
        """Candidate scores and AUC on local windows vs binarized self-labels.

        Returns None (abstains) when the local reference has a single class.
        """
        idx = self.eval_subset(max_windows)
        ref = self.reference_binary[idx]
        if ref.all() or not ref.any():
            return None
        scores = lstm.predict(params, self.train_x[idx])
        return scores, metrics.auc_from_scores(scores, ref)

    def validation_mse(self, params: lstm.LstmModelParams) -> float:
        """MSE of params on this client's validation windows."""
        n = self.n_train
        n_val = max(1, int(n * self.train_cfg.validation_fraction))
        return lstm.batch_mse(params, self.train_x[n - n_val :], self.train_y[n - n_val :])


def quality_gate(
    candidate: RoundUpdate,
    evaluators: list[LocalClient],
    global_state: GlobalModelState,
    threshold_delta: float,
    max_windows: int = 512,
) -> tuple[bool, list[QualityReport]]:
    """Cross-client screening of one candidate update.

    Every evaluator except the candidate's own client scores the update on
    its local windows against its binarized self-supervised labels; the
    update is accepted iff the mean AUC is at least the global model's
    rolling AUC minus threshold_delta.  Evaluators whose reference labels
    hold a single class abstain; if all abstain the update is accepted with
    a warning.
    """
    others = [c for c in sorted(evaluators, key=lambda c: c.client_id)
              if c.client_id != candidate.client_id]
    if not others:
        raise ValueError("quality gate needs at least one evaluator besides the candidate")
    reports = []
    for ev in others:
        result = ev.score_candidate(candidate.params, max_windows)
        if result is None:
            log.warning("client %d abstained from gating (single-class labels)", ev.client_id)
            continue
        scores, auc_val = result
        reports.append(
            QualityReport(
                candidate_client_id=candidate.client_id,
                evaluating_client_id=ev.client_id,
                predicted_labels=scores,
                auc_vs_reference=auc_val,
            )
        )
    if not reports:
        log.warning(
            "all evaluators abstained for client %d; accepting by default",
            candidate.client_id,
        )
        return True, []
    mean_auc = float(np.mean([r.auc_vs_reference for r in reports]))
    return mean_auc >= global_state.last_auc - threshold_delta, reports


@dataclass(frozen=True)
class FederationConfig:
    """Round loop configuration."""

    rounds: int = 100
    local_epochs: int = 5
    weighted: bool = True
    gate_enabled: bool = True
    gate_warmup_rounds: int = 10
    gate_threshold_delta: float = 0.02
    gate_eval_max_windows: int = 512
    init_seed: int = 0
    # write the global model every N rounds (0 disables periodic checkpoints)
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    # fault injection used by the quality-gate evaluation: the named client
    # submits parameter-shuffled updates from the given round onward
    corrupt_client_id: int | None = None
    corrupt_from_round: int | None = None


def _corrupt_update(update: RoundUpdate, seed: int) -> RoundUpdate:
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, update.round_index, update.client_id])
    )
    vec = update.params.vector[rng.permutation(update.params.vector.size)]
    return replace(
        update,
        params=lstm.LstmModelParams(
            update.params.input_size, update.params.hidden_size, vec
        ),
    )


def run_rounds(
    clients: list[LocalClient],
    cfg: FederationConfig,
    input_size: int = lstm.DEFAULT_INPUT_SIZE,
    hidden_size: int = lstm.DEFAULT_HIDDEN_SIZE,
) -> tuple[GlobalModelState, list[dict]]:
    """Run the federated round loop.

    Per round: broadcast the global parameters, train every client locally,
    screen updates through the quality gate once the warm-up has passed,
    aggregate the accepted updates with FedAvg, and record metrics.
    Deterministic given client seeds and cfg.init_seed.
    """
    active = [c for c in sorted(clients, key=lambda c: c.client_id) if c.n_train > 0]
    for c in clients:
        if c.n_train == 0:
            log.warning("client %d has no training windows; skipped", c.client_id)
    if not active:
        raise ValueError("no client has training windows")

    announced_mean = float(np.mean([c.n_train for c in active]))
    global_state = GlobalModelState(
        round_index=0,
        params=lstm.init_params(cfg.init_seed, input_size, hidden_size),
    )
    rows: list[dict] = []

    for round_index in range(1, cfg.rounds + 1):
        updates = []
        for client in active:
            update = client.train(
                global_state.params, round_index, cfg.local_epochs, announced_mean
            )
            if (
                cfg.corrupt_client_id == client.client_id
                and cfg.corrupt_from_round is not None
                and round_index >= cfg.corrupt_from_round
            ):
                update = _corrupt_update(update, cfg.init_seed)
            updates.append(update)

        gate_active = cfg.gate_enabled and round_index > cfg.gate_warmup_rounds
        gate_aucs: list[float] = []
        if gate_active:
            # rolling AUC of the model broadcast this round, same reference
            # labels the candidates are judged against
            global_aucs = []
            for client in active:
                result = client.score_candidate(
                    global_state.params, cfg.gate_eval_max_windows
                )
                if result is not None:
                    global_aucs.append(result[1])
            if global_aucs:
                global_state.last_auc = float(np.mean(global_aucs))
            accepted = []
            for update in updates:
                ok, reports = quality_gate(
                    update,
                    active,
                    global_state,
                    cfg.gate_threshold_delta,
                    cfg.gate_eval_max_windows,
                )
                gate_aucs.extend(r.auc_vs_reference for r in reports)
                if ok:
                    accepted.append(update)
                else:
                    log.info(
                        "round %d: rejected update from client %d",
                        round_index,
                        update.client_id,
                    )
        else:
            accepted = updates

        if accepted:
            new_params = fedavg(accepted, cfg.weighted)
        else:
            log.warning("round %d: no update accepted; global model unchanged", round_index)
            new_params = global_state.params
        global_state = GlobalModelState(
            round_index=round_index, params=new_params, last_auc=global_state.last_auc
        )
        if (
            cfg.checkpoint_every > 0
            and cfg.checkpoint_dir is not None
            and round_index % cfg.checkpoint_every == 0
        ):
            lstm.save_checkpoint(
                new_params,
                os.path.join(cfg.checkpoint_dir, f"global_round_{round_index:04d}.ckpt"),
            )

        weights = np.array([c.n_train for c in active], dtype=np.float64)
        val_mses = np.array([c.validation_mse(new_params) for c in active])
        rows.append(
            {
                "round": round_index,
                "accepted_clients": len(accepted),
                "mean_gate_auc": float(np.mean(gate_aucs)) if gate_aucs else math.nan,
                "global_val_mse": float(np.average(val_mses, weights=weights)),
            }
        )
    return global_state, rows


def write_round_metrics(rows: list[dict], path: str) -> None:
    """Per-round federation metrics as CSV."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("round,accepted_clients,mean_gate_auc,global_val_mse\n")
        for r in rows:
            gate = "na" if math.isnan(r["mean_gate_auc"]) else f"{r['mean_gate_auc']:.10g}"
            fh.write(
                f"{r['round']},{r['accepted_clients']},{gate},{r['global_val_mse']:.10g}\n"
            )
