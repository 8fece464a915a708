"""The training loop, evaluation, and the ablation matrix.

Per iteration: advance the pyramid cursor, draw a labeled batch and an
unlabeled batch from the current level, compute the FixMatch loss plus (once
the bank is initialized) the clustering terms, take one SGD step, apply the
momentum prototype updates from gate-open weak views, then identify the
batch and refill the next level's pools.  Before every class has collected
m_warm distinct gate-open samples the loop is FixMatch-only; the one-shot
prototype initialization runs on a frozen full sweep of the unlabeled set.

Determinism: every source of randomness is a named substream of the config
seed (data = labeled batch draws, pools = unlabeled draws and evictions,
augment = view noise, kmeans = seeding, model_init = parameters), so the same
config yields byte-identical logs and toggling one component never shifts
another's draws.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import identify as identify_mod
from . import metrics as metrics_mod
from . import pools as pools_mod
from . import prototypes as proto_mod
from .config import TrainConfig, config_from_dict
from .errors import EngineError, SingleClassInput
from .model import (
    Gradients,
    ModelParams,
    SslConfig,
    backward_batch,
    forward_batch,
    sgd_step,
    ssl_forward,
)
from .numerics import Rng, pairwise_sq_distances
from .synthdata import (
    DOMAIN_ID,
    OpenSetDataset,
    augment_batch,
    generate_open_set,
    load_csv,
)

RNG_STREAMS = ("data", "augment", "refresh", "kmeans", "pools", "model_init")


@dataclass
class RunLog:
    config: dict
    records: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def record_lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.records]

    def event_lines(self) -> list[str]:
        return [json.dumps(e, separators=(",", ":")) for e in self.events]


@dataclass
class TrainResult:
    config: TrainConfig
    dataset: OpenSetDataset
    params: ModelParams
    bank: proto_mod.PrototypeBank
    pyramid: pools_mod.PoolPyramid
    run_log: RunLog
    checkpoint: dict
    interrupted: bool = False

    def final_accuracy(self, last: int = 10) -> float:
        accs = [r["test_acc"] for r in self.run_log.records[-last:]]
        return float(np.mean(accs))


@dataclass
class IterationOutput:
    """Loss, gradients and the per-batch arrays the rest of an iteration needs."""

    loss_total: float
    loss_sup: float
    loss_unsup: float
    loss_cluster: float
    grads: Gradients
    weak_features: np.ndarray | None
    weak_probs: np.ndarray | None
    pseudo: np.ndarray | None
    gate_ssl: np.ndarray | None
    cluster_gate: np.ndarray | None
    cluster_jstar: np.ndarray | None


def iteration_loss_and_grads(
    params: ModelParams,
    bank: proto_mod.PrototypeBank | None,
    q_centers: np.ndarray | None,
    labeled_x: np.ndarray,
    labeled_y: np.ndarray,
    unlabeled_x: np.ndarray | None,
    rng: Rng,
    cfg: TrainConfig,
) -> IterationOutput:
    """One iteration's combined loss and parameter gradients.

    Pure given the rng state: total = L_SSL + w_c * (unlabeled CR terms +
    labeled center terms), with the clustering terms evaluated against the
    bank snapshot.  Pass bank=None (or an uninitialized bank) for the
    FixMatch-only warm-up behaviour.
    """
    ssl_cfg = SslConfig(
        lambda_u=cfg.lambda_u,
        pseudo_threshold=cfg.pseudo_threshold,
        sigma_weak=cfg.sigma_weak * _stddev(cfg),
        sigma_strong=cfg.sigma_strong * _stddev(cfg),
        p_drop=cfg.p_drop,
    )
    parts = ssl_forward(params, labeled_x, labeled_y, unlabeled_x, rng, ssl_cfg)
    grads = Gradients.zeros_like(params)

    clustering_on = (
        cfg.clustering_loss_active
        and bank is not None
        and bank.initialized
        and q_centers is not None
    )
    loss_cluster = 0.0
    dfeature_labeled = None
    terms_u = None
    if clustering_on:
        terms_l = proto_mod.batch_labeled_terms(
            bank, parts.fwd_labeled.features, parts.fwd_labeled.probs, labeled_y, q_centers, cfg.cluster
        )
        loss_cluster += terms_l.loss_sum
        dfeature_labeled = cfg.cluster.w_c * terms_l.grad_weak
        if parts.fwd_weak is not None:
            terms_u = proto_mod.batch_unlabeled_terms(
                bank,
                parts.fwd_weak.features,
                parts.fwd_weak.probs,
                parts.pseudo,
                parts.fwd_strong.features,
                cfg.cluster,
                weak_only=cfg.clustering == "weak_only",
            )
            loss_cluster += terms_u.loss_sum

    backward_batch(params, parts.fwd_labeled, grads, dlogits=parts.dlogits_labeled, dfeature=dfeature_labeled)
    if parts.fwd_weak is not None:
        dfeature_strong = cfg.cluster.w_c * terms_u.grad_strong if terms_u is not None else None
        backward_batch(params, parts.fwd_strong, grads, dlogits=parts.dlogits_strong, dfeature=dfeature_strong)
        if terms_u is not None:
            backward_batch(params, parts.fwd_weak, grads, dfeature=cfg.cluster.w_c * terms_u.grad_weak)

    loss_total = parts.loss + cfg.cluster.w_c * loss_cluster
    return IterationOutput(
        loss_total=loss_total,
        loss_sup=parts.loss_sup,
        loss_unsup=parts.loss_unsup,
        loss_cluster=loss_cluster,
        grads=grads,
        weak_features=parts.fwd_weak.features if parts.fwd_weak is not None else None,
        weak_probs=parts.fwd_weak.probs if parts.fwd_weak is not None else None,
        pseudo=parts.pseudo,
        gate_ssl=parts.gate_ssl,
        cluster_gate=terms_u.gate if terms_u is not None else None,
        cluster_jstar=terms_u.j_star if terms_u is not None else None,
    )


def _stddev(cfg: TrainConfig) -> float:
    return cfg.dataset.stddev if cfg.dataset is not None else 1.0


def load_dataset(cfg: TrainConfig) -> OpenSetDataset:
    if cfg.csv_path is not None:
        ds = load_csv(cfg.csv_path)
    else:
        ds = generate_open_set(cfg.dataset)
    if cfg.drop_ood_unlabeled:
        ds = OpenSetDataset(
            labeled=ds.labeled,
            unlabeled=[e for e in ds.unlabeled if e.domain == DOMAIN_ID],
            test=ds.test,
            num_classes=ds.num_classes,
        )
    return ds


class _Trainer:
    def __init__(self, cfg: TrainConfig, dataset: OpenSetDataset | None):
        cfg.validate()
        self.cfg = cfg
        self.dataset = dataset if dataset is not None else load_dataset(cfg)
        if self.dataset.num_classes != cfg.num_classes:
            raise EngineError(
                f"dataset has {self.dataset.num_classes} classes, config says {cfg.num_classes}"
            )

        self.x_lab = np.array([e.x for e in self.dataset.labeled])
        self.y_lab = np.array([e.true_class - 1 for e in self.dataset.labeled], dtype=np.int64)
        self.x_unl = (
            np.array([e.x for e in self.dataset.unlabeled])
            if self.dataset.unlabeled
            else np.zeros((0, cfg.d_in))
        )
        self.uids_unl = np.array([e.uid for e in self.dataset.unlabeled], dtype=np.int64)
        self.row_of = {int(uid): i for i, uid in enumerate(self.uids_unl)}
        self.truth_id = np.array([e.domain == DOMAIN_ID for e in self.dataset.unlabeled], dtype=bool)
        self.domain_of = {e.uid: e.domain for e in self.dataset.unlabeled}

        n_unl = len(self.dataset.unlabeled)
        if n_unl > 0:
            self.iters_per_epoch = math.ceil(n_unl / cfg.batch_unlabeled)
        else:
            self.iters_per_epoch = math.ceil(len(self.dataset.labeled) / cfg.batch_labeled)

        root = Rng(cfg.seed)
        self.rngs = {name: root.split(name) for name in RNG_STREAMS}

        self.params = ModelParams.init_random(
            cfg.d_in, cfg.hidden, cfg.d_f, cfg.num_classes, self.rngs["model_init"]
        )
        self.bank = proto_mod.PrototypeBank.empty(cfg.num_classes, cfg.cluster.k, cfg.d_f)
        self.pyramid = pools_mod.PoolPyramid(
            cfg.num_classes, cfg.num_pool_levels, cfg.pool_capacity, self.uids_unl
        )
        self.warm_sets: dict[int, set[int]] = {s: set() for s in range(cfg.num_classes)}
        self.q_centers: np.ndarray | None = None
        self.completed_epochs = 0
        self.init_event: list[int] | None = None
        self.run_log = RunLog(config=cfg.to_dict())

    # -- state restoration -------------------------------------------------
    def restore(self, checkpoint: dict) -> None:
        ckpt.validate_checkpoint(checkpoint)
        self.params = ckpt.params_from_json(checkpoint["params"])
        self.bank = ckpt.bank_from_json(checkpoint["bank"])
        self.pyramid = ckpt.pyramid_from_json(checkpoint["pyramid"], self.uids_unl)
        self.warm_sets = {
            int(s): set(uids) for s, uids in checkpoint["warm_sets"].items()
        }
        for s in range(self.cfg.num_classes):
            self.warm_sets.setdefault(s, set())
        for name in RNG_STREAMS:
            self.rngs[name].set_state(checkpoint["rng"][name])
        self.completed_epochs = int(checkpoint["completed_epochs"])
        self.init_event = checkpoint.get("init_event")

    def make_checkpoint(self) -> dict:
        return ckpt.build_checkpoint(
            config_echo=self.cfg.to_dict(),
            completed_epochs=self.completed_epochs,
            params=self.params,
            bank=self.bank,
            pyramid=self.pyramid,
            warm_sets=self.warm_sets,
            rng_states={name: self.rngs[name].get_state() for name in RNG_STREAMS},
            init_event=self.init_event,
        )

    # -- per-epoch helpers ---------------------------------------------------
    def _labeled_weak_features_by_class(self) -> dict[int, np.ndarray]:
        # Uses the dedicated "refresh" stream: the refresh only runs when the
        # bank is active, and drawing from the shared augment stream here
        # would shift every later augmentation of a run with clustering
        # enabled relative to the plain baseline.
        x_weak = augment_batch(
            self.x_lab,
            "weak",
            self.rngs["refresh"],
            sigma_weak=self.cfg.sigma_weak * _stddev(self.cfg),
            sigma_strong=self.cfg.sigma_strong * _stddev(self.cfg),
            p_drop=self.cfg.p_drop,
        )
        feats = forward_batch(self.params, x_weak).features
        return {s: feats[self.y_lab == s] for s in range(self.cfg.num_classes)}

    def refresh_centers_and_flags(self) -> None:
        """Recompute q_y and O_s from fresh weak-augmented labeled features
        and re-flag the ID prototypes.  Runs at the start of every epoch once
        the bank is initialized, and right after initialization itself."""
        by_class = self._labeled_weak_features_by_class()
        self.q_centers = proto_mod.labeled_class_centers(by_class, self.cfg.num_classes)
        o_centers = identify_mod.labeled_centers(by_class, self.cfg.num_classes)
        identify_mod.flag_id_prototypes(self.bank, o_centers, self.cfg.n_id)

    def try_init_prototypes(self, epoch: int, iteration: int) -> None:
        """Warm-up exit: one frozen sweep over the whole unlabeled set.  Every
        sample contributes its feature to the k-means of its argmax class (no
        confidence filter here: the spread of the not-yet-confident samples is
        the structure the prototypes are supposed to capture).  If some class
        momentarily predicts fewer samples than m_warm, postpone to the next
        iteration instead of failing the run."""
        fwd = forward_batch(self.params, self.x_unl)
        pseudo = fwd.probs.argmax(axis=1)
        per_class: dict[int, np.ndarray] = {}
        for s in range(self.cfg.num_classes):
            per_class[s] = fwd.features[pseudo == s]
        if any(len(per_class[s]) < self.cfg.cluster.m_warm for s in per_class):
            self.run_log.events.append(
                {"type": "init_postponed", "epoch": epoch, "iteration": iteration}
            )
            return
        proto_mod.init_prototypes(self.bank, per_class, self.cfg.cluster, self.rngs["kmeans"])
        self.refresh_centers_and_flags()
        self.init_event = [epoch, iteration]
        self.run_log.events.append({"type": "init", "epoch": epoch, "iteration": iteration})

    def eval_metrics(self) -> dict:
        return compute_eval_metrics(self.params, self.bank, self.pyramid, self.dataset)

    # -- the loop ------------------------------------------------------------
    def run_epoch(self, epoch: int) -> dict:
        cfg = self.cfg
        if self.bank.initialized:
            self.refresh_centers_and_flags()

        sums = {"loss_total": 0.0, "loss_sup": 0.0, "loss_unsup": 0.0, "loss_cluster": 0.0}
        gate_ssl_count = 0
        gate_cluster_count = 0
        warmup_steps = cfg.warmup_epochs * self.iters_per_epoch

        for it in range(self.iters_per_epoch):
            global_step = epoch * self.iters_per_epoch + it
            lr = cfg.lr
            if warmup_steps > 0 and global_step < warmup_steps:
                lr = cfg.lr * (global_step + 1) / warmup_steps

            lab_idx = self.rngs["data"].choice_indices(len(self.x_lab), cfg.batch_labeled, replace=False)
            xl, yl = self.x_lab[lab_idx], self.y_lab[lab_idx]

            pools_engaged = cfg.pools_active and self.bank.initialized
            level = self.pyramid.advance_level() if pools_engaged else 0

            xu = None
            unl_uids = None
            if not cfg.labeled_only and len(self.x_unl) > 0:
                unl_uids = pools_mod.draw_batch(self.pyramid, level, cfg.batch_unlabeled, self.rngs["pools"])
                rows = np.array([self.row_of[int(u)] for u in unl_uids], dtype=np.int64)
                xu = self.x_unl[rows]

            out = iteration_loss_and_grads(
                self.params, self.bank, self.q_centers, xl, yl, xu, self.rngs["augment"], cfg
            )
            self.params = sgd_step(self.params, out.grads, lr, cfg.weight_decay)

            sums["loss_total"] += out.loss_total
            sums["loss_sup"] += out.loss_sup
            sums["loss_unsup"] += out.loss_unsup
            sums["loss_cluster"] += out.loss_cluster
            if out.gate_ssl is not None:
                gate_ssl_count += int(out.gate_ssl.sum())

            if xu is None or not cfg.prototypes_active:
                continue

            if self.bank.initialized:
                gate = out.cluster_gate
                if gate is None:
                    gate = out.weak_probs.max(axis=1) > cfg.cluster.t_c
                gate_cluster_count += int(gate.sum())

                # Every weak view moves its nearest same-class prototype (the
                # momentum update is ungated; only the loss carries the t_c
                # indicator), so prototypes keep tracking the population they
                # tile instead of stranding on stale positions.
                jstar = proto_mod.nearest_prototypes_batch(self.bank, out.weak_features, out.pseudo)
                for i in range(len(jstar)):
                    proto_mod.update_prototype(
                        self.bank, int(out.pseudo[i]), int(jstar[i]), out.weak_features[i], cfg.cluster
                    )

                results = identify_mod.identify_batch(
                    self.bank, out.weak_features, out.weak_probs, out.pseudo, unl_uids, cfg.cluster
                )
                newly = pools_mod.record_identification(self.pyramid, level, results)
                if cfg.pools_active and level < self.pyramid.num_levels:
                    mode = pools_mod.MODE_RANDOM if cfg.refinement == "random" else pools_mod.MODE_IMPORTANCE
                    target_pools = self.pyramid.level_pools(level + 1)
                    for s in range(cfg.num_classes):
                        if s in newly:
                            event = pools_mod.update_pool(
                                target_pools[s], newly[s], self.pyramid.i_counts, self.rngs["pools"], mode
                            )
                            self.run_log.events.append(
                                {
                                    "type": "pool_update",
                                    "epoch": epoch,
                                    "iteration": it,
                                    "level": level + 1,
                                    "class": s,
                                    "case": event.case,
                                    "appended": event.appended,
                                    "replaced": event.replaced,
                                    "selected": event.selected_count,
                                }
                            )
            else:
                for i in np.where(out.gate_ssl)[0]:
                    self.warm_sets[int(out.pseudo[i])].add(int(unl_uids[i]))
                if all(len(self.warm_sets[s]) >= cfg.cluster.m_warm for s in self.warm_sets):
                    self.try_init_prototypes(epoch, it)

        record = {"epoch": epoch}
        record.update(self.eval_metrics())
        for key in ("loss_total", "loss_sup", "loss_unsup", "loss_cluster"):
            record[key] = sums[key] / self.iters_per_epoch
        record["gate_open_ssl"] = gate_ssl_count
        record["gate_open_cluster"] = gate_cluster_count
        return record


def compute_eval_metrics(
    params: ModelParams,
    bank: proto_mod.PrototypeBank,
    pyramid: pools_mod.PoolPyramid,
    dataset: OpenSetDataset,
) -> dict:
    """Pure evaluation of a model state: shared by the per-epoch logging and
    the `evaluate` entry point so the two always agree."""
    out: dict = {}
    out["test_acc"] = metrics_mod.accuracy(params, dataset.test)

    auroc_base = None
    auroc_proto = None
    if dataset.unlabeled:
        x_unl = np.array([e.x for e in dataset.unlabeled])
        truth = np.array([e.domain == DOMAIN_ID for e in dataset.unlabeled], dtype=bool)
        fwd = forward_batch(params, x_unl)
        try:
            auroc_base = metrics_mod.auroc_from_arrays(fwd.probs.max(axis=1), truth)
        except SingleClassInput:
            auroc_base = None
        if bank.flagged:
            scores = metrics_mod.ood_scores_prototype(bank, fwd.features, fwd.probs.argmax(axis=1))
            try:
                auroc_proto = metrics_mod.auroc_from_arrays(scores, truth)
            except SingleClassInput:
                auroc_proto = None
    out["auroc_baseline"] = auroc_base
    out["auroc_prototype"] = auroc_proto

    domain_of = {e.uid: e.domain for e in dataset.unlabeled}
    for level in range(1, max(2, pyramid.num_levels) + 1):
        key = f"id_density_level{level}"
        if level <= pyramid.num_levels:
            density, _empty = pools_mod.id_density(pools_mod.level_uids(pyramid, level), domain_of)
            out[key] = density
        else:
            out[key] = None
    return out


def train(
    cfg: TrainConfig | None,
    out_dir: str | Path | None = None,
    *,
    dataset: OpenSetDataset | None = None,
    stop_after_epoch: int | None = None,
    resume_from: dict | str | Path | None = None,
    stop_flag=None,
) -> TrainResult:
    """Run training.  `stop_after_epoch` stops after that many completed
    epochs (for interrupt/resume testing); `resume_from` takes a checkpoint
    dict or path and continues it, reproducing the uninterrupted run's
    remaining log exactly.  `stop_flag` is an optional zero-argument callable
    polled at each epoch boundary (the CLI wires signals to it)."""
    checkpoint_data = None
    if resume_from is not None:
        checkpoint_data = resume_from if isinstance(resume_from, dict) else ckpt.load_checkpoint(resume_from)
        if cfg is None:
            cfg = config_from_dict(checkpoint_data["config"])
    if cfg is None:
        raise EngineError("train needs a config or a checkpoint to resume from")

    trainer = _Trainer(cfg, dataset)
    if checkpoint_data is not None:
        trainer.restore(checkpoint_data)

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    events_enabled = os.environ.get("OSSSL_LOG", "") == "debug"
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "config.json", "w", encoding="utf-8") as fh:
            json.dump(trainer.run_log.config, fh, indent=2)
            fh.write("\n")
        metrics_fh = open(out_path / "metrics.jsonl", "w", encoding="utf-8")

    interrupted = False
    try:
        target = cfg.epochs if stop_after_epoch is None else min(cfg.epochs, stop_after_epoch)
        for epoch in range(trainer.completed_epochs, target):
            record = trainer.run_epoch(epoch)
            trainer.run_log.records.append(record)
            trainer.completed_epochs = epoch + 1
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record, separators=(",", ":")) + "\n")
                metrics_fh.flush()
            if stop_flag is not None and stop_flag():
                interrupted = True
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    checkpoint = trainer.make_checkpoint()
    if out_path is not None:
        ckpt.write_checkpoint(checkpoint, out_path / "checkpoint.json")
        if events_enabled:
            with open(out_path / "events.jsonl", "w", encoding="utf-8") as fh:
                for line in trainer.run_log.event_lines():
                    fh.write(line + "\n")

    return TrainResult(
        config=cfg,
        dataset=trainer.dataset,
        params=trainer.params,
        bank=trainer.bank,
        pyramid=trainer.pyramid,
        run_log=trainer.run_log,
        checkpoint=checkpoint,
        interrupted=interrupted,
    )


def evaluate(checkpoint_data: dict | str | Path, dataset: OpenSetDataset) -> dict:
    """Recompute accuracy, both AUROCs and pool densities from a checkpoint.
    Pure read; calling it twice gives identical output."""
    data = checkpoint_data if isinstance(checkpoint_data, dict) else ckpt.load_checkpoint(checkpoint_data)
    ckpt.validate_checkpoint(data)
    params = ckpt.params_from_json(data["params"])
    bank = ckpt.bank_from_json(data["bank"])
    raw_uids = np.array([e.uid for e in dataset.unlabeled], dtype=np.int64)
    pyramid = ckpt.pyramid_from_json(data["pyramid"], raw_uids)
    return compute_eval_metrics(params, bank, pyramid, dataset)


# -- ablation matrix -------------------------------------------------------

ABLATION_ROWS = (
    "labeled_only",
    "baseline",
    "clustering_weak",
    "clustering",
    "refinement_random",
    "refinement_importance",
    "refinement_cascading",
    "clean",
)

_ROW_SETTINGS = {
    "labeled_only": dict(clustering="off", refinement="off", labeled_only=True),
    "baseline": dict(clustering="off", refinement="off"),
    "clustering_weak": dict(clustering="weak_only", refinement="off"),
    "clustering": dict(clustering="on", refinement="off"),
    "refinement_random": dict(clustering="on", refinement="random"),
    "refinement_importance": dict(clustering="on", refinement="importance"),
    "refinement_cascading": dict(clustering="on", refinement="cascading"),
    "clean": dict(clustering="off", refinement="off", drop_ood_unlabeled=True),
}


def ablation_config(base: TrainConfig, row: str, seed: int) -> TrainConfig:
    """Row config: toggles per the matrix, seed applied to both the training
    streams and the generated dataset so rows with the same seed share data."""
    settings = dict(_ROW_SETTINGS[row])
    settings["labeled_only"] = settings.get("labeled_only", False)
    settings["drop_ood_unlabeled"] = settings.get("drop_ood_unlabeled", False)
    cfg = dataclasses.replace(base, seed=seed, **settings)
    if cfg.dataset is not None:
        cfg = dataclasses.replace(cfg, dataset=dataclasses.replace(cfg.dataset, seed=seed))
    return cfg


def ablate(
    base: TrainConfig,
    seeds: list[int] | None = None,
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Run the 8-row matrix over the seed set.  Per-row failures are recorded
    and the remaining rows still run."""
    seeds = list(seeds) if seeds else [base.seed]
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    results: list[dict] = []
    for row in ABLATION_ROWS:
        for seed in seeds:
            cfg = ablation_config(base, row, seed)
            run_dir = out_path / f"{row}_seed{seed}" if out_path is not None else None
            entry: dict = {"row": row, "seed": seed}
            try:
                result = train(cfg, run_dir)
                last = result.run_log.records[-1]
                entry.update(
                    {
                        "final_acc": result.final_accuracy(),
                        "last_test_acc": last["test_acc"],
                        "auroc_baseline": last["auroc_baseline"],
                        "auroc_prototype": last["auroc_prototype"],
                        "id_density_level1": last["id_density_level1"],
                        "id_density_level2": last["id_density_level2"],
                        "error": None,
                    }
                )
            except EngineError as exc:
                entry.update(
                    {
                        "final_acc": None,
                        "last_test_acc": None,
                        "auroc_baseline": None,
                        "auroc_prototype": None,
                        "id_density_level1": None,
                        "id_density_level2": None,
                        "error": str(exc),
                    }
                )
            results.append(entry)

    if out_path is not None:
        _write_ablation_outputs(results, out_path)
    return results


def _write_ablation_outputs(results: list[dict], out_path: Path) -> None:
    import csv as csv_mod

    columns = [
        "row",
        "seed",
        "final_acc",
        "last_test_acc",
        "auroc_baseline",
        "auroc_prototype",
        "id_density_level1",
        "id_density_level2",
        "error",
    ]
    with open(out_path / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv_mod.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for entry in results:
            writer.writerow(entry)

    lines = ["row                     mean_acc   std      n"]
    for row in ABLATION_ROWS:
        accs = [e["final_acc"] for e in results if e["row"] == row and e["final_acc"] is not None]
        if accs:
            lines.append(f"{row:<22} {np.mean(accs):9.4f} {np.std(accs):8.4f} {len(accs):4d}")
        else:
            lines.append(f"{row:<22} {'failed':>9}")
    text = "\n".join(lines) + "\n"
    with open(out_path / "ablation.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
