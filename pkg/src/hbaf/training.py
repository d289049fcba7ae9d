"""Training loop, optimiser, evaluation drivers, and gradient checking.

Adam with an additive squared-norm penalty on the loss (a decoupled
weight-decay variant is available), whole-dialogue batches, early stopping
on validation total loss with best-checkpoint restoration, and a central
finite-difference gradient check that sweeps every parameter scalar of a
width-reduced model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .config import ModelConfig, TrainConfig
from .data import DataError, FeatureManifest, SynthSpec, batch_dialogues, generate_synthetic, load_split, standardize
from .metrics import EvalReport, evaluate_predictions
from .model import BatchForward, HbafModel, LossReport
from .params import ParameterStore


class DivergenceError(RuntimeError):
    """Non-finite loss; carries the name of the first non-finite tensor."""

    def __init__(self, tensor_name: str):
        super().__init__(f"training diverged: non-finite values first appeared in '{tensor_name}'")
        self.tensor_name = tensor_name


class Adam:
    """Standard Adam recurrence (bias-corrected first/second moments)."""

    def __init__(self, store: ParameterStore, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self, store: ParameterStore) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, p in store.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if cfg.decoupled_l2 and cfg.l2_weight > 0:
                p.data = p.data - cfg.learning_rate * cfg.l2_weight * p.data
            m = self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            v = self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * (g * g)
            p.data = p.data - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


@dataclass
class TrainResult:
    model: HbafModel
    history: list[dict]
    step_losses: list[LossReport]
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int


def _first_nonfinite(model: HbafModel, fwd: BatchForward, report: LossReport) -> str:
    name = model.store.first_nonfinite()
    if name is not None:
        return name
    for tname, arr in fwd.named:
        if not np.all(np.isfinite(arr)):
            return tname
    if not np.isfinite(report.l_ce):
        return "loss.ce"
    if not np.isfinite(report.l_inter):
        return "loss.inter"
    return "loss.objective"


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _eval_split(model: HbafModel, records, mu: float, batch_size: int):
    """Utterance-weighted losses plus predictions over a split, no grads."""
    tot_ce = tot_inter = 0.0
    n = 0
    preds, trues = [], []
    with ag.no_grad():
        for i in range(0, len(records), batch_size):
            chunk = records[i : i + batch_size]
            fwd = model.forward_batch(chunk)
            _, report = model.batch_loss(fwd, mu)
            k = fwd.labels.shape[0]
            tot_ce += report.l_ce * k
            tot_inter += report.l_inter * k
            n += k
            preds.append(fwd.logits.data.argmax(axis=1))
            trues.append(fwd.labels)
    ce = tot_ce / n
    inter = tot_inter / n
    effective_mu = mu if not model.cfg.no_contrastive else 0.0
    losses = LossReport(l_ce=ce, l_inter=inter, l_total=ce + effective_mu * inter, mu=effective_mu, parts={})
    return losses, np.concatenate(preds), np.concatenate(trues)


def evaluate(model: HbafModel, records, label_names, batch_size: int = 8) -> EvalReport:
    """Weighted F1 / per-class metrics / confusion matrix over a split."""
    if not records:
        raise DataError("cannot evaluate an empty split")
    _, preds, trues = _eval_split(model, records, mu=0.0, batch_size=batch_size)
    return evaluate_predictions(trues, preds, label_names)


def train(
    manifest: FeatureManifest,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    records: dict | None = None,
) -> TrainResult:
    """Full training run; returns the best-validation parameters.

    ``records`` may carry preloaded {"train": ..., "val": ...} splits to skip
    the disk roundtrip; otherwise they are read from the manifest root.
    """
    if records is None:
        records = {s: load_split(manifest, s) for s in ("train", "val")}
    train_recs, val_recs = tuple(records["train"]), tuple(records["val"])
    if not train_recs or not val_recs:
        raise DataError("train and val splits must be nonempty")
    if cfg.standardize:
        train_recs, stats = standardize(train_recs)
        val_recs, _ = standardize(val_recs, stats)

    model = HbafModel(model_cfg, seed=cfg.seed)
    opt = Adam(model.store, cfg)
    best_state = model.store.state()
    best_val = np.inf
    best_epoch = 0
    since_best = 0
    history: list[dict] = []
    step_losses: list[LossReport] = []
    stopped_epoch = 0

    for epoch in range(1, cfg.max_epochs + 1):
        stopped_epoch = epoch
        epoch_reports = []
        for batch in batch_dialogues(train_recs, cfg.batch_size, seed=_epoch_seed(cfg.seed, epoch)):
            model.store.zero_grad()
            fwd = model.forward_batch(batch)
            objective, report = model.batch_loss(fwd, cfg.mu)
            if cfg.l2_weight > 0 and not cfg.decoupled_l2:
                penalty = model.l2_penalty()
                report.l2_penalty = cfg.l2_weight * float(penalty.data)
                objective = ag.add(objective, ag.mul(penalty, cfg.l2_weight))
            if not np.all(np.isfinite(objective.data)):
                raise DivergenceError(_first_nonfinite(model, fwd, report))
            ag.backward(objective)
            opt.step(model.store)
            epoch_reports.append(report)
            step_losses.append(report)
        val_losses, val_pred, val_true = _eval_split(model, val_recs, cfg.mu, cfg.batch_size)
        val_metrics = evaluate_predictions(val_true, val_pred, manifest.label_set.names)
        history.append(
            {
                "epoch": epoch,
                "train_ce": float(np.mean([r.l_ce for r in epoch_reports])),
                "train_inter": float(np.mean([r.l_inter for r in epoch_reports])),
                "train_total": float(np.mean([r.l_total for r in epoch_reports])),
                "val_ce": val_losses.l_ce,
                "val_inter": val_losses.l_inter,
                "val_total": val_losses.l_total,
                "val_weighted_f1": val_metrics.weighted_f1,
                "val_accuracy": val_metrics.accuracy,
            }
        )
        if val_losses.l_total < best_val:
            best_val = val_losses.l_total
            best_state = model.store.state()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    model.store.load_state(best_state)
    return TrainResult(
        model=model,
        history=history,
        step_losses=step_losses,
        best_epoch=best_epoch,
        best_val_loss=float(best_val) if np.isfinite(best_val) else float("inf"),
        stopped_epoch=stopped_epoch,
    )


def ablation_study(
    manifest: FeatureManifest,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    flags,
    seeds,
    records: dict | None = None,
) -> dict[str, dict]:
    """Train the full model and each single-ablation variant across shared seeds.

    Returns {variant: {"mean_f1", "sd_f1", "runs"}} of validation weighted F1,
    with "full" first.
    """
    if records is None:
        records = {s: load_split(manifest, s) for s in ("train", "val")}
    variants = [("full", ())] + [(f, (f,)) for f in flags]
    results: dict[str, dict] = {}
    for name, flag_tuple in variants:
        runs = []
        for s in seeds:
            res = train(manifest, replace(cfg, seed=int(s)), model_cfg.ablated(flag_tuple), records=records)
            report = evaluate(res.model, records["val"], manifest.label_set.names, cfg.batch_size)
            runs.append(report.weighted_f1)
        results[name] = {"mean_f1": float(np.mean(runs)), "sd_f1": float(np.std(runs)), "runs": runs}
    return results


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    tolerance: float
    tensor_errors: dict[str, float]
    n_params: int
    seconds: float
    corrupted: str | None = None
    failures: list[str] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max(self.tensor_errors.values())

    @property
    def worst_tensor(self) -> str:
        return max(self.tensor_errors, key=self.tensor_errors.get)

    @property
    def passed(self) -> bool:
        return not self.failures

    def render(self) -> str:
        lines = [f"{'tensor':<28} {'max rel err':>12}"]
        for name, err in sorted(self.tensor_errors.items(), key=lambda kv: -kv[1]):
            flag = "  FAIL" if name in self.failures else ""
            lines.append(f"{name:<28} {err:>12.3e}{flag}")
        lines.append(f"checked {len(self.tensor_errors)} tensors / {self.n_params} scalars in {self.seconds:.1f}s")
        lines.append(f"max rel err = {self.max_rel_err:.3e} ({self.worst_tensor}); tolerance = {self.tolerance:.1e}")
        lines.append("RESULT: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def finite_difference_errors(
    loss_fn,
    store: ParameterStore,
    analytic: dict[str, np.ndarray],
    rel_step: float = 1e-5,
    tensors=None,
) -> dict[str, float]:
    """Max relative error per tensor between ``analytic`` and central differences.

    ``loss_fn`` is re-evaluated with each parameter scalar perturbed by
    +-rel_step * max(1, |theta|); gradients are compared entrywise with
    err = |a - n| / max(|a|, |n|, 1e-6).  ``tensors`` restricts the sweep to
    a subset of parameter names.
    """
    errors: dict[str, float] = {}
    for name, p in store.items():
        if tensors is not None and name not in tensors:
            continue
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            h = rel_step * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = loss_fn()
            flat[i] = orig - h
            f_minus = loss_fn()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-6)
            if err > worst:
                worst = err
        errors[name] = worst
    return errors


def grad_check(
    tolerance: float = 1e-4,
    width: int = 8,
    mu: float = 0.2,
    seed: int = 0,
    corrupt: str | None = None,
    rel_step: float = 1e-5,
    tensors=None,
) -> GradCheckReport:
    """Check analytic gradients of the full reduced-width graph against
    central finite differences on a tiny synthetic batch."""
    spec = SynthSpec(
        n_dialogues=2, utterances_per_dialogue=3, C=3, D_a=width, D_text=width, signal_mode="agreement", noise_std=0.3, seed=seed
    )
    _, records = generate_synthetic(spec)
    model_cfg = ModelConfig.with_width(width, audio_dim=width, text_dim=width, n_classes=3)
    model = HbafModel(model_cfg, seed=seed)
    batch = list(records)

    def loss_value() -> float:
        with ag.no_grad():
            fwd = model.forward_batch(batch)
            objective, _ = model.batch_loss(fwd, mu)
        return float(objective.data)

    t0 = time.perf_counter()
    model.store.zero_grad()
    fwd = model.forward_batch(batch)
    objective, _ = model.batch_loss(fwd, mu)
    ag.backward(objective)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in model.store.items()}
    if corrupt is not None:
        if corrupt not in analytic:
            raise KeyError(f"no such parameter tensor: {corrupt}")
        analytic[corrupt] = analytic[corrupt].copy()
        analytic[corrupt].reshape(-1)[0] += 1e-3
        if tensors is not None and corrupt not in tensors:
            tensors = list(tensors) + [corrupt]
    errors = finite_difference_errors(loss_value, model.store, analytic, rel_step=rel_step, tensors=tensors)
    n_checked = model.store.n_scalars() if tensors is None else sum(model.store[n].data.size for n in errors)
    seconds = time.perf_counter() - t0
    failures = [name for name, err in errors.items() if err > tolerance]
    return GradCheckReport(
        tolerance=tolerance,
        tensor_errors=errors,
        n_params=n_checked,
        seconds=seconds,
        corrupted=corrupt,
        failures=failures,
    )
