"""Pretrain on source, adapt on a few-shot support set, evaluate, sweep seeds.

The adaptation loop alternates two loss-driven steps per outer iteration:

    step 1  supervision + entropy + reverse CE, over every target parameter
    step 2  the same terms with the weighted CDD term applied (default sign
            subtracts it, i.e. pushes head disparity up), over the two
            classifier heads only

Branch 1 consumes weakly augmented views, branch 2 strongly augmented ones.
Every optimizer step goes through SAM wrapping Adam; the learning rate decays
as eta0 * (1 + 10 p)^-0.75 over outer-iteration progress p.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import (AugmentPolicy, LabeledSet, SupportSplit, augment_batch,
                   batches, make_domain_pair, rng_stream, sample_support)
from .errors import ContractViolation, DivergenceError
from .losses import (LossWeights, SmoothingParams, lsce, step1_objective,
                     step2_objective)
from .models import (MlpSpec, ModelBundle, build, clone_for_adaptation,
                     forward_source_branch, forward_target,
                     forward_target_branch, frozen_params, params_fingerprint,
                     trainable_params)
from .optim import (LrSchedule, SamConfig, SamState, SgdConfig, SgdState,
                    lr_at, sam_step, sgd_step)
from .tensor import Tensor, backward, zero_grad

EVAL_HEADS = ("c_t1", "mean_of_heads")
VIEW_MODES = ("asymmetric", "both_to_both")


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 60
    batch_size: int = 32
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(lr=0.02, momentum=0.9,
                                                             weight_decay=5e-4))
    lr_multiplier_heads: float = 10.0
    alpha_smooth: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractViolation(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_multiplier_heads <= 0:
            raise ContractViolation("lr_multiplier_heads must be positive")
        if not 0.0 <= self.alpha_smooth < 1.0:
            raise ContractViolation("alpha_smooth must be in [0, 1)")


@dataclass(frozen=True)
class ScheduleConfig:
    eta0: float = 1e-3
    head_multiplier: float = 10.0 / 3.0
    schedule_extractor: bool = True
    schedule_heads: bool = True

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ContractViolation(f"eta0 must be positive, got {self.eta0}")
        if self.head_multiplier <= 0:
            raise ContractViolation("head_multiplier must be positive")


@dataclass(frozen=True)
class AdaptConfig:
    total_iterations: int = 2000
    batch_size: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    sam: SamConfig = field(default_factory=SamConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    cdd_sign: str = "as_printed"
    step_pattern: str = "12"
    fresh_batch_per_step: bool = True
    view_mode: str = "asymmetric"
    eval_head: str = "c_t1"
    seed: int = 0

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ContractViolation("total_iterations must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.cdd_sign not in ("as_printed", "flipped"):
            raise ContractViolation("cdd_sign must be as_printed or flipped")
        if not self.step_pattern or set(self.step_pattern) - {"1", "2"}:
            raise ContractViolation(f"step_pattern must be a nonempty string over "
                                    f"'1'/'2', got {self.step_pattern!r}")
        if self.view_mode not in VIEW_MODES:
            raise ContractViolation(f"view_mode must be one of {VIEW_MODES}")
        if self.eval_head not in EVAL_HEADS:
            raise ContractViolation(f"eval_head must be one of {EVAL_HEADS}")


@dataclass
class StepRecord:
    iteration: int
    step_kind: str
    loss_total: float
    loss_lsce: float
    loss_entropy: float
    loss_rce: float
    loss_cdd: float
    lr: float

    def to_dict(self):
        return asdict(self)


@dataclass
class EvalResult:
    accuracy: float
    per_class: list
    macro_accuracy: float
    confusion: np.ndarray
    num_test: int


@dataclass
class RunReport:
    trace: list
    accuracy: float
    per_class: list
    macro_accuracy: float
    confusion: list
    no_adapt_accuracy: float
    no_adapt_per_class: list
    no_adapt_macro_accuracy: float
    seeds: dict
    config_hash: str
    checkpoint_paths: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "final": {
                "accuracy": self.accuracy,
                "per_class_accuracy": self.per_class,
                "macro_accuracy": self.macro_accuracy,
                "confusion_matrix": self.confusion,
                "no_adapt_accuracy": self.no_adapt_accuracy,
                "no_adapt_per_class_accuracy": self.no_adapt_per_class,
                "no_adapt_macro_accuracy": self.no_adapt_macro_accuracy,
            },
            "provenance": {
                "seeds": self.seeds,
                "config_hash": self.config_hash,
                "checkpoint_paths": self.checkpoint_paths,
            },
            "trace": [r.to_dict() for r in self.trace],
        }


def _softmax_np(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def hash_of_dict(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# -- evaluation -------------------------------------------------------------------


def evaluate(bundle: ModelBundle, test: LabeledSet, eval_head: str = "c_t1") -> EvalResult:
    """Accuracy, per-class accuracy and confusion counts on clean inputs.

    Argmax ties resolve to the lowest class index. Classes absent from the
    test set get a None per-class entry and stay out of the macro average.
    """
    if eval_head not in EVAL_HEADS:
        raise ContractViolation(f"eval_head must be one of {EVAL_HEADS}")
    if len(test) == 0:
        raise ContractViolation("cannot evaluate an empty test set")
    if test.num_classes != bundle.spec.num_classes:
        raise ContractViolation(f"test set has {test.num_classes} classes, "
                                f"model expects {bundle.spec.num_classes}")
    l1, l2 = forward_target(bundle, Tensor(test.xs))
    if eval_head == "c_t1":
        probs = _softmax_np(l1.data)
    else:
        probs = 0.5 * (_softmax_np(l1.data) + _softmax_np(l2.data))
    preds = np.argmax(probs, axis=1)
    k = test.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (test.ys, preds), 1)
    per_class, present = [], []
    for c in range(k):
        total = int(confusion[c].sum())
        if total == 0:
            per_class.append(None)
        else:
            acc_c = float(confusion[c, c] / total)
            per_class.append(acc_c)
            present.append(acc_c)
    return EvalResult(
        accuracy=float((preds == test.ys).mean()),
        per_class=per_class,
        macro_accuracy=float(np.mean(present)),
        confusion=confusion,
        num_test=len(test),
    )


# -- source pretraining -------------------------------------------------------------


def pretrain_source(source: LabeledSet, spec: MlpSpec, cfg: PretrainConfig):
    """Train extractor plus both heads with label-smoothed CE under SGD-momentum.

    Returns (bundle, history); history holds one record per epoch. Zero epochs
    returns the untouched initialization.
    """
    if source.num_classes != spec.num_classes:
        raise ContractViolation(f"source has {source.num_classes} classes, "
                                f"spec expects {spec.num_classes}")
    bundle = build(spec)
    params = trainable_params(bundle, "all_target")
    n_heads = len(trainable_params(bundle, "classifiers_only"))
    lrs = [cfg.sgd.lr] * (len(params) - n_heads) + \
          [cfg.sgd.lr * cfg.lr_multiplier_heads] * n_heads
    state = SgdState()
    history = []
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for idx in batches(source, cfg.batch_size, cfg.seed, epoch):
            x, y = Tensor(source.xs[idx]), source.ys[idx]
            l1, l2 = forward_target(bundle, x)
            if not (np.isfinite(l1.data).all() and np.isfinite(l2.data).all()):
                raise DivergenceError(f"pretraining diverged at epoch {epoch}: "
                                      f"non-finite logits", iteration=epoch,
                                      last_loss=float("nan"))
            loss = lsce(l1, y, cfg.alpha_smooth) + lsce(l2, y, cfg.alpha_smooth)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"pretraining diverged at epoch {epoch}",
                                      iteration=epoch, last_loss=value)
            zero_grad(params)
            backward(loss)
            sgd_step(params, [p.grad for p in params], state, cfg.sgd, lr_override=lrs)
            epoch_losses.append(value)
        history.append({
            "epoch": epoch,
            "mean_loss": float(np.mean(epoch_losses)),
            "train_accuracy": evaluate(bundle, source).accuracy,
        })
    return bundle, history


# -- adaptation ----------------------------------------------------------------------


def _batch_stream(support, batch_size, seed):
    epoch = 0
    while True:
        for idx in batches(support, batch_size, seed, epoch):
            yield idx
        epoch += 1


def _route_views(view_mode, weak, strong, ys):
    if view_mode == "asymmetric":
        return weak, strong, ys
    both = np.vstack([weak, strong])
    return both, both, np.concatenate([ys, ys])


def adapt(source_model: ModelBundle, split: SupportSplit, policy: AugmentPolicy,
          cfg: AdaptConfig):
    """Run the two-step loop from a pretrained model. Returns (bundle, report).

    The adapted bundle's frozen side keeps the pretrained weights bitwise; a
    non-finite loss aborts with the iteration index and the last finite
    parameter snapshot attached.
    """
    spec = source_model.spec
    support = split.support
    if support.num_classes != spec.num_classes:
        raise ContractViolation(f"support labels span {support.num_classes} classes, "
                                f"model expects {spec.num_classes}")
    if support.xs.shape[1] != spec.input_dim:
        raise ContractViolation(f"support dim {support.xs.shape[1]} != model "
                                f"input dim {spec.input_dim}")

    bundle = clone_for_adaptation(source_model)
    frozen_before = params_fingerprint(frozen_params(bundle))
    params_all = trainable_params(bundle, "all_target")
    params_heads = trainable_params(bundle, "classifiers_only")
    n_extract = len(params_all) - len(params_heads)

    schedule = LrSchedule(cfg.schedule.eta0)
    sam_state_all, sam_state_heads = SamState(), SamState()
    n_t = min(cfg.batch_size, len(support))
    batch_iter = _batch_stream(support, n_t, cfg.seed)
    aug_rng = rng_stream(cfg.seed, "augment")

    trace = []
    last_good = {name: t.data.copy() for name, t in bundle.named_params("target")}
    for it in range(cfg.total_iterations):
        progress = it / cfg.total_iterations
        eta = lr_at(schedule, progress)
        lr_ext = eta if cfg.schedule.schedule_extractor else cfg.schedule.eta0
        lr_head = (eta if cfg.schedule.schedule_heads else cfg.schedule.eta0) \
            * cfg.schedule.head_multiplier
        lrs_all = [lr_ext] * n_extract + [lr_head] * len(params_heads)
        lrs_heads = [lr_head] * len(params_heads)

        step_inputs = None
        for step_kind in cfg.step_pattern:
            if step_inputs is None or cfg.fresh_batch_per_step:
                idx = next(batch_iter)
                xs, ys = support.xs[idx], support.ys[idx]
                weak = augment_batch(xs, policy, "weak", aug_rng)
                strong = augment_batch(xs, policy, "strong", aug_rng)
                view1, view2, labels = _route_views(cfg.view_mode, weak, strong, ys)
                # frozen-source probabilities for the same views; constants
                q1 = _softmax_np(forward_source_branch(bundle, Tensor(view1), 1).data)
                q2 = _softmax_np(forward_source_branch(bundle, Tensor(view2), 2).data)
                step_inputs = (view1, view2, labels, q1, q2)
            view1, view2, labels, q1, q2 = step_inputs

            comps_box = {}

            def closure(step_kind=step_kind, view1=view1, view2=view2,
                        labels=labels, q1=q1, q2=q2, comps_box=comps_box,
                        it=it, last_good=last_good):
                l1 = forward_target_branch(bundle, Tensor(view1), 1)
                l2 = forward_target_branch(bundle, Tensor(view2), 2)
                if not (np.isfinite(l1.data).all() and np.isfinite(l2.data).all()):
                    raise DivergenceError(
                        f"adaptation diverged at iteration {it} (step {step_kind}): "
                        f"non-finite logits", iteration=it, last_loss=float("nan"),
                        last_good_params=last_good)
                if step_kind == "1":
                    total, comps = step1_objective(l1, l2, labels, q1, q2,
                                                   cfg.weights, cfg.smoothing)
                else:
                    total, comps = step2_objective(l1, l2, labels, q1, q2,
                                                   cfg.weights, cfg.smoothing,
                                                   cfg.cdd_sign)
                if not comps_box:  # log the unperturbed evaluation only
                    comps_box.update(comps)
                return total

            if step_kind == "1":
                loss_value = sam_step(params_all, closure, sam_state_all,
                                      cfg.sam, lr_override=lrs_all)
            else:
                loss_value = sam_step(params_heads, closure, sam_state_heads,
                                      cfg.sam, lr_override=lrs_heads)

            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"adaptation diverged at iteration {it} (step {step_kind})",
                    iteration=it, last_loss=loss_value, last_good_params=last_good)
            last_good = {name: t.data.copy() for name, t in bundle.named_params("target")}
            trace.append(StepRecord(
                iteration=it, step_kind=f"step{step_kind}", loss_total=loss_value,
                loss_lsce=comps_box["lsce"], loss_entropy=comps_box["entropy"],
                loss_rce=comps_box["rce"], loss_cdd=comps_box["cdd"], lr=eta))

    if params_fingerprint(frozen_params(bundle)) != frozen_before:
        raise RuntimeError("frozen source copies changed during adaptation")

    final = evaluate(bundle, split.test, cfg.eval_head)
    baseline = evaluate(source_model, split.test, cfg.eval_head)
    report = RunReport(
        trace=trace,
        accuracy=final.accuracy,
        per_class=final.per_class,
        macro_accuracy=final.macro_accuracy,
        confusion=final.confusion.tolist(),
        no_adapt_accuracy=baseline.accuracy,
        no_adapt_per_class=baseline.per_class,
        no_adapt_macro_accuracy=baseline.macro_accuracy,
        seeds={"adapt_seed": cfg.seed, "split_seed": split.seed,
               "init_seed": spec.init_seed},
        config_hash=hash_of_dict({"adapt": asdict(cfg), "augment": asdict(policy)}),
    )
    return bundle, report


# -- seed sweeps ---------------------------------------------------------------------


@dataclass
class SweepCell:
    data_seed: int
    model_seed: int
    status: str
    no_adapt_accuracy: float | None
    adapted_accuracy: float | None
    no_adapt_macro: float | None
    adapted_macro: float | None

    def to_dict(self):
        return asdict(self)


@dataclass
class SweepReport:
    cells: list
    mean_adapted: float | None
    mean_no_adapt: float | None
    spread_adapted: float | None
    variance_adapted: float | None

    def to_dict(self):
        return {"cells": [c.to_dict() for c in self.cells],
                "mean_adapted": self.mean_adapted,
                "mean_no_adapt": self.mean_no_adapt,
                "spread_adapted": self.spread_adapted,
                "variance_adapted": self.variance_adapted}


def _run_cell(spec, source_params, target, n_way, k_shot, data_seed, model_seed,
              policy, adapt_cfg):
    from .models import bundle_from_params
    try:
        pretrained = bundle_from_params(spec, source_params)
        split = sample_support(target, n_way, k_shot, seed=data_seed)
        _, report = adapt(pretrained, split, policy, adapt_cfg)
        return SweepCell(data_seed, model_seed, "ok",
                         report.no_adapt_accuracy, report.accuracy,
                         report.no_adapt_macro_accuracy, report.macro_accuracy)
    except Exception as e:  # a failed cell is data, not a crash
        return SweepCell(data_seed, model_seed, f"error: {type(e).__name__}: {e}",
                         None, None, None, None)


def _pool_cell(payload):
    return _run_cell(*payload)


def seed_sweep(domain, spec, pretrain_cfg, adapt_cfg, policy, n_way, k_shot,
               data_seeds, model_seeds, jobs: int = 1) -> SweepReport:
    """Cross-product of data seeds (support draw) and model seeds (init + pretrain).

    Pretraining happens once per model seed; cells may run in parallel. Failed
    cells are recorded with their error and skipped by the aggregates. Spread
    and variance are computed across data seeds after averaging over model
    seeds within each data seed.
    """
    if not data_seeds or not model_seeds:
        raise ContractViolation("need at least one data seed and one model seed")
    source, target = make_domain_pair(domain)
    source_params = {}
    for ms in model_seeds:
        pre_bundle, _ = pretrain_source(source, replace(spec, init_seed=ms),
                                        replace(pretrain_cfg, seed=ms))
        source_params[ms] = {name: t.data.copy()
                             for name, t in pre_bundle.named_params("target")}

    payloads = [(replace(spec, init_seed=ms), source_params[ms], target, n_way,
                 k_shot, ds, ms, policy, adapt_cfg)
                for ds in data_seeds for ms in model_seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_pool_cell, payloads))
    else:
        cells = [_run_cell(*p) for p in payloads]
    cells.sort(key=lambda c: (c.data_seed, c.model_seed))

    ok = [c for c in cells if c.status == "ok"]
    if ok:
        by_ds = {}
        for c in ok:
            by_ds.setdefault(c.data_seed, []).append(c.adapted_accuracy)
        ds_means = [float(np.mean(v)) for _, v in sorted(by_ds.items())]
        report = SweepReport(
            cells=cells,
            mean_adapted=float(np.mean([c.adapted_accuracy for c in ok])),
            mean_no_adapt=float(np.mean([c.no_adapt_accuracy for c in ok])),
            spread_adapted=float(max(ds_means) - min(ds_means)),
            variance_adapted=float(np.var(ds_means)),
        )
    else:
        report = SweepReport(cells=cells, mean_adapted=None, mean_no_adapt=None,
                             spread_adapted=None, variance_adapted=None)
    return report
