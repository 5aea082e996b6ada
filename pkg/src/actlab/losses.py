"""The four adaptation losses and the two-step objectives built from them.

All losses take raw logits ([n, K] tensors) and return scalar tensors wired
into the tape, so one backward call yields exact gradients. Shapes:

    lsce          mean_i -sum_k q^l_k ln softmax_k(z_i),  q^l = (1-a) onehot + a/K
    cond_entropy  mean_i -sum_k r_ik ln(r_ik + eps),      r = softmax(z)
    rce           mean_i -sum_k p_ik ln(q_ik + eps),      q frozen source probs
    cdd           mean_i (1 - <p1_i, p2_i>)

The CDD closed form is the collapsed off-diagonal sum of the K x K relevance
matrix p1 p2^T; the tests verify the algebra against explicit enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor, scalar_mul

SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_lsce: float = 1.0
    lambda_e: float = 0.3
    lambda_rce: float = 0.3
    lambda_cdd: float = 1.0

    def __post_init__(self):
        for name in ("lambda_lsce", "lambda_e", "lambda_rce", "lambda_cdd"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True)
class SmoothingParams:
    alpha_smooth: float = 0.1
    eps_log: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.alpha_smooth < 1.0:
            raise ContractViolation(f"alpha_smooth must be in [0, 1), got {self.alpha_smooth}")
        if not 0.0 < self.eps_log < 1.0:
            raise ContractViolation(f"eps_log must be in (0, 1), got {self.eps_log}")


def _check_logits(logits, who):
    if not isinstance(logits, Tensor) or logits.ndim != 2:
        raise ContractViolation(f"{who} needs [n, K] logits")
    n, k = logits.shape
    if n < 1 or k < 2:
        raise ContractViolation(f"{who}: degenerate logits shape {logits.shape}")
    return n, k


def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ContractViolation(f"labels must be [{n}], got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractViolation(f"labels must be integers, got dtype {labels.dtype}")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise ContractViolation(f"label at row {i} is {labels[i]}, outside [0, {k})")
    return labels


def _check_simplex(probs, who):
    probs = np.asarray(probs, dtype=np.float64)
    rows = probs if probs.ndim == 2 else probs[None, :]
    if np.any(rows < -SIMPLEX_TOL):
        raise ContractViolation(f"{who}: negative probability entry")
    sums = rows.sum(axis=1)
    off = np.abs(sums - 1.0)
    if np.any(off > SIMPLEX_TOL):
        i = int(np.argmax(off))
        raise ContractViolation(f"{who}: row {i} sums to {sums[i]!r}, not 1")
    return probs


def lsce(logits: Tensor, labels, alpha_smooth: float) -> Tensor:
    """Label-smoothed cross-entropy against hard labels."""
    n, k = _check_logits(logits, "lsce")
    labels = _check_labels(labels, n, k)
    if not 0.0 <= alpha_smooth < 1.0:
        raise ContractViolation(f"alpha_smooth must be in [0, 1), got {alpha_smooth}")
    smoothed = np.full((n, k), alpha_smooth / k)
    smoothed[np.arange(n), labels] += 1.0 - alpha_smooth
    logp = logits.softmax_rows().log_shifted(0.0)
    return scalar_mul(-1.0 / n, (Tensor(smoothed) * logp).sum())


def cond_entropy(logits: Tensor, eps_log: float) -> Tensor:
    """Mean Shannon entropy of the prediction rows, log shifted by eps_log.

    The shift keeps ln finite at r = 0; it also makes the value dip slightly
    below zero on one-hot rows, which is fine.
    """
    n, _ = _check_logits(logits, "cond_entropy")
    probs = logits.softmax_rows()
    return scalar_mul(-1.0 / n, (probs * probs.log_shifted(eps_log)).sum())


def rce(target_logits: Tensor, source_probs, eps_log: float) -> Tensor:
    """Reverse cross-entropy: target predictions scored under frozen source probs.

    ``source_probs`` is a plain array; no gradient ever flows into it.
    """
    n, k = _check_logits(target_logits, "rce")
    source_probs = _check_simplex(source_probs, "rce source_probs")
    if source_probs.shape != (n, k):
        raise ContractViolation(
            f"rce: source_probs shape {source_probs.shape} != logits shape {(n, k)}")
    log_q = np.log(source_probs + eps_log)
    p = target_logits.softmax_rows()
    return scalar_mul(-1.0 / n, (p * Tensor(log_q)).sum())


def cdd_pair(p1, p2) -> float:
    """Classifier determinacy disparity of one probability pair: 1 - <p1, p2>.

    Equal to the off-diagonal mass of the relevance matrix p1 p2^T because the
    full matrix sums to exactly 1.
    """
    p1 = _check_simplex(p1, "cdd_pair p1")
    p2 = _check_simplex(p2, "cdd_pair p2")
    if p1.ndim != 1 or p2.ndim != 1 or p1.shape != p2.shape:
        raise ContractViolation(f"cdd_pair needs two equal-length vectors, "
                                f"got {p1.shape} and {p2.shape}")
    return float(1.0 - np.dot(p1, p2))


def cdd_batch(logits1: Tensor, logits2: Tensor) -> Tensor:
    """Batch-mean CDD between the two branches' softmax rows."""
    n1, k1 = _check_logits(logits1, "cdd_batch")
    n2, k2 = _check_logits(logits2, "cdd_batch")
    if (n1, k1) != (n2, k2):
        raise ContractViolation(f"cdd_batch: branch shapes differ, {logits1.shape} "
                                f"vs {logits2.shape}")
    inner = (logits1.softmax_rows() * logits2.softmax_rows()).sum()
    return scalar_mul(-1.0 / n1, inner) + 1.0


def _components(logits1, logits2, labels, source_probs1, source_probs2, smoothing):
    return {
        "lsce": lsce(logits1, labels, smoothing.alpha_smooth)
                + lsce(logits2, labels, smoothing.alpha_smooth),
        "entropy": cond_entropy(logits1, smoothing.eps_log)
                   + cond_entropy(logits2, smoothing.eps_log),
        "rce": rce(logits1, source_probs1, smoothing.eps_log)
               + rce(logits2, source_probs2, smoothing.eps_log),
        "cdd": cdd_batch(logits1, logits2),
    }


def _weighted_base(parts, weights):
    return (scalar_mul(weights.lambda_lsce, parts["lsce"])
            + scalar_mul(weights.lambda_e, parts["entropy"])
            + scalar_mul(weights.lambda_rce, parts["rce"]))


def step1_objective(logits1, logits2, labels, source_probs1, source_probs2,
                    weights: LossWeights, smoothing: SmoothingParams):
    """Supervision + entropy + source anchoring, summed over both branches.

    Returns (scalar tensor, component values). The CDD value is computed for
    the log but takes no part in this objective.
    """
    parts = _components(logits1, logits2, labels, source_probs1, source_probs2, smoothing)
    total = _weighted_base(parts, weights)
    return total, {name: t.item() for name, t in parts.items()}


def step2_objective(logits1, logits2, labels, source_probs1, source_probs2,
                    weights: LossWeights, smoothing: SmoothingParams,
                    cdd_sign: str = "as_printed"):
    """Step-1 terms with the weighted CDD term added.

    ``as_printed`` subtracts lambda_cdd * cdd (minimizing the objective pushes
    the two heads' determinacy disparity up); ``flipped`` adds it instead.
    """
    if cdd_sign not in ("as_printed", "flipped"):
        raise ContractViolation(f"cdd_sign must be as_printed or flipped, got {cdd_sign!r}")
    parts = _components(logits1, logits2, labels, source_probs1, source_probs2, smoothing)
    sign = -1.0 if cdd_sign == "as_printed" else 1.0
    total = _weighted_base(parts, weights) + scalar_mul(sign * weights.lambda_cdd, parts["cdd"])
    return total, {name: t.item() for name, t in parts.items()}
