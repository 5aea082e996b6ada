"""Independent oracles shared by the test modules.

The finite-difference checker only ever calls the forward *value* path of the
function under test, so it is independent of the backward rules it verifies.
High-precision constants were computed offline with 40-digit arithmetic and
are pinned here as float64 literals.
"""

import numpy as np

# ln(1e-5), i.e. log_shifted(0, 1e-5)
LOG_SHIFTED_ZERO_1E5 = -11.512925464970228

# softmax([1, 2, 3])
SOFTMAX_123 = np.array([0.09003057317038046, 0.24472847105479765, 0.6652409557748219])

# label-smoothed CE: logits [2,0,0], label 0, alpha 0.1, K 3
LSCE_200_A01 = 0.37287809955521784
# plain CE, same logits and label
CE_200 = 0.2395447662218845

# mean entropy of the single row [0.7, 0.3] with eps 1e-5
COND_ENTROPY_73 = 0.6108443022929843
# entropy of a one-hot row with eps 1e-5: -ln(1 + 1e-5)
COND_ENTROPY_ONEHOT = -9.999950000333331e-06

# rce with p=[0.7,0.3], q=[1,0], eps 1e-5
RCE_73_ONEHOT = 3.4538706395260683

# (1 + 10*1)^-0.75
POLY_LR_AT_ONE = 0.16556002607617017


def fd_grad(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(*arrays) w.r.t. every entry."""
    grads = [np.zeros_like(a) for a in arrays]
    for a, g in zip(arrays, grads):
        flat_a, flat_g = a.reshape(-1), g.reshape(-1)
        for i in range(flat_a.size):
            orig = flat_a[i]
            flat_a[i] = orig + h
            up = f(*arrays)
            flat_a[i] = orig - h
            down = f(*arrays)
            flat_a[i] = orig
            flat_g[i] = (up - down) / (2.0 * h)
    return grads


def max_rel_err(analytic, numeric, floor=1e-4):
    """Worst relative error over matched gradient arrays.

    The floor keeps near-zero true gradients from blowing up the ratio; any
    gradient larger than the floor is compared truly relatively.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(np.abs(n), floor)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


def softmax_np(logits):
    """Plain numpy row softmax, used as a value oracle and by eval helpers."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
