"""Independent reference implementations used only by the tests.

These deliberately avoid the library code paths they check: convolutions
are direct position-by-position loops over float64 numpy arrays, and the
adaptation control flow is a literal hand-execution of the tested/ trained
subsession schedule.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def _bn_eval(x: np.ndarray, gamma, beta, mean, var) -> np.ndarray:
    return gamma[:, None] * (x - mean[:, None]) / np.sqrt(var[:, None] + BN_EPS) + beta[:, None]


def naive_forward(model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode forward pass by direct convolution loops; returns
    (logits, features) in float64."""
    sd = {k: v.detach().numpy().astype(np.float64) for k, v in model.state_dict().items()}
    arch = model.arch
    n_f = arch.n_filters
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[1]

    w = sd["spatial.weight"]  # (F, C, 1)
    f1 = np.empty((n_f, n))
    for f in range(n_f):
        for t in range(n):
            f1[f, t] = np.dot(w[f, :, 0], x[:, t])
    f1 = _bn_eval(f1, sd["bn1.weight"], sd["bn1.bias"], sd["bn1.running_mean"], sd["bn1.running_var"])

    k = arch.temporal_kernel
    pl, pr = (k - 1) // 2, k // 2
    w = sd["temporal.weight"]  # (F, 1, K)
    f2 = np.empty((n_f, n))
    for f in range(n_f):
        padded = np.concatenate([np.zeros(pl), f1[f], np.zeros(pr)])
        for t in range(n):
            f2[f, t] = np.dot(padded[t : t + k], w[f, 0])
    f2 = _bn_eval(f2, sd["bn2.weight"], sd["bn2.bias"], sd["bn2.running_mean"], sd["bn2.running_var"])
    f2 = np.maximum(f2, 0.0)

    p = arch.pool1
    n3 = n // p
    f3 = np.empty((n_f, n3))
    for f in range(n_f):
        for t in range(n3):
            f3[f, t] = f2[f, t * p : (t + 1) * p].max()

    k = arch.ds_kernel
    pl, pr = (k - 1) // 2, k // 2
    w = sd["ds_depthwise.weight"]
    f4 = np.empty((n_f, n3))
    for f in range(n_f):
        padded = np.concatenate([np.zeros(pl), f3[f], np.zeros(pr)])
        for t in range(n3):
            f4[f, t] = np.dot(padded[t : t + k], w[f, 0])

    w = sd["pointwise.weight"]  # (F, F, 1)
    f5 = np.empty((n_f, n3))
    for f in range(n_f):
        for t in range(n3):
            f5[f, t] = np.dot(w[f, :, 0], f4[:, t])
    f5 = _bn_eval(f5, sd["bn3.weight"], sd["bn3.bias"], sd["bn3.running_mean"], sd["bn3.running_var"])
    f5 = np.maximum(f5, 0.0)

    p = arch.pool2
    n6 = n3 // p
    f6 = np.empty((n_f, n6))
    for f in range(n_f):
        for t in range(n6):
            f6[f, t] = f5[f, t * p : (t + 1) * p].max()

    feat = f6.reshape(-1)
    logits = sd["head.weight"] @ feat + sd["head.bias"]
    return logits, feat


def trace_schedule(accs: list[float], t_acc: float) -> tuple[dict[int, str], list[int]]:
    """Hand-executed control flow: walk the subsessions, test each, and on a
    failure consume the next one for training (if it exists) before resuming
    two ahead. Returns ({1-based index: role}, [triggering indices])."""
    n = len(accs)
    roles: dict[int, str] = {}
    triggers: list[int] = []
    i = 1
    while i <= n:
        roles[i] = "tested"
        if accs[i - 1] >= t_acc:
            i += 1
        elif i + 1 <= n:
            triggers.append(i)
            roles[i + 1] = "trained"
            i += 2
        else:
            i += 1
    return roles, triggers
