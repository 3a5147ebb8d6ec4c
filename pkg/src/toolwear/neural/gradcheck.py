"""Central finite-difference check of the BPTT gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LstmModel, backward, forward_batch, loss


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    worst_gate: str | None
    analytic: float
    numeric: float
    n_checked: int
    tol: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def describe(self) -> str:
        gate = f" gate {self.worst_gate}" if self.worst_gate else ""
        return (f"max relative error {self.max_rel_error:.3e} at {self.worst_param}"
                f"{list(self.worst_index)}{gate} (analytic {self.analytic:.6e}, "
                f"numeric {self.numeric:.6e}); {self.n_checked} entries, tol {self.tol:g}")


def relative_error(a, n, floor: float = 1e-6):
    """``|a - n| / max(|a|, |n|, floor)``.

    Central differences with h=1e-5 carry ~1e-11 absolute error, so entries
    below ``floor`` are judged on absolute error instead.
    """
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _gate_of(name: str, index: tuple, model: LstmModel) -> str | None:
    if not name.startswith("layer"):
        return None
    l = int(name[5:name.index(".")])
    H = model.units[l]
    return "ifgo"[index[0] // H]


def gradient_check(model: LstmModel, x, y, h: float = 1e-5, tol: float = 1e-4,
                   params=None, floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of the full loss with central differences.

    Runs in inference mode (no dropout). ``params`` restricts the check to
    a subset of parameter names, e.g. ``["dense.w", "dense.b"]``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pred, cache = forward_batch(model, x, training=False)
    grads = backward(model, y, cache, pred)
    names = list(params) if params is not None else list(model.params)

    def f():
        return loss(forward_batch(model, x, training=False)[0], y, model)

    worst = (-1.0, names[0], (0,), 0.0, 0.0)
    per_param = {}
    checked = 0
    for name in names:
        theta = model.params[name]
        g = grads[name]
        param_worst = 0.0
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + h
            fp = f()
            theta[idx] = old - h
            fm = f()
            theta[idx] = old
            num = (fp - fm) / (2.0 * h)
            err = float(relative_error(g[idx], num, floor))
            checked += 1
            param_worst = max(param_worst, err)
            if err > worst[0]:
                worst = (err, name, idx, float(g[idx]), num)
        per_param[name] = param_worst
    err, name, idx, a, n = worst
    gate = _gate_of(name, idx, model)
    return GradCheckReport(max(err, 0.0), name, tuple(int(i) for i in idx), gate, a, n, checked,
                           tol, per_param)
