"""Central finite-difference gradient checking.

Each checked entry is perturbed by +/- step in a fresh forward pass; the
numeric derivative is compared with the tape's analytic gradient. The
per-parameter error is max|a - n| / max(max|a|, max|n|, 1e-12).
"""

import logging
from typing import Callable, Optional

import numpy as np

from medvt.core.autodiff.graph import Graph, Var
from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import NonFiniteError
from medvt.core.tensor.rng import make_rng
from medvt.domain.models.reports import GradCheckReport, ParamGradCheck

logger = logging.getLogger(__name__)

LossFn = Callable[[Graph], Var]


def _forward(f: LossFn, params: ParamStore) -> float:
    graph = Graph(params)
    value = float(f(graph).value)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss is not finite ({value}) during finite differencing")
    return value


def grad_check(f: LossFn, params: ParamStore, step: float = 1e-5, tol: float = 1e-4,
               max_entries: Optional[int] = None, seed: int = 0, label: str = "loss") -> GradCheckReport:
    """Compares analytic and central-difference gradients for every trainable parameter.

    Args:
        f: builds the scalar loss on the given graph, reading parameters via graph.param.
        params: the evaluation point.
        max_entries: if set, checks a seeded random subset of at most this many entries per parameter.

    Raises:
        NonFiniteError: if the loss at the point (or a perturbed point) is not finite.
    """
    graph = Graph(params)
    loss = f(graph)
    if not np.all(np.isfinite(loss.value)):
        raise NonFiniteError(f"{label}: forward value is not finite")
    analytic = graph.backward(loss)

    near_kink = any(
        node.op == "relu" and node.meta.get("min_abs_input", np.inf) < 10 * step for node in graph.nodes
    )
    if near_kink:
        logger.warning(f"{label}: a relu input lies within 10*step of zero; finite differences may straddle the kink")

    rng = make_rng(seed)
    report = GradCheckReport(label=label, step=step, tolerance=tol, near_kink=near_kink)
    for name in params.trainable_names():
        base = params.value(name)
        a_full = analytic.get(name, np.zeros_like(base))
        if max_entries is not None and base.size > max_entries:
            indices = np.sort(rng.choice(base.size, size=max_entries, replace=False))
        else:
            indices = np.arange(base.size)

        a = a_full.reshape(-1)[indices]
        n = np.empty(len(indices), dtype=np.float64)
        for slot, flat in enumerate(indices):
            plus = base.copy()
            plus.flat[flat] += step
            minus = base.copy()
            minus.flat[flat] -= step
            f_plus = _forward(f, params.with_values({name: plus}))
            f_minus = _forward(f, params.with_values({name: minus}))
            n[slot] = (f_plus - f_minus) / (2.0 * step)

        abs_err = float(np.max(np.abs(a - n))) if len(indices) else 0.0
        scale = max(float(np.max(np.abs(a))) if len(a) else 0.0, float(np.max(np.abs(n))) if len(n) else 0.0, 1e-12)
        rel_err = abs_err / scale
        report.params.append(ParamGradCheck(name, len(indices), abs_err, rel_err, rel_err < tol))
        logger.debug(f"{label}: {name} rel_err={rel_err:.3e} over {len(indices)} entries")

    logger.info(f"Gradient check '{label}': max rel error {report.max_rel_error:.3e}, passed={report.passed}")
    return report
