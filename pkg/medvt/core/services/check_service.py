"""Verification suites behind `gradcheck` and `propcheck`.

gradcheck: every differentiable op on the tape against central finite
differences, over several seeded shapes each, plus the micro model's
stage-1 and stage-2 losses end to end.

propcheck: frame-mask semantics of the propagator, the random-walk
(spectral) oracle, rule-based versus dense -inf masked attention, and the
structural contracts of a full forward pass.
"""

import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.functional import DIFFERENTIABLE_OPS
from medvt.core.autodiff.gradcheck import grad_check
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.autodiff.params import ParamStore
from medvt.core.data.synthclip import generate
from medvt.core.exceptions import MedvtError
from medvt.core.model import layers
from medvt.core.model.attention import (
    FrameIndex,
    MultiheadWeights,
    attention_maps,
    dense_masked_mha,
    make_rule,
    masked_mha,
)
from medvt.core.model.backbone import toy_backbone
from medvt.core.model.decoder import decoder_output, learn_queries, object_attention, pixel_decode, raw_object_attention
from medvt.core.model.encoder import encode
from medvt.core.model.labelprop import combine, spectral_oracle
from medvt.core.model.medvt import MedVT
from medvt.core.tensor import ops
from medvt.core.tensor.rng import Rng, derive_seed, make_rng
from medvt.domain.interfaces.user_interface import UserInterface
from medvt.domain.models.configs import ModelConfig, desk_config, micro_config, published_dims
from medvt.domain.models.reports import CheckSuiteReport, GradCheckReport
from medvt.domain.models.scene import SceneSpec

logger = logging.getLogger(__name__)

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
FD_STEP = 1e-5
ROW_SUM_TOLERANCE = 1e-12

OpCase = Tuple[ParamStore, Callable[[Graph], Var]]


@contextmanager
def ordered_summation() -> Iterator[None]:
    previous = ops.get_summation_mode()
    ops.set_summation_mode("ordered")
    try:
        yield
    finally:
        ops.set_summation_mode(previous)


# === Per-op gradient cases ===

def _dim(rng: Rng, low: int = 2, high: int = 4) -> int:
    return int(rng.integers(low, high + 1))


def _store(**arrays: np.ndarray) -> ParamStore:
    store = ParamStore()
    for name, value in arrays.items():
        store.add(name, value)
    return store


def _probe(rng: Rng, y: Var) -> Var:
    """sum(y * R) for a fixed random R: a scalar whose gradient reaches every entry of y."""
    weights = rng.standard_normal(y.shape) if y.ndim else np.asarray(rng.standard_normal())
    return F.sum_(F.mul(y, weights))


def _away_from_zero(rng: Rng, shape) -> np.ndarray:
    return np.sign(rng.standard_normal(shape)) * (0.1 + np.abs(rng.standard_normal(shape)))


def _positive(rng: Rng, shape) -> np.ndarray:
    return 0.5 + np.abs(rng.standard_normal(shape))


def op_case(name: str, rng: Rng) -> OpCase:
    """Evaluation point and scalar loss exercising the op `name`."""
    m, n = _dim(rng), _dim(rng)
    probe_rng = make_rng(int(rng.integers(2 ** 31)))
    x = rng.standard_normal((m, n))

    def probed(build: Callable[[Graph], Var]) -> Callable[[Graph], Var]:
        seed = int(probe_rng.integers(2 ** 31))
        return lambda g: _probe(make_rng(seed), build(g))

    if name in ("add", "sub", "mul"):
        fn = {"add": F.add, "sub": F.sub, "mul": F.mul}[name]
        return _store(x=x, y=rng.standard_normal((m, n))), probed(lambda g: fn(g.param("x"), g.param("y")))
    if name == "div":
        return (_store(x=x, y=_positive(rng, (m, n))),
                probed(lambda g: F.div(g.param("x"), g.param("y"))))
    if name == "scale":
        return _store(x=x), probed(lambda g: F.scale(g.param("x"), 1.7))
    if name == "add_scalar":
        return _store(x=x), probed(lambda g: F.add_scalar(g.param("x"), 0.3))
    if name == "matmul":
        k = _dim(rng)
        return (_store(a=rng.standard_normal((m, k)), b=rng.standard_normal((k, n))),
                probed(lambda g: F.matmul(g.param("a"), g.param("b"))))
    if name == "relu":
        return _store(x=_away_from_zero(rng, (m, n))), probed(lambda g: F.relu(g.param("x")))
    if name == "exp":
        return _store(x=0.5 * x), probed(lambda g: F.exp(g.param("x")))
    if name == "log":
        return _store(x=_positive(rng, (m, n))), probed(lambda g: F.log(g.param("x")))
    if name == "power":
        return _store(x=_positive(rng, (m, n))), probed(lambda g: F.power(g.param("x"), 1.5))
    if name == "softmax":
        return _store(x=x), probed(lambda g: F.softmax(g.param("x"), axis=-1))
    if name == "log_softmax":
        return _store(x=x), probed(lambda g: F.log_softmax(g.param("x"), axis=-1))
    if name == "sum":
        return _store(x=x), probed(lambda g: F.sum_(g.param("x"), axis=1))
    if name == "mean":
        return _store(x=x), probed(lambda g: F.mean(g.param("x"), axis=0))
    if name == "reshape":
        return _store(x=x), probed(lambda g: F.reshape(g.param("x"), (n, m)))
    if name == "transpose":
        cube = rng.standard_normal((m, n, _dim(rng)))
        return _store(x=cube), probed(lambda g: F.transpose(g.param("x"), (2, 0, 1)))
    if name == "concat":
        return (_store(x=x, y=rng.standard_normal((_dim(rng), n))),
                probed(lambda g: F.concat([g.param("x"), g.param("y")], axis=0)))
    if name == "slice":
        return _store(x=x), probed(lambda g: F.slice_(g.param("x"), (slice(1, m), slice(0, n, 2))))
    if name == "repeat":
        return _store(x=x), probed(lambda g: F.repeat(g.param("x"), 3, axis=0))
    if name == "bias_add":
        cube = rng.standard_normal((m, n, 3))
        return (_store(x=cube, b=rng.standard_normal(3)),
                probed(lambda g: F.bias_add(g.param("x"), g.param("b"))))
    if name == "channel_scale":
        cube = rng.standard_normal((m, n, 3))
        return (_store(x=cube, gain=rng.standard_normal(3)),
                probed(lambda g: F.channel_scale(g.param("x"), g.param("gain"))))
    if name == "standardize":
        cube = rng.standard_normal((m, n, 4))
        return _store(x=cube), probed(lambda g: F.standardize(g.param("x"), 2, 1e-5))
    if name == "im2col":
        video = rng.standard_normal((m, 5, 5, 2))
        return _store(x=video), probed(lambda g: F.im2col(g.param("x"), (1, 3, 3), (1, 2, 2), "same"))
    if name == "resize_bilinear":
        video = rng.standard_normal((2, m, n, 2))
        return _store(x=video), probed(lambda g: F.resize_bilinear(g.param("x"), m + 3, n + 2))
    raise MedvtError(f"no gradient check case for op '{name}'")


# === Micro end-to-end case ===

def micro_case(seed: int, stage: int) -> OpCase:
    """Micro model (d=8, T=2, 32x32) with the stage-1 or stage-2 loss."""
    cfg = micro_config()
    model = MedVT(cfg)
    params = model.initialize(seed)
    clip = generate(SceneSpec(seed=seed, num_frames=cfg.num_frames, height=32, width=32, size=5.0,
                              velocity=(2.0, 1.0), texture="contrast"))
    if stage == 1:
        params = params.with_trainable(lambda n: not n.startswith("labelprop."))
        return params, lambda g: model.loss(model.forward(g, clip.frames, use_labelprop=False), clip.masks, "initial")
    params = params.train_only_prefixes(["labelprop."])
    return params, lambda g: model.loss(model.forward(g, clip.frames, use_labelprop=True), clip.masks, "final")


class CheckService:
    """Runs the verification suites and reports through the UserInterface."""

    def __init__(self, ui: UserInterface):
        self.ui = ui

    # --- gradcheck ---

    def run_gradcheck(self, seed: int = 0, trials: int = 10, include_model: bool = True,
                      model_entries: int = 4, ops_filter: Optional[List[str]] = None) -> CheckSuiteReport:
        report = CheckSuiteReport(kind="gradcheck")
        names = list(ops_filter) if ops_filter else list(DIFFERENTIABLE_OPS)
        with ordered_summation():
            for name in names:
                for trial in range(trials):
                    rng = make_rng(derive_seed(seed, "gradcheck", name, trial))
                    params, f = op_case(name, rng)
                    result = grad_check(f, params, step=FD_STEP, tol=OP_TOLERANCE, seed=trial,
                                        label=f"{name}#{trial}")
                    report.grad_checks.append(result)
                    self._note(report, result)
                self.ui.display_progress(f"gradcheck {name}: {trials} cases")
            if include_model:
                for stage in (1, 2):
                    params, f = micro_case(seed, stage)
                    result = grad_check(f, params, step=FD_STEP, tol=MODEL_TOLERANCE, max_entries=model_entries,
                                        seed=seed, label=f"micro_model.stage{stage}")
                    report.grad_checks.append(result)
                    self._note(report, result)
                    self.ui.display_progress(f"gradcheck micro model stage {stage}: max rel error "
                                             f"{result.max_rel_error:.2e}")
        logger.info(f"Gradient suite finished: {len(report.grad_checks)} checks, passed={report.passed}")
        return report

    @staticmethod
    def _note(report: CheckSuiteReport, result: GradCheckReport) -> None:
        if not result.passed:
            worst = max(result.params, key=lambda p: p.max_rel_error)
            report.failures.append(f"{result.label}: '{worst.name}' rel error {worst.max_rel_error:.2e} "
                                   f"> {result.tolerance:g}" + (" (near relu kink)" if result.near_kink else ""))

    # --- propcheck ---

    def run_propcheck(self, seed: int = 0, mask_instances: int = 100, spectral_instances: int = 50,
                      dense_instances: int = 50, structure_config: Optional[ModelConfig] = None,
                      use_published_dims: bool = False) -> CheckSuiteReport:
        report = CheckSuiteReport(kind="propcheck")
        with ordered_summation():
            self._mask_semantics(report, seed, mask_instances)
            self.ui.display_progress(f"propcheck mask semantics: {mask_instances} instances per rule")
            self._spectral(report, seed, spectral_instances)
            self.ui.display_progress(f"propcheck spectral oracle: {spectral_instances} instances")
            self._dense_equivalence(report, seed, dense_instances)
            self.ui.display_progress(f"propcheck dense-mask equivalence: {dense_instances} instances")
        cfg = structure_config or (published_dims() if use_published_dims else desk_config())
        self._structure(report, seed, cfg)
        self.ui.display_progress(f"propcheck structure contracts at d={cfg.d}, N_h={cfg.num_heads}")
        logger.info(f"Propagation suite finished: passed={report.passed}, {len(report.failures)} failures")
        return report

    @staticmethod
    def _instance(rng: Rng, max_tokens: int, frames=(2, 3, 4)):
        t = int(rng.choice(frames))
        hw = int(rng.integers(1, max(1, max_tokens // t) + 1))
        heads = int(rng.integers(1, 3))
        head_dim = int(rng.integers(2, 4))
        d_feat = int(rng.integers(3, 7))
        return t, hw, heads, head_dim, d_feat

    def _mask_semantics(self, report: CheckSuiteReport, seed: int, instances: int) -> None:
        violations = {"mtom": 0, "mto1": 0}
        for rule_name in violations:
            for i in range(instances):
                rng = make_rng(derive_seed(seed, "mask", rule_name, i))
                t, hw, heads, head_dim, d_feat = self._instance(rng, 16)
                rule = make_rule(rule_name, FrameIndex(t, hw))
                n = t * hw
                features = rng.standard_normal((n, d_feat))
                labels = rng.standard_normal((n, int(rng.integers(2, 4))))
                wq = rng.standard_normal((d_feat, heads * head_dim))
                wk = rng.standard_normal((d_feat, heads * head_dim))
                target = int(rng.integers(1 if rule_name == "mto1" else 0, t))
                perturbed = labels.copy()
                if rule_name == "mtom":
                    perturbed[rule.index.frame_rows(target)] += rng.standard_normal((hw, labels.shape[1]))
                else:
                    perturbed[target * hw:] += rng.standard_normal((n - target * hw, labels.shape[1]))
                before = self._propagate(features, labels, wq, wk, heads, head_dim, rule)
                after = self._propagate(features, perturbed, wq, wk, heads, head_dim, rule)
                rows = rule.index.frame_rows(target)
                if not np.array_equal(before[rows], after[rows]):
                    violations[rule_name] += 1
        for rule_name, count in violations.items():
            report.extra[f"mask_violations.{rule_name}"] = float(count)
            if count:
                report.failures.append(f"{rule_name}: {count} of {instances} instances changed under masked perturbation")

    @staticmethod
    def _propagate(features, labels, wq, wk, heads, head_dim, rule) -> np.ndarray:
        graph = Graph()
        w = MultiheadWeights(graph.constant(wq), graph.constant(wk), None, None, heads, head_dim)
        degenerate = "skip" if rule.name == "mto1" else "raise"
        f = graph.constant(features)
        return masked_mha(f, f, graph.constant(labels), w, rule, degenerate=degenerate).value

    def _spectral(self, report: CheckSuiteReport, seed: int, instances: int) -> None:
        worst = 0.0
        for i in range(instances):
            rng = make_rng(derive_seed(seed, "spectral", i))
            t, hw, heads, head_dim, d_feat = self._instance(rng, 48)
            rule = make_rule("mtom", FrameIndex(t, hw))
            features = rng.standard_normal((t * hw, d_feat))
            wq = rng.standard_normal((d_feat, heads * head_dim))
            wk = rng.standard_normal((d_feat, heads * head_dim))
            scores, weights = attention_maps(features, features, wq, wk, heads, head_dim, rule)
            for h in range(heads):
                result = spectral_oracle(scores[h], rule, weights[h])
                worst = max(worst, result.max_abs_error)
                if not result.passed:
                    report.spectral_checks.append(result)
        report.extra["spectral.max_abs_error"] = worst
        if any(not r.passed for r in report.spectral_checks):
            report.failures.append(f"spectral oracle mismatch, max |D^-1W - A| = {worst:.2e}")

    def _dense_equivalence(self, report: CheckSuiteReport, seed: int, instances: int) -> None:
        mismatches = 0
        for i in range(instances):
            rng = make_rng(derive_seed(seed, "dense", i))
            t, hw, heads, head_dim, d_feat = self._instance(rng, 64)
            rule = make_rule("mtom" if i % 2 == 0 else "none", FrameIndex(t, hw))
            n = t * hw
            q = rng.standard_normal((n, d_feat))
            k = rng.standard_normal((n, d_feat))
            v = rng.standard_normal((n, d_feat))
            wq = rng.standard_normal((d_feat, heads * head_dim))
            wk = rng.standard_normal((d_feat, heads * head_dim))
            with_values = bool(rng.integers(0, 2))
            wv = rng.standard_normal((d_feat, heads * head_dim)) if with_values else None
            wo = rng.standard_normal((heads * head_dim, d_feat)) if with_values else None
            graph = Graph()
            w = MultiheadWeights(graph.constant(wq), graph.constant(wk),
                                 graph.constant(wv) if with_values else None,
                                 graph.constant(wo) if with_values else None, heads, head_dim)
            rule_based = masked_mha(graph.constant(q), graph.constant(k), graph.constant(v), w, rule).value
            dense = dense_masked_mha(q, k, v, wq, wk, wv, wo, heads, head_dim, rule)
            if not np.array_equal(rule_based, dense):
                mismatches += 1
        report.extra["dense.mismatches"] = float(mismatches)
        if mismatches:
            report.failures.append(f"rule-based masked attention differs from the dense -inf mask in "
                                   f"{mismatches} of {instances} instances")

    def _structure(self, report: CheckSuiteReport, seed: int, cfg: ModelConfig) -> None:
        model = MedVT(cfg)
        params = model.initialize(seed).with_trainable(lambda n: False)
        rng = make_rng(derive_seed(seed, "structure"))
        h, w = cfg.image_size
        clip = rng.random((cfg.num_frames, h, w, 3))
        graph = Graph(params)
        pyramid = toy_backbone(graph, graph.constant(clip), cfg)
        encoded = encode(graph, {s: pyramid[s] for s in cfg.encoder.encoded_scales}, cfg)
        for s, tokens in encoded.items():
            t, hs, ws, _ = pyramid[s].shape
            if tokens.shape != (t * hs * ws, cfg.d):
                report.failures.append(f"encoder changed scale {s} to {tokens.shape}, expected {(t * hs * ws, cfg.d)}")

        pixel_in = {s: layers.unflatten_tokens(encoded[s], *pyramid[s].shape[:3]) if s in encoded else f
                    for s, f in pyramid.items()}
        pixel = pixel_decode(graph, pixel_in)
        if any(f.shape[-1] != cfg.d for f in pixel.values()):
            report.failures.append("pixel decoder output channels are not uniformly d")
        queries = learn_queries(graph, pixel, cfg)
        expected_blocks = cfg.decoder.num_iterations * len(cfg.decoder.decoder_scales)
        report.extra["decoder.blocks"] = float(len(queries.trace))
        if len(queries.trace) != expected_blocks:
            report.failures.append(f"decoder applied {len(queries.trace)} blocks, expected {expected_blocks}")
        raw = raw_object_attention(graph, queries, pixel[1], cfg)
        row_error = float(np.max(np.abs(raw.sum(axis=-1) - 1.0)))
        report.extra["object_attention.row_sum_error"] = row_error
        if row_error > ROW_SUM_TOLERANCE:
            report.failures.append(f"object attention rows sum to 1 only within {row_error:.2e}")
        attention = object_attention(graph, queries, pixel[1], cfg)
        if attention.value.min() < 0.0 or attention.value.max() > 1.0:
            report.failures.append("per-pixel object attention leaves [0, 1]")
        features = decoder_output(attention, pixel[1])
        report.extra["decoder_output.channels"] = float(features.shape[-1])
        if features.shape[-1] != cfg.d + cfg.num_heads:
            report.failures.append(f"F^D has {features.shape[-1]} channels, expected d + N_h = {cfg.d + cfg.num_heads}")
        initial = graph.constant(rng.standard_normal(features.shape[:3] + (cfg.num_classes,)))
        if not np.array_equal(combine(initial, initial, "logits").value, initial.value):
            report.failures.append("combining identical decoded and initial logits does not return them")
