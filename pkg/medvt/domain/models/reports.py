"""Domain models for verification and evaluation results.

Reports are plain dataclasses with a to_dict() that the CLI prints with
--json, so every field is a JSON-friendly value.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional


# === Gradient checks ===

@dataclass
class ParamGradCheck:
    """Finite-difference comparison for one parameter tensor."""
    name: str
    entries_checked: int
    max_abs_error: float
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    """Outcome of one gradient check (an op or the micro model)."""
    label: str
    step: float
    tolerance: float
    params: List[ParamGradCheck] = field(default_factory=list)
    near_kink: bool = False  # a relu input sat within 10 * step of zero

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["passed"] = self.passed
        data["max_rel_error"] = self.max_rel_error
        return data


@dataclass
class SpectralReport:
    """Random-walk operator D^-1 W versus the masked attention it should equal."""
    rule: str
    max_abs_error: float
    max_laplacian_row_sum: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance and self.max_laplacian_row_sum <= self.tolerance

    def to_dict(self) -> dict:
        data = asdict(self)
        data["passed"] = self.passed
        return data


@dataclass
class CheckSuiteReport:
    """Aggregate of a gradcheck or propcheck run."""
    kind: str
    grad_checks: List[GradCheckReport] = field(default_factory=list)
    spectral_checks: List[SpectralReport] = field(default_factory=list)
    extra: Dict[str, float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (not self.failures
                and all(r.passed for r in self.grad_checks)
                and all(r.passed for r in self.spectral_checks))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "grad_checks": [r.to_dict() for r in self.grad_checks],
            "spectral_checks": [r.to_dict() for r in self.spectral_checks],
            "extra": dict(self.extra),
            "failures": list(self.failures),
        }


# === Evaluation ===

@dataclass
class JStatistics:
    mean: float
    recall: float
    decay: float


@dataclass
class FStatistics:
    mean: float
    recall: float
    decay: float


@dataclass
class MocaResult:
    """Success rates of the largest-component box at IoU thresholds 0.5 ... 0.9."""
    success_rates: Dict[str, float]
    sr_mean: float


@dataclass
class EvalReport:
    """Per-dataset evaluation. categories maps category -> mean J."""
    clips: int
    j: JStatistics
    f: FStatistics
    categories: Dict[str, float] = field(default_factory=dict)
    category_mean: Optional[float] = None
    moca: Optional[MocaResult] = None
    per_clip: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        data = {
            "clips": self.clips,
            "J_mean": self.j.mean, "J_recall": self.j.recall, "J_decay": self.j.decay,
            "F_mean": self.f.mean, "F_recall": self.f.recall, "F_decay": self.f.decay,
            "categories": dict(self.categories),
            "category_mean": self.category_mean,
            "per_clip": dict(self.per_clip),
        }
        if self.moca is not None:
            data.update({f"SR@{tau}": rate for tau, rate in self.moca.success_rates.items()})
            data["SR_mean"] = self.moca.sr_mean
        return data


# === Ablation ===

@dataclass
class AblationRow:
    label: str
    encoder: bool
    decoder: bool
    label_propagation: bool
    rule: str
    j_mean_per_seed: List[float]

    @property
    def j_mean(self) -> float:
        return sum(self.j_mean_per_seed) / max(1, len(self.j_mean_per_seed))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["j_mean"] = self.j_mean
        return data


@dataclass
class AblationReport:
    seeds: List[int]
    rows: List[AblationRow] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "passed": self.passed,
            "rows": [r.to_dict() for r in self.rows],
            "failures": list(self.failures),
        }
