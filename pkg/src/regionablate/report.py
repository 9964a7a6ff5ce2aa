"""Evaluation reports: per-condition correlations and pairwise comparisons."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from .stats import (
    TRAITS,
    CorrelationResult,
    PredictionTable,
    compare_correlations,
    mean_trait_correlation,
    per_trait_correlations,
    significance,
)

CONDITION_LABELS = {
    "face": "face",
    "background": "bg",
    "face_bg": "face+bg",
    "entire_frame": "entire frame",
}

# row order of the published comparison table
COMPARISON_ORDER = (
    ("face", "face_bg"),
    ("face", "entire_frame"),
    ("face", "background"),
    ("background", "face_bg"),
    ("background", "entire_frame"),
    ("face_bg", "entire_frame"),
)

CONFOUNDED = "CONFOUNDED"


def comparison_label(a: str, b: str) -> str:
    return f"{CONDITION_LABELS[a]} vs. {CONDITION_LABELS[b]}"


@dataclass(frozen=True)
class ComparisonRow:
    first: str
    second: str
    rho_first: float
    rho_second: float
    z_obs: float
    p: float
    significant: bool

    @property
    def label(self) -> str:
        return comparison_label(self.first, self.second)


@dataclass
class Report:
    mean_rho: dict[str, CorrelationResult]
    comparisons: list[ComparisonRow]
    alpha: float
    num_models: int
    alpha_corrected: float
    trait_rho: dict[str, dict[str, float]] = field(default_factory=dict)
    sigma: dict[str, float] = field(default_factory=dict)
    split_verdict: str = "not checked"
    shared_uids: tuple[str, ...] = ()
    watermark: str | None = None

    def to_dict(self) -> dict:
        return {
            "watermark": self.watermark,
            "split_verdict": self.split_verdict,
            "shared_uids": list(self.shared_uids),
            "alpha": self.alpha,
            "num_models": self.num_models,
            "alpha_corrected": self.alpha_corrected,
            "mean_trait_rho": {c: {"rho": r.rho, "n": r.n} for c, r in self.mean_rho.items()},
            "trait_rho": self.trait_rho,
            "comparisons": [
                {"comparison": row.label, "first": row.first, "second": row.second,
                 "rho_first": row.rho_first, "rho_second": row.rho_second,
                 "z_obs": row.z_obs, "p": row.p, "significant": row.significant}
                for row in self.comparisons
            ],
            "sigma": self.sigma,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def format_text(self) -> str:
        lines = []
        if self.watermark:
            lines.append(f"*** {self.watermark}: splits share source videos, results are not trustworthy ***")
        lines.append(f"split integrity: {self.split_verdict}")
        lines.append("")
        lines.append(f"{'condition':<14}{'mean-trait rho':>16}{'n':>7}")
        for cond, r in self.mean_rho.items():
            lines.append(f"{CONDITION_LABELS.get(cond, cond):<14}{r.rho:>16.4f}{r.n:>7d}")
        if self.trait_rho:
            lines.append("")
            lines.append(f"{'condition':<14}" + "".join(f"{t:>9}" for t in TRAITS))
            for cond, per in self.trait_rho.items():
                lines.append(f"{CONDITION_LABELS.get(cond, cond):<14}"
                             + "".join(f"{per[t]:>9.3f}" for t in TRAITS))
        lines.append("")
        lines.append(f"alpha = {self.alpha:g} / {self.num_models} = {self.alpha_corrected:.4f}")
        lines.append(f"{'comparison':<30}{'z_obs':>8}{'p':>12}")
        for row in self.comparisons:
            name = row.label + (" *" if row.significant else "")
            lines.append(f"{name:<30}{row.z_obs:>8.2f}{row.p:>12.3g}")
        if self.sigma:
            lines.append("")
            for cond, s in self.sigma.items():
                lines.append(f"sigma[{CONDITION_LABELS.get(cond, cond)}] = {s:.2f}")
        return "\n".join(lines) + "\n"


def compare_conditions(mean_rho: Mapping[str, CorrelationResult], alpha: float = 0.05,
                       num_models: int = 3) -> list[ComparisonRow]:
    """Pairwise comparisons in the fixed table order, skipping absent conditions."""
    rows = []
    for a, b in COMPARISON_ORDER:
        if a in mean_rho and b in mean_rho:
            res = compare_correlations(mean_rho[a], mean_rho[b], alpha, num_models)
            rows.append(ComparisonRow(a, b, mean_rho[a].rho, mean_rho[b].rho,
                                      res.z_obs, res.p, res.significant))
    return rows


def build_report(tables: Mapping[str, PredictionTable] | None = None, *,
                 correlations: Mapping[str, CorrelationResult] | None = None,
                 alpha: float = 0.05, num_models: int = 3,
                 sigma: Mapping[str, float] | None = None,
                 split_verdict: str = "not checked", shared_uids=(),
                 confounded: bool = False) -> Report:
    """Assemble a report from prediction tables or from stored correlations."""
    ordered = [c for c in CONDITION_LABELS]
    mean_rho: dict[str, CorrelationResult] = {}
    trait_rho: dict[str, dict[str, float]] = {}
    if tables:
        for cond in sorted(tables, key=lambda c: (ordered.index(c) if c in ordered else len(ordered), c)):
            mean_rho[cond] = mean_trait_correlation(tables[cond])
            trait_rho[cond] = {t: r.rho for t, r in per_trait_correlations(tables[cond]).items()}
    if correlations:
        mean_rho.update(correlations)
    corrected, _ = significance(0.5, alpha, num_models)
    return Report(
        mean_rho=mean_rho,
        comparisons=compare_conditions(mean_rho, alpha, num_models),
        alpha=alpha,
        num_models=num_models,
        alpha_corrected=corrected,
        trait_rho=trait_rho,
        sigma=dict(sigma or {}),
        split_verdict=split_verdict,
        shared_uids=tuple(shared_uids),
        watermark=CONFOUNDED if confounded else None,
    )
