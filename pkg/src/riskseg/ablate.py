"""Ablation runner: base / +gated-fusion / +refinement / full.

Each variant shares the base config and differs only in its feature
flags and the seed. The table reports Pr@0.5, Pr@0.7, Pr@0.9, oIoU, and
mIoU per seed plus means, and the directional checks compare variant
means against the base model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .errors import TrainingDiverged
from .metrics import EvalReport
from .train import evaluate_model, load_split, train

logger = logging.getLogger(__name__)

# (row label, flag overrides) in fixed presentation order
VARIANTS: tuple[tuple[str, dict[str, bool]], ...] = (
    ("base", dict(use_unc_loss=False, use_gated_fusion=False, use_refinement=False)),
    ("+gated-fusion", dict(use_unc_loss=True, use_gated_fusion=True, use_refinement=False)),
    ("+refinement", dict(use_unc_loss=True, use_gated_fusion=False, use_refinement=True)),
    ("full", dict(use_unc_loss=True, use_gated_fusion=True, use_refinement=True)),
)

TABLE_COLUMNS = ("Pr@0.5", "Pr@0.7", "Pr@0.9", "oIoU", "mIoU")

# Mean-mIoU slack for "full at least matches the best single addition":
# half a point on the [0, 1] metric scale.
FULL_VS_BEST_SLACK = 0.005


@dataclass
class AblationTable:
    seeds: list[int]
    # variant -> seed -> metric -> value; a failed run stores None
    cells: dict[str, dict[int, dict[str, float] | None]] = field(default_factory=dict)

    def mean(self, variant: str, metric: str) -> float | None:
        rows = [v for v in self.cells[variant].values() if v is not None]
        if not rows:
            return None
        return sum(r[metric] for r in rows) / len(rows)

    def to_json(self) -> str:
        payload = {
            "seeds": self.seeds,
            "variants": self.cells,
            "means": {
                variant: {m: self.mean(variant, m) for m in TABLE_COLUMNS}
                for variant in self.cells
            },
        }
        return json.dumps(payload, indent=1)

    def to_text(self) -> str:
        lines = []
        header = f"{'variant':<16}{'seed':>6}" + "".join(f"{c:>10}" for c in TABLE_COLUMNS)
        lines.append(header)
        lines.append("-" * len(header))
        for variant, _ in VARIANTS:
            if variant not in self.cells:
                continue
            for seed in self.seeds:
                row = self.cells[variant].get(seed)
                if row is None:
                    lines.append(f"{variant:<16}{seed:>6}" + f"{'FAILED':>10}" * len(TABLE_COLUMNS))
                else:
                    lines.append(
                        f"{variant:<16}{seed:>6}"
                        + "".join(f"{row[c]:>10.4f}" for c in TABLE_COLUMNS)
                    )
            means = {c: self.mean(variant, c) for c in TABLE_COLUMNS}
            if all(v is not None for v in means.values()):
                lines.append(
                    f"{variant:<16}{'mean':>6}"
                    + "".join(f"{means[c]:>10.4f}" for c in TABLE_COLUMNS)
                )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DirectionCheck:
    name: str
    passed: bool
    lhs: float
    rhs: float
    gating: bool  # counts toward the 3-of-4 mean-mIoU gate

    def describe(self) -> str:
        mark = "ok " if self.passed else "FLAG"
        return f"[{mark}] {self.name}: {self.lhs:.4f} vs {self.rhs:.4f}"


def direction_checks(table: AblationTable) -> list[DirectionCheck]:
    """The four gating mean-mIoU comparisons plus two reported Pr trends."""
    miou = {variant: table.mean(variant, "mIoU") for variant, _ in VARIANTS}
    if any(v is None for v in miou.values()):
        raise TrainingDiverged("cannot evaluate directions: a variant has no results")
    checks = [
        DirectionCheck("full >= base (mIoU)", miou["full"] >= miou["base"], miou["full"], miou["base"], True),
        DirectionCheck(
            "+gated-fusion >= base (mIoU)",
            miou["+gated-fusion"] >= miou["base"],
            miou["+gated-fusion"],
            miou["base"],
            True,
        ),
        DirectionCheck(
            "+refinement >= base (mIoU)",
            miou["+refinement"] >= miou["base"],
            miou["+refinement"],
            miou["base"],
            True,
        ),
        DirectionCheck(
            "full >= best-single - 0.5pp (mIoU)",
            miou["full"] >= max(miou["+gated-fusion"], miou["+refinement"]) - FULL_VS_BEST_SLACK,
            miou["full"],
            max(miou["+gated-fusion"], miou["+refinement"]) - FULL_VS_BEST_SLACK,
            True,
        ),
    ]
    pr9_refine = table.mean("+refinement", "Pr@0.9")
    pr9_base = table.mean("base", "Pr@0.9")
    pr5_fusion = table.mean("+gated-fusion", "Pr@0.5")
    pr5_base = table.mean("base", "Pr@0.5")
    checks.append(
        DirectionCheck("+refinement > base (Pr@0.9)", pr9_refine > pr9_base, pr9_refine, pr9_base, False)
    )
    checks.append(
        DirectionCheck("+gated-fusion > base (Pr@0.5)", pr5_fusion > pr5_base, pr5_fusion, pr5_base, False)
    )
    return checks


def gate_passed(checks: list[DirectionCheck]) -> bool:
    gating = [c for c in checks if c.gating]
    return sum(c.passed for c in gating) >= 3


def run_ablation(
    base_cfg: RunConfig,
    seeds: list[int],
    data_dir: str | Path,
    out_dir: str | Path,
) -> AblationTable:
    """Train and evaluate all four variants for every seed.

    A variant whose training diverges is marked FAILED in the table and
    skipped; remaining rows still complete.
    """
    if len(seeds) < 3:
        raise ValueError("ablation needs at least 3 seeds")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    table = AblationTable(seeds=list(seeds))
    test_cache: dict[int, object] = {}
    for variant, flags in VARIANTS:
        table.cells[variant] = {}
        for seed in seeds:
            cfg = base_cfg.replace(seed=seed, **flags)
            run_dir = out_dir / f"{variant.replace('+', 'plus-')}_seed{seed}"
            try:
                result = train(cfg, data_dir, run_dir)
            except TrainingDiverged as exc:
                logger.warning("variant %s seed %d failed: %s", variant, seed, exc)
                table.cells[variant][seed] = None
                continue
            if "test" not in test_cache:
                test_cache["test"] = load_split(data_dir, "test", cfg)
            from .train import load_model_from_checkpoint

            model, _ = load_model_from_checkpoint(result.checkpoint_path)
            report: EvalReport = evaluate_model(model, test_cache["test"])
            summary = report.summary()
            table.cells[variant][seed] = {c: summary[c] for c in TABLE_COLUMNS}
            logger.info(
                "ablation %s seed %d: mIoU %.4f", variant, seed, summary["mIoU"]
            )

    (out_dir / "ablation.json").write_text(table.to_json(), encoding="utf-8")
    text = table.to_text()
    try:
        checks = direction_checks(table)
        text += "\ndirection checks (gate: >=3 of the 4 mean-mIoU checks)\n"
        for check in checks:
            text += check.describe() + "\n"
        text += f"gate {'PASSED' if gate_passed(checks) else 'FAILED'}\n"
    except TrainingDiverged as exc:
        text += f"\ndirection checks unavailable: {exc}\n"
    (out_dir / "ablation.txt").write_text(text, encoding="utf-8")
    return table
