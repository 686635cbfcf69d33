"""Scoring, metrics and benchmark campaigns."""

from __future__ import annotations

import enum
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import quote

from .agents import AGENT_ORDER, AgentKind
from .backend import Backend, CostSummary, ModelReply, usage_summary
from .baselines import Method, run_cot, run_direct
from .engine import SCHEMA_VERSION, DebateConfig, DebateRunner, RoleModel, validate_config
from .ingest import ProcessedSample
from .labels import Assessment
from .truncation import TokenBudget

logger = logging.getLogger(__name__)

METRIC_NAMES = ("tpr", "tnr", "fpr", "fnr", "precision", "recall", "accuracy", "f1")
RESULTS_DIRNAME = "results"


class EvaluationError(ValueError):
    pass


class Cell(str, enum.Enum):
    TP = "TP"
    FN = "FN"
    FP = "FP"
    TN = "TN"


def score(prediction: Assessment, gold: Assessment) -> Cell:
    """Confusion cell for one prediction; UNCERTAIN always counts as a miss."""
    if gold is Assessment.PHISHING:
        return Cell.TP if prediction is Assessment.PHISHING else Cell.FN
    if gold is Assessment.LEGITIMATE:
        return Cell.TN if prediction is Assessment.LEGITIMATE else Cell.FP
    raise EvaluationError(f"gold label must be PHISHING or LEGITIMATE, got {gold!r}")


@dataclass
class ConfusionMatrix:
    tp: int | Fraction = 0
    fn: int | Fraction = 0
    fp: int | Fraction = 0
    tn: int | Fraction = 0

    def add(self, cell: Cell) -> None:
        name = cell.value.lower()
        setattr(self, name, getattr(self, name) + 1)

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    def to_dict(self) -> dict:
        return {k: _number(getattr(self, k)) for k in ("tp", "fn", "fp", "tn")}

    @classmethod
    def mean(cls, matrices: Sequence["ConfusionMatrix"]) -> "ConfusionMatrix":
        n = len(matrices)
        return cls(*(sum(Fraction(getattr(m, k)) for m in matrices) / n for k in ("tp", "fn", "fp", "tn")))


def _number(value):
    if isinstance(value, Fraction):
        return value.numerator if value.denominator == 1 else float(value)
    return value


def round4(value) -> float | None:
    """Round half-even to 4 decimals; None passes through."""
    if value is None:
        return None
    q = Decimal(value.numerator) / Decimal(value.denominator) if isinstance(value, Fraction) else Decimal(repr(value))
    return float(q.quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


def _ratio(num, den) -> Fraction | None:
    return Fraction(num) / Fraction(den) if den else None


@dataclass
class MetricsReport:
    tpr: Fraction | None
    tnr: Fraction | None
    fpr: Fraction | None
    fnr: Fraction | None
    precision: Fraction | None
    recall: Fraction | None
    accuracy: Fraction | None
    f1: Fraction | None
    avg_time: float
    n_uncertain: int = 0

    def rounded(self) -> dict:
        out = {name: round4(getattr(self, name)) for name in METRIC_NAMES}
        out["avg_time"] = round4(self.avg_time)
        out["n_uncertain"] = self.n_uncertain
        return out


def compute_metrics(m: ConfusionMatrix, total_time: float = 0.0, n_uncertain: int = 0) -> MetricsReport:
    """Rates from a confusion matrix. Undefined ratios (zero denominator) are None."""
    n = m.total
    if n <= 0:
        raise EvaluationError("cannot compute metrics from an empty confusion matrix")
    precision = _ratio(m.tp, m.tp + m.fp)
    recall = _ratio(m.tp, m.tp + m.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(
        tpr=recall,
        tnr=_ratio(m.tn, m.tn + m.fp),
        fpr=_ratio(m.fp, m.fp + m.tn),
        fnr=_ratio(m.fn, m.fn + m.tp),
        precision=precision,
        recall=recall,
        accuracy=_ratio(m.tp + m.tn, n),
        f1=f1,
        avg_time=float(total_time) / float(n),
        n_uncertain=n_uncertain,
    )


def mean_metrics(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Per-metric mean over reports, skipping undefined values."""

    def mean(values):
        values = [v for v in values if v is not None]
        return sum(values, Fraction(0)) / len(values) if values else None

    return MetricsReport(
        **{name: mean(getattr(r, name) for r in reports) for name in METRIC_NAMES},
        avg_time=sum(r.avg_time for r in reports) / len(reports),
        n_uncertain=sum(r.n_uncertain for r in reports),
    )


# -- detection methods -------------------------------------------------------


class DebateMethod:
    name = "debate"

    def __init__(self, config: DebateConfig):
        validate_config(config)
        self.config = config

    def describe(self) -> dict:
        return dict(self.config.summary(), budget=self.config.budget.to_dict())

    def run(self, sample: ProcessedSample, backend: Backend) -> dict:
        return DebateRunner(self.config, backend).run(sample).to_dict()


class _BaselineMethod:
    name: str

    def __init__(self, budget: TokenBudget | None = None, model: RoleModel | None = None):
        self.budget = budget or TokenBudget()
        self.model = model or RoleModel()

    def describe(self) -> dict:
        return {"budget": self.budget.to_dict()}


class DirectMethod(_BaselineMethod):
    name = Method.DIRECT.value

    def run(self, sample: ProcessedSample, backend: Backend) -> dict:
        return run_direct(sample, backend, self.budget, self.model).to_dict()


class CotMethod(_BaselineMethod):
    name = Method.COT.value

    def run(self, sample: ProcessedSample, backend: Backend) -> dict:
        return run_cot(sample, backend, self.budget, self.model).to_dict()


# -- benchmark ---------------------------------------------------------------


@dataclass
class BenchmarkResult:
    method: str
    records: list[dict]
    matrix: ConfusionMatrix
    metrics: MetricsReport | None
    errors: list[dict] = field(default_factory=list)
    description: dict = field(default_factory=dict)

    @property
    def n_scored(self) -> int:
        return len(self.records) - len(self.errors)

    def report(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "settings": self.description,
            "n_samples": len(self.records),
            "n_scored": self.n_scored,
            "n_errors": len(self.errors),
            "confusion_matrix": self.matrix.to_dict(),
            "metrics": self.metrics.rounded() if self.metrics else None,
        }


def result_filename(sample_id: str) -> str:
    return quote(sample_id, safe="") + ".json"


def _write_json(path: Path, data) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def aggregate_records(records: Iterable[dict], method: str = "", description: dict | None = None) -> BenchmarkResult:
    """Fold per-sample records (in the given order) into a scored result.

    Works from persisted records alone, so a transcript stream reproduces its
    report.
    """
    records = list(records)
    matrix = ConfusionMatrix()
    errors = []
    total_time = 0.0
    uncertain = 0
    for record in records:
        if record.get("error") or record.get("prediction") is None:
            errors.append({"id": record["sample_id"], "error": record.get("error") or "no prediction"})
            continue
        if record.get("gold") is None:
            errors.append({"id": record["sample_id"], "error": "sample has no gold label"})
            continue
        prediction = Assessment.parse(record["prediction"])
        uncertain += prediction is Assessment.UNCERTAIN
        matrix.add(score(prediction, Assessment.parse(record["gold"])))
        total_time += record.get("wall_time") or 0.0
    metrics = compute_metrics(matrix, total_time, uncertain) if matrix.total else None
    return BenchmarkResult(method, records, matrix, metrics, errors, description or {})


def run_benchmark(
    samples: Sequence[ProcessedSample],
    method,
    backend: Backend,
    out_dir: str | Path | None = None,
    resume: bool = False,
    workers: int = 1,
) -> BenchmarkResult:
    """Run ``method`` on every sample and score the outcomes.

    With ``out_dir`` each finished sample is persisted under ``results/``;
    ``resume=True`` reuses those files instead of re-querying.
    """
    ordered = sorted(samples, key=lambda s: s.id)
    ids = [s.id for s in ordered]
    if len(set(ids)) != len(ids):
        raise EvaluationError("sample ids must be unique")
    results_dir = Path(out_dir) / RESULTS_DIRNAME if out_dir is not None else None
    if results_dir is not None:
        results_dir.mkdir(parents=True, exist_ok=True)

    done: dict[str, dict] = {}
    if resume and results_dir is not None:
        for sample in ordered:
            path = results_dir / result_filename(sample.id)
            if path.is_file():
                record = json.loads(path.read_text(encoding="utf-8"))
                if record.get("method") == method.name and not record.get("error"):
                    done[sample.id] = record
        if done:
            logger.info("resuming: %d of %d samples already complete", len(done), len(ordered))

    pending = [s for s in ordered if s.id not in done]

    def task(sample: ProcessedSample) -> dict:
        try:
            record = method.run(sample, backend)
        except Exception as exc:  # quarantined; the campaign goes on
            logger.exception("sample %s failed", sample.id)
            record = {
                "schema_version": SCHEMA_VERSION,
                "method": method.name,
                "sample_id": sample.id,
                "gold": sample.label.value if sample.label else None,
                "prediction": None,
                "wall_time": 0.0,
                "error": f"{type(exc).__name__}: {exc}",
            }
        if results_dir is not None and not record.get("error"):
            _write_json(results_dir / result_filename(sample.id), record)
        return record

    if workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(task, pending))
    else:
        fresh = [task(s) for s in pending]
    done.update((r["sample_id"], r) for r in fresh)
    return aggregate_records((done[i] for i in ids), method.name, method.describe())


# -- reports -----------------------------------------------------------------

TABLE_COLUMNS = ("TPR", "TNR", "FPR", "FNR", "Recall", "Precision", "Accuracy", "F1 Score", "Time (s)")


def _fmt(value, digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header, *rows]]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def render_report_table(results: Sequence[BenchmarkResult]) -> str:
    """Plain-text table in the metric column order of the model comparison."""
    rows = []
    for res in results:
        r = res.metrics.rounded() if res.metrics else {}
        rows.append(
            [res.method]
            + [_fmt(r.get(k)) for k in ("tpr", "tnr", "fpr", "fnr", "recall", "precision", "accuracy", "f1")]
            + [_fmt(r.get("avg_time"), 2)]
        )
    return _table(["Method", *TABLE_COLUMNS], rows)


def write_benchmark_outputs(result: BenchmarkResult, out_dir: str | Path, skipped: Sequence[dict] = (),
                            extra: Mapping | None = None) -> None:
    """Write report.json, report.txt, transcripts.jsonl and errors.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = result.report()
    report["n_skipped"] = len(skipped)
    report.update(extra or {})
    _write_json(out / "report.json", report)
    (out / "report.txt").write_text(render_report_table([result]), encoding="utf-8")
    with open(out / "transcripts.jsonl", "w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    _write_json(out / "errors.json", {"errors": result.errors, "skipped": list(skipped)})


def read_transcripts(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- scenario analysis --------------------------------------------------------


@dataclass(frozen=True)
class ExclusionSetting:
    name: str
    excluded: frozenset[AgentKind] = frozenset()

    def active_agents(self) -> tuple[AgentKind, ...]:
        return tuple(a for a in AGENT_ORDER if a not in self.excluded)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "ExclusionSetting":
        kinds = frozenset(AgentKind.from_name(n) for n in names if n.strip())
        label = "W/O " + " + ".join(k.short_name.upper() if k.short_name in ("url", "html") else k.short_name.capitalize()
                                    for k in AGENT_ORDER if k in kinds)
        return cls(label if kinds else "All Agents", kinds)


def default_settings() -> list[ExclusionSetting]:
    return [
        ExclusionSetting("All Agents"),
        ExclusionSetting("W/O URL Agent", frozenset({AgentKind.URL_ANALYST})),
        ExclusionSetting("W/O HTML Agent", frozenset({AgentKind.HTML_STRUCTURE})),
        ExclusionSetting("W/O Content Agent", frozenset({AgentKind.CONTENT_SEMANTIC})),
        ExclusionSetting("W/O Brand Agent", frozenset({AgentKind.BRAND_IMPERSONATION})),
    ]


@dataclass
class ScenarioRow:
    setting: ExclusionSetting
    matrix: ConfusionMatrix  # mean counts across datasets
    metrics: MetricsReport  # mean of per-dataset metric values
    pooled_metrics: MetricsReport  # recomputed from the mean counts
    per_dataset: list[tuple[str, ConfusionMatrix, MetricsReport]] = field(default_factory=list)

    def rounded_counts(self) -> ConfusionMatrix:
        """Mean counts rounded half-even, as printed in the table."""
        return ConfusionMatrix(*(round(Fraction(getattr(self.matrix, k))) for k in ("tp", "fn", "fp", "tn")))

    def to_dict(self) -> dict:
        return {
            "setting": self.setting.name,
            "excluded": [a.value for a in AGENT_ORDER if a in self.setting.excluded],
            "avg_counts": self.matrix.to_dict(),
            "metrics_mean_of_datasets": self.metrics.rounded(),
            "metrics_from_avg_counts": self.pooled_metrics.rounded(),
            "metrics_from_rounded_counts": compute_metrics(self.rounded_counts(), 0.0).rounded(),
            "per_dataset": [
                {"dataset": name, "counts": m.to_dict(), "metrics": r.rounded()} for name, m, r in self.per_dataset
            ],
        }


def scenario_config(base: DebateConfig, setting: ExclusionSetting) -> DebateConfig:
    return replace(base, active_agents=setting.active_agents())


def summarize_scenario(setting: ExclusionSetting, per_dataset: Sequence[tuple[str, ConfusionMatrix, MetricsReport]]) -> ScenarioRow:
    matrices = [m for _, m, _ in per_dataset]
    averaged = ConfusionMatrix.mean(matrices)
    return ScenarioRow(
        setting=setting,
        matrix=averaged,
        metrics=mean_metrics([r for _, _, r in per_dataset]),
        pooled_metrics=compute_metrics(averaged, 0.0),
        per_dataset=list(per_dataset),
    )


def scenario_analysis(
    datasets: Sequence[tuple[str, Sequence[ProcessedSample]]],
    exclusion_settings: Sequence[ExclusionSetting],
    base_config: DebateConfig,
    backend: Backend,
    out_dir: str | Path | None = None,
    resume: bool = False,
    workers: int = 1,
) -> list[ScenarioRow]:
    if not datasets:
        raise EvaluationError("scenario analysis needs at least one dataset")
    configs = []
    for setting in exclusion_settings:
        config = scenario_config(base_config, setting)
        validate_config(config)  # every setting is checked before any query
        configs.append(config)
    rows = []
    for index, (setting, config) in enumerate(zip(exclusion_settings, configs)):
        per_dataset = []
        for name, samples in datasets:
            run_dir = Path(out_dir) / f"setting{index}" / quote(name, safe="") if out_dir is not None else None
            result = run_benchmark(samples, DebateMethod(config), backend, run_dir, resume, workers)
            if result.metrics is None:
                raise EvaluationError(f"no scored samples for {setting.name} on {name}")
            per_dataset.append((name, result.matrix, result.metrics))
        rows.append(summarize_scenario(setting, per_dataset))
    return rows


def render_scenario_table(rows: Sequence[ScenarioRow], pooled: bool = False) -> str:
    header = ["Setting", "Avg. TP", "Avg. FN", "Avg. FP", "Avg. TN",
              "Avg. Recall", "Avg. Precision", "Avg. Accuracy", "Avg. F1 Score"]
    body = []
    for row in rows:
        metrics = (row.pooled_metrics if pooled else row.metrics).rounded()
        # round() on a Fraction is half-even.
        counts = [str(v) for v in row.rounded_counts().to_dict().values()]
        body.append([row.setting.name, *counts, *(_fmt(metrics[k]) for k in ("recall", "precision", "accuracy", "f1"))])
    return _table(header, body)


def scenario_report(rows: Sequence[ScenarioRow]) -> dict:
    return {"schema_version": SCHEMA_VERSION, "rows": [r.to_dict() for r in rows]}


def records_cost(records: Iterable[dict], price_table: Mapping[str, tuple[float, float]]) -> CostSummary:
    """Inference cost of a transcript stream from its recorded token counts."""
    replies = []
    for record in records:
        usages = [e for e in record.get("exchanges", []) if e.get("reply") is not None]
        if record.get("usage") and "model" in record["usage"]:
            usages.append(record["usage"])
        for u in usages:
            replies.append(ModelReply(text="", prompt_tokens=u.get("prompt_tokens"),
                                      completion_tokens=u.get("completion_tokens"),
                                      model_name=u.get("model") or "default"))
    return usage_summary(replies, price_table)


def load_price_table(data: Mapping[str, Sequence[float]] | None) -> dict[str, tuple[float, float]]:
    return {k: (float(v[0]), float(v[1])) for k, v in (data or {}).items()}
