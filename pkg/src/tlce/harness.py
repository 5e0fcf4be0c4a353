"""Incremental-session protocol, metrics and report writers.

Networks are frozen on entry. Session 1 fills the memory from the full base
training data; each later session appends its N prototypes. After every
session the union test split of all seen classes is scored.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import ProtocolSpec, SessionDataset
from .ensemble import EnsembleConfig, combine, decide
from .errors import ConfigError, ContractError, ProtocolError
from .memory import RHD, TKN, ExplicitMemory, score_embeddings, update_memory
from .model import NetworkParams, embed


@dataclass
class Prediction:
    session: int
    sample_id: str
    true_class: int
    predicted_class: int
    top_score: float


@dataclass
class SessionReport:
    session_id: int
    num_classes: int
    num_test: int
    weighted_acc: float
    base_acc: float
    novel_acc: float | None
    per_class_acc: dict[int, float]


@dataclass
class RunSummary:
    lam: float
    reports: list[SessionReport]
    predictions: list[Prediction] = field(default_factory=list)
    label: str = ""

    @property
    def weighted(self) -> list[float]:
        return [r.weighted_acc for r in self.reports]

    @property
    def average_acc(self) -> float:
        return float(np.mean(self.weighted))

    @property
    def final_session_acc(self) -> float:
        return self.reports[-1].weighted_acc


@dataclass
class ScoredSession:
    """Everything needed to evaluate one session for any lambda."""

    session_id: int
    class_ids: list[int]
    sample_ids: list[str]
    labels: np.ndarray
    s_rhd: np.ndarray
    s_tkn: np.ndarray


@dataclass
class ScoredRun:
    sessions: list[ScoredSession]
    base_classes: set[int]
    memory: ExplicitMemory
    # per session: (rhd digest, tkn digest) after the update
    digests: list[tuple[str, str]]
    # per session: sha256 of each stored entry's bytes
    entry_hashes: list[dict[int, str]]


def validate_sessions(datasets: Sequence[SessionDataset], spec: ProtocolSpec) -> None:
    if len(datasets) != spec.num_sessions:
        raise ProtocolError(f"expected {spec.num_sessions} sessions, got {len(datasets)}")
    seen: set[int] = set()
    for t, ds in enumerate(datasets, start=1):
        want = spec.num_base_classes if t == 1 else spec.way
        if len(ds.class_ids) != want:
            raise ProtocolError(f"session {t} has {len(ds.class_ids)} classes, expected {want}")
        if t > 1 and ds.num_train != spec.way * spec.shot:
            raise ProtocolError(
                f"session {t} has {ds.num_train} training samples, expected {spec.way}x{spec.shot}"
            )
        overlap = seen.intersection(ds.class_ids)
        if overlap:
            raise ProtocolError(f"session {t} repeats class {min(overlap)}")
        seen.update(ds.class_ids)


def score_sessions(
    datasets: Sequence[SessionDataset],
    rhd: NetworkParams,
    tkn: NetworkParams,
    spec: ProtocolSpec,
) -> ScoredRun:
    validate_sessions(datasets, spec)
    rhd = rhd.copy().freeze()
    tkn = tkn.copy().freeze()
    frozen = (rhd.digest(), tkn.digest())
    em = ExplicitMemory()
    test_x: list[np.ndarray] = []
    test_y: list[np.ndarray] = []
    sample_ids: list[str] = []
    sessions, digests, entry_hashes = [], [], []
    for ds in datasets:
        update_memory(em, ds, rhd, tkn)
        after = (rhd.digest(), tkn.digest())
        if after != frozen:
            raise ContractError(f"network parameters changed during session {ds.session_id}")
        digests.append(after)
        entry_hashes.append({c: hashlib.sha256(em.entry_bytes(c)).hexdigest() for c in em.class_ids})

        x, y = ds.test_arrays()
        test_x.append(x)
        test_y.append(y)
        for c in ds.class_ids:
            sample_ids.extend(f"{c}:{i}" for i in range(len(ds.test[c])))
        xs = np.concatenate(test_x)
        sessions.append(
            ScoredSession(
                ds.session_id,
                em.class_ids,
                list(sample_ids),
                np.concatenate(test_y),
                score_embeddings(em, RHD, embed(rhd, xs)),
                score_embeddings(em, TKN, embed(tkn, xs)),
            )
        )
    return ScoredRun(sessions, set(datasets[0].class_ids), em, digests, entry_hashes)


def _accuracy(correct: np.ndarray) -> float:
    return float(correct.sum()) / len(correct)


def evaluate(scored: ScoredRun, lam: float, label: str = "") -> RunSummary:
    cfg = EnsembleConfig(lam)
    reports, predictions = [], []
    for s in scored.sessions:
        combined = combine(s.s_rhd, s.s_tkn, cfg)
        pred = decide(combined, s.class_ids)
        top = combined.max(axis=1)
        correct = pred == s.labels
        is_base = np.isin(s.labels, list(scored.base_classes))
        per_class = {c: _accuracy(correct[s.labels == c]) for c in s.class_ids}
        reports.append(
            SessionReport(
                session_id=s.session_id,
                num_classes=len(s.class_ids),
                num_test=len(s.labels),
                weighted_acc=_accuracy(correct),
                base_acc=_accuracy(correct[is_base]),
                novel_acc=_accuracy(correct[~is_base]) if (~is_base).any() else None,
                per_class_acc=per_class,
            )
        )
        predictions.extend(
            Prediction(s.session_id, sid, int(t), int(p), float(sc))
            for sid, t, p, sc in zip(s.sample_ids, s.labels, pred, top)
        )
    return RunSummary(lam, reports, predictions, label)


def run_protocol(
    datasets: Sequence[SessionDataset],
    rhd: NetworkParams,
    tkn: NetworkParams,
    cfg: EnsembleConfig,
    spec: ProtocolSpec,
) -> RunSummary:
    return evaluate(score_sessions(datasets, rhd, tkn, spec), cfg.lam, label="TLCE")


def _check_lambdas(lambdas: Iterable[float]) -> list[float]:
    lambdas = [float(v) for v in lambdas]
    bad = [v for v in lambdas if not 0.0 <= v <= 1.0]
    if bad:
        raise ConfigError(f"lambda values must lie in [0, 1], got {bad}")
    return lambdas


def lambda_sweep(
    datasets: Sequence[SessionDataset],
    rhd: NetworkParams,
    tkn: NetworkParams,
    spec: ProtocolSpec,
    lambdas: Iterable[float],
) -> list[RunSummary]:
    """One evaluation per lambda over prototypes computed once."""
    lambdas = _check_lambdas(lambdas)
    scored = score_sessions(datasets, rhd, tkn, spec)
    return [evaluate(scored, lam, label=f"lambda={lam:g}") for lam in lambdas]


@dataclass
class AblationRow:
    label: str
    cross_entropy: bool
    cosine: bool
    rhd: bool
    summary: RunSummary


def ablation_run(
    datasets: Sequence[SessionDataset],
    spec: ProtocolSpec,
    rhd: NetworkParams,
    tkn_cosine: NetworkParams,
    tkn_ce: NetworkParams,
    lam: float = 0.8,
) -> list[AblationRow]:
    """Single classifiers and both ensembles, session by session."""
    _check_lambdas([lam])
    with_ce = score_sessions(datasets, rhd, tkn_ce, spec)
    with_cos = score_sessions(datasets, rhd, tkn_cosine, spec)
    return [
        AblationRow("TKN (CE)", True, False, False, evaluate(with_ce, 0.0, "TKN (CE)")),
        AblationRow("TKN (CE+cosine)", True, True, False, evaluate(with_cos, 0.0, "TKN (CE+cosine)")),
        AblationRow("RHD", False, False, True, evaluate(with_cos, 1.0, "RHD")),
        AblationRow("RHD + TKN (CE)", True, False, True, evaluate(with_ce, lam, "RHD + TKN (CE)")),
        AblationRow(
            "RHD + TKN (CE+cosine)", True, True, True, evaluate(with_cos, lam, "RHD + TKN (CE+cosine)")
        ),
    ]


def base_novel_split_report(summary: RunSummary) -> list[tuple[int, float, float | None, float]]:
    """(session, base_acc, novel_acc, weighted_acc) per session."""
    return [(r.session_id, r.base_acc, r.novel_acc, r.weighted_acc) for r in summary.reports]


def final_improvement(summary: RunSummary, baseline: RunSummary) -> float:
    return summary.final_session_acc - baseline.final_session_acc


# -- report writers -----------------------------------------------------------

METRIC_FIELDS = ["session", "num_classes", "num_test", "weighted_acc", "base_acc", "novel_acc"]


def metrics_csv(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in summary.reports:
        novel = "" if r.novel_acc is None else repr(r.novel_acc)
        w.writerow([r.session_id, r.num_classes, r.num_test, repr(r.weighted_acc), repr(r.base_acc), novel])
    return buf.getvalue()


def predictions_csv(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["session", "sample_id", "true_class", "predicted_class", "top_score"])
    for p in summary.predictions:
        w.writerow([p.session, p.sample_id, p.true_class, p.predicted_class, repr(p.top_score)])
    return buf.getvalue()


def sweep_csv(summaries: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "final_weighted_acc", "average_acc"])
    for s in summaries:
        w.writerow([repr(s.lam), repr(s.final_session_acc), repr(s.average_acc)])
    return buf.getvalue()


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(rows[0].summary.reports)
    w.writerow(["config", "cross_entropy", "cosine", "rhd", *(f"session_{t}" for t in range(1, n + 1))])
    for row in rows:
        flags = [int(row.cross_entropy), int(row.cosine), int(row.rhd)]
        w.writerow([row.label, *flags, *(repr(a) for a in row.summary.weighted)])
    return buf.getvalue()


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:.2f}"


def format_table(summaries: Sequence[RunSummary], baseline: RunSummary | None = None) -> str:
    """Aligned text table: one row per run, one column per session, then averages."""
    n = max(len(s.reports) for s in summaries)
    header = ["Method", *(str(t) for t in range(1, n + 1)), "Average Acc."]
    if baseline is not None:
        header.append("Final Improv.")
    rows = [header]
    for s in summaries:
        row = [s.label or f"lambda={s.lam:g}", *(_pct(a) for a in s.weighted), _pct(s.average_acc)]
        if baseline is not None:
            row.append(f"{100 * final_improvement(s, baseline):+.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(header))]
    lines = []
    for k, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(widths[i]) for i, c in enumerate(r[1:], start=1)]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def format_split_table(summary: RunSummary) -> str:
    lines = [f"{'Session':>7}  {'Base':>7}  {'Novel':>7}  {'Weighted':>8}"]
    for t, base, novel, weighted in base_novel_split_report(summary):
        lines.append(f"{t:>7}  {_pct(base):>7}  {_pct(novel):>7}  {_pct(weighted):>8}")
    return "\n".join(lines) + "\n"
