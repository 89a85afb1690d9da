"""Evaluation metrics for multi-label code prediction.

Jaccard overlap, the fraction of predicted code pairs that are complication
pairs, micro/macro precision-recall-F1, and rank AUC (normalized
Mann-Whitney U with half credit for ties). Also owns the line-delimited
prediction file format and the flat metric report table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import ComplicationTable
from .errors import DataError

REPORT_KEYS = ("jaccard", "complication",
               "precision_micro", "precision_macro",
               "recall_micro", "recall_macro",
               "f1_micro", "f1_macro",
               "auc_micro", "auc_macro")


@dataclass(frozen=True)
class PredictionRecord:
    doc_id: int
    predicted: frozenset[int]
    gold: frozenset[int]
    scores: dict[int, float]


class Prf(NamedTuple):
    precision: float
    recall: float
    f1: float


def jaccard(records: Sequence[PredictionRecord]) -> float:
    """Mean |pred & gold| / |pred | gold|; both-empty counts as 1."""
    if len(records) == 0:
        raise ValueError("no records to score")
    total = 0.0
    for rec in records:
        union = rec.predicted | rec.gold
        total += 1.0 if not union else len(rec.predicted & rec.gold) / len(union)
    return total / len(records)


def complication_ratio(records: Sequence[PredictionRecord],
                       table: ComplicationTable) -> float | None:
    """Mean over records with >= 2 predictions of the fraction of predicted
    pairs that are complication pairs; None when no record qualifies."""
    if len(records) == 0:
        raise ValueError("no records to score")
    ratios = []
    for rec in records:
        pred = sorted(rec.predicted)
        n = len(pred)
        if n < 2:
            continue
        hits = sum(table.is_pair(pred[i], pred[j])
                   for i in range(n) for j in range(i + 1, n))
        ratios.append(hits / (n * (n - 1) / 2))
    if not ratios:
        return None
    return float(np.mean(ratios))


def micro_macro_prf(records: Sequence[PredictionRecord],
                    labels: Sequence[int]) -> dict[str, Prf]:
    """Micro pools TP/FP/FN over every (doc, label) decision; macro averages
    per-label metrics over the label universe, with 0/0 defined as 0."""
    tp = {c: 0 for c in labels}
    fp = {c: 0 for c in labels}
    fn = {c: 0 for c in labels}
    for rec in records:
        for c in labels:
            if c in rec.predicted and c in rec.gold:
                tp[c] += 1
            elif c in rec.predicted:
                fp[c] += 1
            elif c in rec.gold:
                fn[c] += 1

    def prf(t: int, p: int, n: int) -> Prf:
        prec = t / (t + p) if t + p else 0.0
        rec = t / (t + n) if t + n else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return Prf(prec, rec, f1)

    micro = prf(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    per_label = [prf(tp[c], fp[c], fn[c]) for c in labels]
    macro = Prf(*(float(np.mean([m[i] for m in per_label])) for i in range(3)))
    return {"micro": micro, "macro": macro}


def _binary_auc(scores: np.ndarray, relevant: np.ndarray) -> float | None:
    """Normalized Mann-Whitney U via average ranks; ties get half credit."""
    n_pos = int(relevant.sum())
    n_neg = relevant.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[relevant].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc(records: Sequence[PredictionRecord],
        labels: Sequence[int]) -> dict[str, float | None]:
    """Micro AUC over all pooled (doc, label) score/relevance pairs; macro
    AUC averaged over labels having at least one positive and one negative.
    Codes without a score count as score 0."""
    if len(records) == 0:
        raise ValueError("no records to score")
    per_label_scores = {c: np.array([rec.scores.get(c, 0.0) for rec in records]) for c in labels}
    per_label_rel = {c: np.array([c in rec.gold for rec in records]) for c in labels}
    micro = _binary_auc(np.concatenate([per_label_scores[c] for c in labels]),
                        np.concatenate([per_label_rel[c] for c in labels]))
    per_label = [_binary_auc(per_label_scores[c], per_label_rel[c]) for c in labels]
    scorable = [a for a in per_label if a is not None]
    macro = float(np.mean(scorable)) if scorable else None
    return {"micro": micro, "macro": macro}


def metric_table(records: Sequence[PredictionRecord], table: ComplicationTable,
                 labels: Sequence[int]) -> dict[str, float | None]:
    """All report metrics keyed by REPORT_KEYS order."""
    prf = micro_macro_prf(records, labels)
    area = auc(records, labels)
    return {
        "jaccard": jaccard(records),
        "complication": complication_ratio(records, table),
        "precision_micro": prf["micro"].precision,
        "precision_macro": prf["macro"].precision,
        "recall_micro": prf["micro"].recall,
        "recall_macro": prf["macro"].recall,
        "f1_micro": prf["micro"].f1,
        "f1_macro": prf["macro"].f1,
        "auc_micro": area["micro"],
        "auc_macro": area["macro"],
    }


def format_metric_table(values: dict[str, float | None]) -> str:
    lines = []
    for key in REPORT_KEYS:
        val = values.get(key)
        lines.append(f"{key} {'nan' if val is None else format(val, '.6f')}")
    return "\n".join(lines) + "\n"


def write_predictions(path: str, records: Sequence[PredictionRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "doc": rec.doc_id,
                "pred": sorted(rec.predicted),
                "gold": sorted(rec.gold),
                "scores": {str(c): rec.scores[c] for c in sorted(rec.scores)},
            }) + "\n")


def read_predictions(path: str) -> list[PredictionRecord]:
    records = []
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                records.append(PredictionRecord(
                    int(rec["doc"]),
                    frozenset(int(c) for c in rec["pred"]),
                    frozenset(int(c) for c in rec["gold"]),
                    {int(c): float(s) for c, s in rec.get("scores", {}).items()},
                ))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"bad prediction file {path}: {exc}") from exc
    if not records:
        raise DataError(f"prediction file {path} is empty")
    return records
