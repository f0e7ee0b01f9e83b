"""Accuracy for multiple-choice and exact-match QA predictions."""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

from .errors import ContractError, EmptyEvalSet

_CHOICE = re.compile(r"(?<![A-Za-z])([A-E])(?![A-Za-z])")
KINDS = ("choice", "exact")


@dataclass(frozen=True)
class EvalRecord:
    id: str
    prediction: str
    gold: str
    kind: str

    def __post_init__(self):
        if not self.gold:
            raise ContractError(f"record {self.id}: gold answer is empty")
        if self.kind not in KINDS:
            raise ContractError(f"record {self.id}: unknown kind {self.kind!r}")


def extract_choice(text: str) -> str | None:
    """First standalone capital letter A-E, e.g. ``"The answer is (B)."`` -> ``"B"``."""
    m = _CHOICE.search(text)
    return m.group(1) if m else None


def is_correct(rec: EvalRecord) -> bool:
    if rec.kind == "choice":
        gold = extract_choice(rec.gold)
        if gold is None:
            raise ContractError(f"record {rec.id}: gold {rec.gold!r} names no choice A-E")
        return extract_choice(rec.prediction) == gold
    return rec.prediction.strip().lower() == rec.gold.strip().lower()


def evaluate(records) -> dict:
    records = list(records)
    if not records:
        raise EmptyEvalSet("no records to evaluate")
    correct = sum(is_correct(r) for r in records)
    return {"accuracy": correct / len(records), "n": len(records)}


def _read_jsonl(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "id" not in obj or "text" not in obj:
                raise ContractError(f"{path}:{lineno}: expected keys 'id' and 'text'")
            out[str(obj["id"])] = str(obj["text"])
    return out


def load_records(pred_path, gold_path, kind: str) -> list[EvalRecord]:
    """Join predictions to gold by id; a missing prediction counts as wrong."""
    preds = _read_jsonl(pred_path)
    gold = _read_jsonl(gold_path)
    return [EvalRecord(i, preds.get(i, ""), g, kind) for i, g in gold.items()]


def format_metrics(metrics: dict) -> str:
    return f"accuracy {metrics['accuracy']:.3f}\nn {metrics['n']}\n"
