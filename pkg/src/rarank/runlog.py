"""Run log: line-delimited records with a fingerprinted config header.

The header carries a hash of the resolved run configuration; evaluation
recomputes it and refuses logs whose header does not verify, so metrics are
never computed against a silently edited or mixed-up run.
"""
from __future__ import annotations

import hashlib
import json
from typing import Iterable

from .errors import InvariantViolation
from .metrics import LabeledPrediction
from .rank import Prediction
from .retrieve import CandidateList


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def header_line(config: dict) -> str:
    return canonical_json(
        {"kind": "header", "version": 1, "fingerprint": config_fingerprint(config), "config": config}
    )


def prediction_line(
    query_id: int,
    prediction: Prediction,
    label: str | None = None,
    image_ref: str | None = None,
    elapsed_ms: float | None = None,
) -> str:
    cands: CandidateList = prediction.candidates
    record = {
        "kind": "prediction",
        "query_id": query_id,
        "label": label,
        "image_ref": image_ref,
        "mode": cands.mode.value,
        "candidates": [[name, sim] for name, sim in cands.candidates],
        "insufficient": cands.insufficient,
        "raw": None if prediction.verdict is None else prediction.verdict.raw,
        "valid": None if prediction.verdict is None else prediction.verdict.valid,
        "prediction": prediction.category,
        "source": prediction.source.value,
        "ordering": list(prediction.ordering()),
        "error": prediction.error,
    }
    if elapsed_ms is not None:
        record["elapsed_ms"] = elapsed_ms
    return canonical_json(record)


def query_error_line(query_id: int, error: str) -> str:
    return canonical_json({"kind": "query_error", "query_id": query_id, "error": error})


def read_log(path) -> tuple[dict, list[dict], list[dict]]:
    """Parse and verify a run log; returns (header, predictions, query errors)."""
    header = None
    records: list[dict] = []
    errors: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvariantViolation(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if obj.get("kind") == "header":
                if header is not None:
                    raise InvariantViolation(f"{path}:{lineno}: duplicate header")
                header = obj
            elif obj.get("kind") == "prediction":
                records.append(obj)
            elif obj.get("kind") == "query_error":
                errors.append(obj)
            else:
                raise InvariantViolation(f"{path}:{lineno}: unknown record kind {obj.get('kind')!r}")
    if header is None:
        raise InvariantViolation(f"{path}: missing header line")
    expected = config_fingerprint(header.get("config", {}))
    if header.get("fingerprint") != expected:
        raise InvariantViolation(f"{path}: config fingerprint mismatch; refusing the log")
    return header, records, errors


def labeled_predictions(records: Iterable[dict]) -> list[LabeledPrediction]:
    """Convert log records into metric inputs; every record needs a label."""
    out: list[LabeledPrediction] = []
    for rec in sorted(records, key=lambda r: r["query_id"]):
        if rec.get("label") is None:
            raise InvariantViolation(
                f"query {rec['query_id']} has no ground-truth label; cannot evaluate"
            )
        sims = {name: sim for name, sim in rec["candidates"]}
        predicted = rec["prediction"]
        out.append(
            LabeledPrediction(
                query_id=int(rec["query_id"]),
                ground_truth=rec["label"],
                predicted_ordering=tuple(rec["ordering"]),
                confidence=float(sims.get(predicted, 0.0)),
            )
        )
    return out
