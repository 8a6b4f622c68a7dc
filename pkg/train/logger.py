"""JSON-lines metrics log for training and evaluation."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from eval.metrics import EvalReport
from objectives.losses import LossReport


class MetricsLogger:
    """One JSON object per line.

    A fresh logger truncates an existing file; `resume=True` keeps it and appends.
    """

    def __init__(self, path: str | Path, run_meta: dict[str, Any] | None = None, resume: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not resume:
            self.path.write_text("")
        if run_meta is not None:
            self._write({"kind": "meta", **run_meta})

    def _write(self, record: dict[str, Any]) -> None:
        with open(self.path, "a") as f:
            f.write(json.dumps(record, default=str) + "\n")

    def log_train(self, report: LossReport, lr: float) -> None:
        d = report.to_dict()
        self._write({"kind": "train", "step": d["step"], "lr": lr, "terms": d["terms"],
                     "weighted": d["weighted"], "total": d["total"], "flags": d["flags"]})

    def log_eval(self, step: int, report: EvalReport) -> None:
        self._write({"kind": "eval", "step": step, "report": report.model_dump(exclude={"per_sample"})})

    @staticmethod
    def load(path: str | Path, kind: str | None = None) -> list[dict[str, Any]]:
        records = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if kind is None or rec.get("kind") == kind:
                    records.append(rec)
        return records
