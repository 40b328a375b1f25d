"""
Evaluation report: metric table plus the run metadata needed to reproduce it.
"""

from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict
from rich.console import Console
from rich.table import Table


class EvalReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    metrics: Dict[str, float]
    ks: List[int]
    n_eval_users: int
    target_behavior: int
    n_neg: int
    seed: int
    fingerprint: str = ""
    cold_start: bool = False
    empty: bool = False
    task: str = "target"

    def hr(self, k: int) -> float:
        return self.metrics[f"HR@{k}"]

    def ndcg(self, k: int) -> float:
        return self.metrics[f"NDCG@{k}"]

    def validation_score(self) -> float:
        """Sum of NDCG over the report's cut-offs"""
        return sum(self.ndcg(k) for k in self.ks)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "task": self.task, "K": k, "HR": self.hr(k), "NDCG": self.ndcg(k),
                "n_eval_users": self.n_eval_users, "target_behavior": self.target_behavior,
                "n_neg": self.n_neg, "seed": self.seed, "cold_start": self.cold_start,
                "fingerprint": self.fingerprint,
            }
            for k in self.ks
        ]
        return pd.DataFrame(rows)

    def save(self, directory: str, stem: str = "eval_report") -> Dict[str, str]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        self.to_frame().to_csv(csv_path, index=False, float_format="%.6f")
        json_path.write_text(self.model_dump_json(indent=2))
        return {"csv": str(csv_path), "json": str(json_path)}

    @classmethod
    def load(cls, path: str) -> "EvalReport":
        return cls.model_validate_json(Path(path).read_text())


def render_report(report: EvalReport, console: Optional[Console] = None) -> Table:
    title = f"{report.task} | behavior {report.target_behavior} | {report.n_eval_users} users"
    if report.cold_start:
        title += " | cold-start"
    table = Table(title=title)
    table.add_column("K", justify="right")
    table.add_column("HR@K", justify="right")
    table.add_column("NDCG@K", justify="right")
    for k in report.ks:
        table.add_row(str(k), f"{report.hr(k):.4f}", f"{report.ndcg(k):.4f}")
    if console is not None:
        console.print(table)
        if report.empty:
            console.print("[yellow]No eval users in this subset[/yellow]")
    return table
