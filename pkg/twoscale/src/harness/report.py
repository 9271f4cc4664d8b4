"""Convergence reports: one row per (eps, functional) with stable leading columns."""
from dataclasses import dataclass, field
from typing import Any, Dict, List

import pandas as pd

REPORT_COLUMNS = ['eps', 'value', 'limit', 'gap', 'quad_stability', 'pass']
EXTRA_COLUMNS = ['functional', 'iterations', 'residual', 'status', 'message']


def empty_rows() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=object) for c in REPORT_COLUMNS + EXTRA_COLUMNS})


@dataclass
class ConvergenceReport:
    study: str
    rows: pd.DataFrame = field(default_factory=empty_rows)
    metadata: Dict[str, Any] = field(default_factory=dict)
    flags: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.flags) and all(self.flags.values())

    @classmethod
    def from_records(cls, study: str, records: List[dict], metadata=None, flags=None) -> "ConvergenceReport":
        rows = pd.DataFrame(records) if records else empty_rows()
        extras = [c for c in rows.columns if c not in REPORT_COLUMNS + EXTRA_COLUMNS]
        rows = rows.reindex(columns=REPORT_COLUMNS + EXTRA_COLUMNS + extras)
        return cls(study=study, rows=rows, metadata=dict(metadata or {}), flags=dict(flags or {}))

    def functional(self, name: str) -> pd.DataFrame:
        return self.rows[self.rows['functional'] == name]

    def functionals(self) -> List[str]:
        return list(dict.fromkeys(self.rows['functional'].tolist()))

    def to_frame(self) -> pd.DataFrame:
        return self.rows.copy()

    def to_dict(self) -> dict:
        return {
            'study': self.study,
            'passed': self.passed,
            'flags': {k: bool(v) for k, v in self.flags.items()},
            'metadata': self.metadata,
            'rows': [{k: _plain(v) for k, v in rec.items()} for rec in self.rows.to_dict(orient='records')],
        }


def _plain(value):
    """numpy scalars to Python scalars so json keeps shortest round-trip floats."""
    if hasattr(value, 'item'):
        return value.item()
    return value
