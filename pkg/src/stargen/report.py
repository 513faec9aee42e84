"""Check reports: named measurements with tags, statuses, and tolerances."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class CheckRow:
    check: str
    tag: str
    status: str  # "pass" or "fail"
    value: float
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass
class VerificationReport:
    rows: list = field(default_factory=list)

    def add(self, check: str, tag: str, value: float, tolerance: float,
            ok: bool = None, **details) -> CheckRow:
        if ok is None:
            ok = value <= tolerance
        row = CheckRow(check, tag, "pass" if ok else "fail",
                       float(value), float(tolerance), dict(details))
        self.rows.append(row)
        return row

    def extend(self, other: "VerificationReport"):
        self.rows.extend(other.rows)

    def finalize(self) -> "VerificationReport":
        self.rows.sort(key=lambda r: r.check)
        return self

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]

    def row(self, check: str) -> CheckRow:
        for r in self.rows:
            if r.check == check:
                return r
        raise KeyError(check)
