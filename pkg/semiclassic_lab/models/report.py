import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from semiclassic_lab.errors import AuditFailure


class Check(BaseModel):
    """One measured quantity against its bound"""
    name: str
    value: float
    bound: Optional[float] = None
    passed: bool = True
    note: str = ""


class Report(BaseModel):
    """Named collection of checks, measured constants and free-form notes"""
    name: str
    passed: bool = True
    checks: List[Check] = Field(default_factory=list)
    constants: Dict[str, float] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    def add(self, name: str, value: float, bound: Optional[float] = None,
            passed: Optional[bool] = None, note: str = "") -> Check:
        """
        Record a check. Without an explicit verdict the check passes when
        value <= bound (or when no bound is given and the value is finite).
        """
        value = float(value)
        if passed is None:
            if bound is None:
                passed = math.isfinite(value)
            else:
                passed = math.isfinite(value) and value <= bound
        check = Check(name=name, value=value, bound=bound, passed=bool(passed), note=note)
        self.checks.append(check)
        self.passed = self.passed and check.passed
        return check

    def note(self, message: str) -> None:
        self.notes.append(message)

    def check(self, name: str) -> Check:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def failures(self) -> List[Check]:
        return [c for c in self.checks if not c.passed]

    def raise_for_failure(self) -> None:
        failed = self.failures()
        if self.passed and not failed:
            return
        worst = failed[0] if failed else None
        for check in failed:
            if check.bound is not None and worst.bound is not None and \
                    check.value - check.bound > worst.value - worst.bound:
                worst = check
        if worst is None:
            raise AuditFailure(f"{self.name} failed")
        raise AuditFailure(
            f"{self.name} failed: {worst.name}={worst.value!r} (bound {worst.bound!r})",
            offender=worst.name,
            value=worst.value,
        )


class ConservationAudit(BaseModel):
    """Time series of the propagated quantities and their worst drifts"""
    times: List[float] = Field(default_factory=list)
    series: Dict[str, List[float]] = Field(default_factory=dict)
    drifts: Dict[str, float] = Field(default_factory=dict)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    constants: Dict[str, float] = Field(default_factory=dict)
    passed: bool = True
    failures: List[str] = Field(default_factory=list)

    def raise_for_failure(self) -> None:
        if self.passed:
            return
        worst = max(self.failures, key=lambda name: self.drifts.get(name, 0.0) / max(self.tolerances.get(name, 1.0), 1e-300))
        raise AuditFailure(
            f"conservation audit failed: {worst} drift {self.drifts.get(worst)!r}",
            offender=worst,
            value=self.drifts.get(worst, float("nan")),
        )


class BoundEntry(BaseModel):
    """Measured left-hand side of an inequality against its assembled right-hand side"""
    name: str
    lhs: float
    rhs: float
    terms: Dict[str, float] = Field(default_factory=dict)
    parameters: Dict[str, float] = Field(default_factory=dict)
    passed: bool = True


class BoundReport(BaseModel):
    constants: Dict[str, float] = Field(default_factory=dict)
    entries: List[BoundEntry] = Field(default_factory=list)
    passed: bool = True

    def add(self, name: str, lhs: float, rhs: float, terms: Optional[Dict[str, float]] = None,
            parameters: Optional[Dict[str, float]] = None, slack: float = 0.0) -> BoundEntry:
        lhs, rhs = float(lhs), float(rhs)
        entry = BoundEntry(
            name=name, lhs=lhs, rhs=rhs, terms=terms or {}, parameters=parameters or {},
            passed=math.isfinite(lhs) and lhs <= rhs + slack,
        )
        self.entries.append(entry)
        self.passed = self.passed and entry.passed
        return entry

    def extend(self, other: "BoundReport") -> None:
        self.constants.update(other.constants)
        for entry in other.entries:
            self.entries.append(entry)
            self.passed = self.passed and entry.passed

    def raise_for_failure(self) -> None:
        failed = [e for e in self.entries if not e.passed]
        if self.passed and not failed:
            return
        worst = max(failed, key=lambda e: e.lhs - e.rhs) if failed else None
        raise AuditFailure(
            f"bound ledger failed: {worst.name if worst else '?'}",
            offender=worst.name if worst else "",
            value=worst.lhs if worst else float("nan"),
        )


class ConvergenceRow(BaseModel):
    epsilon: float
    t: float
    d_P: float
    flags: List[str] = Field(default_factory=list)


class ConvergenceReport(BaseModel):
    rows: List[ConvergenceRow] = Field(default_factory=list)
    sup_by_epsilon: Dict[str, float] = Field(default_factory=dict)
    floor: Optional[float] = None
    trend: Dict[str, float] = Field(default_factory=dict)
    aborted: List[str] = Field(default_factory=list)
    audits: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    dictionary_size: int = 0
    verdict: bool = False
    notes: List[str] = Field(default_factory=list)


class TightnessProfile(BaseModel):
    """Mass outside the phase-space box of radius R, split by marginal"""
    radii: List[float] = Field(default_factory=list)
    x_tail: List[float] = Field(default_factory=list)
    p_tail: List[float] = Field(default_factory=list)
    outside: List[float] = Field(default_factory=list)
    p_bound: List[float] = Field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return all(b <= a + 1e-14 for a, b in zip(self.outside, self.outside[1:]))

    def p_bound_holds(self) -> bool:
        return all(t <= b for t, b in zip(self.p_tail, self.p_bound))


class PlotSeries(BaseModel):
    """x/y data for one curve, written as a plot-data file"""
    x_label: str
    y_label: str
    x: List[float] = Field(default_factory=list)
    y: List[float] = Field(default_factory=list)


class Outcome(BaseModel):
    """What an experiment hands back to the laboratory"""
    kind: str
    verdict: bool = True
    reports: List[Report] = Field(default_factory=list)
    bounds: Optional[BoundReport] = None
    audits: Dict[str, ConservationAudit] = Field(default_factory=dict)
    convergence: Optional[ConvergenceReport] = None
    tightness: Dict[str, TightnessProfile] = Field(default_factory=dict)
    series: Dict[str, PlotSeries] = Field(default_factory=dict)
    constants: Dict[str, float] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    def add_report(self, report: Report) -> Report:
        self.reports.append(report)
        self.verdict = self.verdict and report.passed
        return report

    def add_bounds(self, bounds: BoundReport) -> None:
        if self.bounds is None:
            self.bounds = BoundReport()
        self.bounds.extend(bounds)
        self.verdict = self.verdict and bounds.passed
