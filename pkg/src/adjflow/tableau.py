"""Butcher tableaus for diagonally implicit Runge-Kutta schemes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

TableauKind = Literal["dirk1", "dirk2", "dirk3"]

# Alexander's L-stable 3-stage, 3rd order scheme.
DIRK3_ALPHA = 0.435866521508459

STRUCTURE_TOL = 1e-14
ORDER_TOL = 1e-13


@dataclass(frozen=True)
class ButcherTableau:
    """Lower-triangular (A, b, c) coefficients of an s-stage DIRK scheme."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).ravel()
        c = np.array(self.c, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if b.size != A.shape[0] or c.size != A.shape[0]:
            raise ValueError("A, b and c must agree on the number of stages")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def stages(self) -> int:
        return self.b.size

    @property
    def s(self) -> int:
        return self.b.size


@dataclass
class ValidationReport:
    """Pass/fail record of tableau checks. ``failures`` lists human-readable reasons."""

    checks: dict[str, bool] = field(default_factory=dict)
    residuals: dict[str, float] = field(default_factory=dict)
    order: int = 0

    @property
    def failures(self) -> list[str]:
        return [name for name, ok in self.checks.items() if not ok]

    @property
    def structural_ok(self) -> bool:
        return all(self.checks[k] for k in ("lower_triangular", "row_sum", "weights_sum"))

    def __bool__(self) -> bool:
        return not self.failures


def make_tableau(kind: TableauKind) -> ButcherTableau:
    """Return one of the shipped DIRK tableaus.

    ``dirk1`` is backward Euler, ``dirk2`` the 2-stage L-stable scheme with
    ``alpha = 1 - sqrt(2)/2`` and ``dirk3`` Alexander's 3-stage scheme.
    """
    if kind == "dirk1":
        return ButcherTableau(A=[[1.0]], b=[1.0], c=[1.0], name="dirk1")
    if kind == "dirk2":
        a = 1.0 - np.sqrt(2.0) / 2.0
        return ButcherTableau(
            A=[[a, 0.0], [1.0 - a, a]], b=[1.0 - a, a], c=[a, 1.0], name="dirk2"
        )
    if kind == "dirk3":
        a = DIRK3_ALPHA
        gamma = -(6.0 * a**2 - 16.0 * a + 1.0) / 4.0
        omega = (6.0 * a**2 - 20.0 * a + 5.0) / 4.0
        c2 = (1.0 + a) / 2.0
        A = [[a, 0.0, 0.0], [c2 - a, a, 0.0], [gamma, omega, a]]
        return ButcherTableau(A=A, b=[gamma, omega, a], c=[a, c2, 1.0], name="dirk3")
    raise ValueError(f"unknown tableau kind {kind!r}")


def validate(tab: ButcherTableau) -> ValidationReport:
    """Check structural invariants and classical order conditions up to order 3.

    Never raises; inspect ``report.failures``.
    """
    A, b, c = tab.A, tab.b, tab.c
    rep = ValidationReport()

    upper = np.triu(A, k=1)
    rep.residuals["lower_triangular"] = float(np.max(np.abs(upper), initial=0.0))
    rep.checks["lower_triangular"] = rep.residuals["lower_triangular"] == 0.0

    rep.residuals["row_sum"] = float(np.max(np.abs(A.sum(axis=1) - c)))
    rep.checks["row_sum"] = rep.residuals["row_sum"] <= STRUCTURE_TOL

    rep.residuals["weights_sum"] = abs(float(b.sum()) - 1.0)
    rep.checks["weights_sum"] = rep.residuals["weights_sum"] <= STRUCTURE_TOL

    conditions = {
        "order2_bc": (2, float(b @ c) - 0.5),
        "order3_bc2": (3, float(b @ c**2) - 1.0 / 3.0),
        "order3_bAc": (3, float(b @ A @ c) - 1.0 / 6.0),
    }
    order = 1 if rep.checks["weights_sum"] else 0
    passed = {2: True, 3: True}
    for name, (p, res) in conditions.items():
        rep.residuals[name] = abs(res)
        ok = abs(res) <= ORDER_TOL
        rep.checks[name] = ok
        passed[p] = passed[p] and ok
    if order >= 1 and passed[2]:
        order = 2
        if passed[3]:
            order = 3
    rep.order = order
    return rep


def validate_structure(tab: ButcherTableau) -> ValidationReport:
    """Like :func:`validate` but drops the order-condition entries."""
    rep = validate(tab)
    for name in [k for k in rep.checks if k.startswith("order")]:
        del rep.checks[name]
    return rep
