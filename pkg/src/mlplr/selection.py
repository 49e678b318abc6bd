"""Penalized-likelihood selection of the hidden-layer width.

The criterion subtracts a penalty p_n(k) from the per-width supremum of
the log-likelihood; any schedule that is increasing in k, with diverging
gaps and p_n(k)/n -> 0, selects the true width consistently. The default
is the BIC-like rule p_n(k) = dim_k / 2 * log n with dim_k = k(d+2)+1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import FitConfig, profile_lr_curve
from .model import ConstraintBox, Dataset

SCHEDULE_KINDS = ("bic_like", "zero", "table")


@dataclass
class PenaltySchedule:
    """Penalty rule p_n(k).

    bic_like needs the input dimension to size dim_k; table carries
    explicit values keyed by (n, k) and is only defined on that grid.
    The zero schedule exists to demonstrate why a penalty is necessary.
    """

    kind: str = "bic_like"
    input_dim: int | None = None
    table: dict | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if self.kind == "bic_like" and self.input_dim is None:
            raise ValueError("bic_like schedule needs input_dim")
        if self.kind == "table" and not self.table:
            raise ValueError("table schedule needs a non-empty table")

    def to_dict(self) -> dict:
        if self.kind == "table":
            raise ValueError("table schedules are in-process only, not serializable")
        d = {"kind": self.kind}
        if self.input_dim is not None:
            d["input_dim"] = self.input_dim
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltySchedule":
        return cls(kind=str(d["kind"]), input_dim=d.get("input_dim"))


def penalty_value(schedule: PenaltySchedule, n: int, k: int) -> float:
    if n < 2 or k < 1:
        raise ValueError(f"need n >= 2 and k >= 1, got n={n}, k={k}")
    if schedule.kind == "bic_like":
        dim_k = k * (schedule.input_dim + 2) + 1
        return 0.5 * dim_k * float(np.log(n))
    if schedule.kind == "zero":
        return 0.0
    try:
        return float(schedule.table[(n, k)])
    except KeyError:
        raise KeyError(f"table schedule has no entry for (n={n}, k={k})") from None


def validate_schedule(
    schedule: PenaltySchedule,
    k_max: int,
    n_grid: tuple[int, ...] = (100, 10_000, 1_000_000),
) -> tuple[bool, list[str]]:
    """Check the consistency conditions on the sampled n grid.

    The divergence of the gaps and the vanishing of p_n(k)/n are
    asymptotic statements; for a black-box schedule they can only be
    probed on a finite grid, which is what this does.
    """
    problems: list[str] = []
    for n in n_grid:
        vals = [penalty_value(schedule, n, k) for k in range(1, k_max + 1)]
        for k in range(1, k_max):
            if not vals[k] > vals[k - 1]:
                problems.append(f"p_n not strictly increasing in k at n={n}, k={k} -> {k + 1}")
    for k2 in range(1, k_max + 1):
        for k1 in range(k2 + 1, k_max + 1):
            gaps = [
                penalty_value(schedule, n, k1) - penalty_value(schedule, n, k2) for n in n_grid
            ]
            if any(b <= a for a, b in zip(gaps, gaps[1:])):
                problems.append(f"gap p_n({k1}) - p_n({k2}) does not grow along the n grid")
    for k in range(1, k_max + 1):
        ratios = [penalty_value(schedule, n, k) / n for n in n_grid]
        if any(b >= a for a, b in zip(ratios, ratios[1:])):
            problems.append(f"p_n({k})/n does not shrink along the n grid")
    return (not problems, problems)


@dataclass
class SelectionReport:
    """Per-width criterion values and the selected width."""

    per_k: list[tuple[int, float, float, float]]  # (k, sup_loglik, penalty, T_n)
    k_hat: int
    n: int
    fit_converged: list[bool] | None = None

    def to_dict(self) -> dict:
        return {
            "per_k": [list(row) for row in self.per_k],
            "k_hat": self.k_hat,
            "n": self.n,
            "fit_converged": self.fit_converged,
        }


def select_architecture(
    data: Dataset,
    k_max: int,
    box: ConstraintBox,
    fit_config: FitConfig,
    schedule: PenaltySchedule,
) -> SelectionReport:
    """Maximize T_n(k) = sup loglik - p_n(k) over k = 1 .. k_max.

    Ties resolve to the smallest k (parsimony; exact ties occur on
    noiseless data where the suprema coincide).
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    profile = profile_lr_curve(data, k_max, box, fit_config)
    per_k = []
    converged = []
    best_k, best_t = None, -np.inf
    for entry in profile:
        pen = penalty_value(schedule, data.n, entry.k)
        t_n = entry.sup_loglik - pen
        per_k.append((entry.k, entry.sup_loglik, pen, t_n))
        converged.append(entry.fit.converged)
        if t_n > best_t:
            best_k, best_t = entry.k, t_n
    return SelectionReport(per_k, best_k, data.n, converged)
