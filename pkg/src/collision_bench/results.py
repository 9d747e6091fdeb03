from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

CSV_HEADER = ("protocol", "n", "C", "seed", "makespan", "collisions",
              "collision_cost", "successes", "incomplete")


def fmt_num(x) -> str:
    """Plain decimal text; integral floats are written without a fraction."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass
class TrialResult:
    protocol: str
    n: int
    C: float
    seed: int
    makespan: int
    collisions: int
    collision_cost: float
    successes: int
    incomplete: bool
    phase_breakdown: dict = field(default_factory=dict)
    decision_trace: list | None = None
    contention_summary: tuple[float, float] | None = None
    extras: dict[str, Any] = field(default_factory=dict)
    trace: Any = None

    def __post_init__(self):
        if self.collision_cost != self.collisions * self.C:
            raise ValueError("collision cost must equal collisions * C")
        if not self.incomplete and self.successes != self.n:
            raise ValueError(f"complete trial with {self.successes} of {self.n} successes")

    def csv_row(self) -> str:
        vals = (self.protocol, self.n, self.C, self.seed, self.makespan, self.collisions,
                self.collision_cost, self.successes, self.incomplete)
        return ",".join(v if isinstance(v, str) else fmt_num(v) for v in vals)
