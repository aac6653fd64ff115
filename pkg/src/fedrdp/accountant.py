"""Per-client Renyi-DP accounting over fixed-size subsampled Gaussian steps.

A participation ledger records, per client, the rounds in which the client
ran a noisy step and the exact (q, sigma, clip, batch size) used.  Privacy
composes per client: the client's RDP curve is the sum over its recorded
steps of the one-step divergence bound, evaluated on a grid of orders, and
converts to (epsilon, delta) by the standard minimisation over the grid.

The ledger serialises to line-delimited text
``client_id<TAB>t<TAB>q<TAB>sigma<TAB>clip<TAB>batch_size`` sorted by
(client_id, t); q and sigma are written with repr so they round-trip
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator

from .divergence import MechanismParams, renyi_step_bound

__all__ = [
    "DEFAULT_ALPHAS",
    "DEFAULT_DELTA",
    "StepParams",
    "PrivacyBudget",
    "RdpCurve",
    "ParticipationLedger",
    "CalibrationError",
    "record_participation",
    "compose_client_rdp",
    "rdp_to_dp",
    "calibrate_sigma",
]

# Order grid: dense between 1 and 2 where small-epsilon optima live, then
# roughly geometric up to 1025 for very low noise / few steps.
DEFAULT_ALPHAS: tuple[float, ...] = (
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 12.0, 16.0,
    24.0, 32.0, 48.0, 64.0, 128.0, 256.0, 512.0, 1025.0,
)

DEFAULT_DELTA = 1e-5

# Moment orders above this are treated as unavailable while calibrating;
# the resulting curve entries are +inf, which the epsilon minimisation
# skips.  Only targets below ~log(1/delta)/255 could ever notice.
CALIBRATION_MAX_MOMENT_ORDER = 300


class CalibrationError(RuntimeError):
    """Noise calibration exhausted its bracket without meeting the target."""

    def __init__(self, message: str, epsilon_at_bracket: float):
        super().__init__(message)
        self.epsilon_at_bracket = epsilon_at_bracket


@dataclass(frozen=True)
class StepParams:
    """Parameters of one recorded noisy step.

    sigma = 0 and q = 1 are admitted so that non-private simulator runs can
    still be ledgered; composition rejects them (no finite bound exists).
    """

    q: float
    sigma: float
    clip: float
    batch_size: int

    def __post_init__(self):
        if not (isinstance(self.q, (int, float)) and 0 < self.q <= 1):
            raise ValueError(f"q must lie in (0, 1], got {self.q!r}")
        if not (isinstance(self.sigma, (int, float)) and self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be a finite real >= 0, got {self.sigma!r}")
        if not (isinstance(self.clip, (int, float)) and self.clip > 0):
            raise ValueError(f"clip must be > 0, got {self.clip!r}")
        if not (isinstance(self.batch_size, int) and self.batch_size >= 1):
            raise ValueError(f"batch_size must be an integer >= 1, got {self.batch_size!r}")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon >= 0):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon!r}")
        if not (isinstance(self.delta, (int, float)) and 0 < self.delta < 1):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")


@dataclass(frozen=True)
class RdpCurve:
    """RDP values on a strictly increasing grid of orders > 1.

    Values are nonnegative; +inf marks orders at which no finite bound was
    computable.
    """

    alphas: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.alphas) != len(self.values):
            raise ValueError("alphas and values must have equal length")
        if not self.alphas:
            raise ValueError("curve must have at least one order")
        prev = 1.0
        for a in self.alphas:
            if not a > prev:
                raise ValueError(f"orders must be strictly increasing and > 1, got {self.alphas}")
            prev = a
        for v in self.values:
            if math.isnan(v) or v < 0:
                raise ValueError(f"curve values must be >= 0, got {v!r}")

    @classmethod
    def zero(cls, alphas: Iterable[float] = DEFAULT_ALPHAS) -> "RdpCurve":
        alphas = tuple(float(a) for a in alphas)
        return cls(alphas, (0.0,) * len(alphas))

    def items(self) -> Iterator[tuple[float, float]]:
        return zip(self.alphas, self.values)

    def value_at(self, alpha: float) -> float:
        for a, v in self.items():
            if a == alpha:
                return v
        raise KeyError(f"order {alpha} not on the curve grid")

    def __add__(self, other: "RdpCurve") -> "RdpCurve":
        if self.alphas != other.alphas:
            raise ValueError("cannot add curves on different order grids")
        return RdpCurve(self.alphas, tuple(x + y for x, y in zip(self.values, other.values)))


class ParticipationLedger:
    """Append-only record of which client stepped when, with what parameters.

    Timesteps must arrive strictly increasing within each client (real
    training emits them in order); violations are rejected naming the client
    and the offending pair.
    """

    def __init__(self):
        self._records: dict[int, list[tuple[int, StepParams]]] = {}

    def record(self, client_id: int, t: int, params: StepParams) -> "ParticipationLedger":
        if not isinstance(client_id, int):
            raise ValueError(f"client_id must be an integer, got {client_id!r}")
        if not isinstance(t, int):
            raise ValueError(f"t must be an integer, got {t!r}")
        if not isinstance(params, StepParams):
            raise TypeError("params must be a StepParams")
        steps = self._records.setdefault(client_id, [])
        if steps and t <= steps[-1][0]:
            raise ValueError(
                f"out-of-order participation for client {client_id}: "
                f"t={t} after t={steps[-1][0]}"
            )
        steps.append((t, params))
        return self

    def clients(self) -> tuple[int, ...]:
        return tuple(sorted(self._records))

    def steps(self, client_id: int) -> tuple[tuple[int, StepParams], ...]:
        return tuple(self._records.get(client_id, ()))

    def participation_count(self, client_id: int, t: int | None = None) -> int:
        """Number of participations of the client up to and including round t."""
        steps = self._records.get(client_id, ())
        if t is None:
            return len(steps)
        return sum(1 for tt, _ in steps if tt <= t)

    def participation_round(self, client_id: int, n: int) -> int:
        """Round of the client's n-th participation (1-based)."""
        steps = self._records.get(client_id, ())
        if not (1 <= n <= len(steps)):
            raise ValueError(
                f"client {client_id} has {len(steps)} participations, asked for #{n}"
            )
        return steps[n - 1][0]

    # --- serialisation -------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for client_id in self.clients():
            for t, p in self._records[client_id]:
                lines.append(
                    f"{client_id}\t{t}\t{p.q!r}\t{p.sigma!r}\t{p.clip!r}\t{p.batch_size}"
                )
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str) -> "ParticipationLedger":
        ledger = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ValueError(f"ledger line {lineno}: expected 6 tab-separated fields")
            client_id, t = int(fields[0]), int(fields[1])
            params = StepParams(
                q=float(fields[2]),
                sigma=float(fields[3]),
                clip=float(fields[4]),
                batch_size=int(fields[5]),
            )
            ledger.record(client_id, t, params)
        return ledger

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())

    @classmethod
    def read(cls, path) -> "ParticipationLedger":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_text(fh.read())


def record_participation(
    ledger: ParticipationLedger, client_id: int, t: int, params: StepParams
) -> ParticipationLedger:
    """Record one participation; returns the ledger for chaining."""
    return ledger.record(client_id, t, params)


@lru_cache(maxsize=None)
def _cached_step_bound(alpha: float, q: float, sigma: float, max_moment_order: int | None) -> float:
    try:
        return renyi_step_bound(
            alpha, MechanismParams(q=q, sigma=sigma), max_moment_order=max_moment_order
        ).bound
    except OverflowError:
        # No admissible truncation at this order; +inf is still a valid
        # upper bound and the conversion step skips it.
        return math.inf


def compose_client_rdp(
    ledger: ParticipationLedger,
    client_id: int,
    alphas: Iterable[float] = DEFAULT_ALPHAS,
    *,
    max_moment_order: int | None = None,
) -> RdpCurve:
    """Sum the one-step bounds over the client's recorded steps.

    Independent composition: value(alpha) = sum over steps of the one-step
    bound at (q, sigma) of that step.  A client absent from the ledger has
    the zero curve.  Steps with sigma = 0 or q = 1 admit no finite bound and
    raise, annotated with the step index.
    """
    alphas = tuple(float(a) for a in alphas)
    totals = [0.0] * len(alphas)
    for idx, (t, p) in enumerate(ledger.steps(client_id)):
        if p.sigma == 0 or p.q == 1:
            raise ValueError(
                f"step {idx} (t={t}) of client {client_id} has q={p.q}, "
                f"sigma={p.sigma}: no finite divergence bound exists"
            )
        for i, alpha in enumerate(alphas):
            if math.isinf(totals[i]):
                continue
            totals[i] += _cached_step_bound(alpha, p.q, p.sigma, max_moment_order)
    return RdpCurve(alphas, tuple(totals))


def rdp_to_dp(curve: RdpCurve, delta: float = DEFAULT_DELTA) -> tuple[PrivacyBudget, float]:
    """Convert an RDP curve to (epsilon, delta) DP.

    epsilon = min over grid orders of value(alpha) + log(1/delta)/(alpha-1);
    ties break toward the smallest order.  Orders with +inf values are
    skipped; if every order is +inf the budget is +inf at the smallest order.
    """
    if not (isinstance(delta, (int, float)) and 0 < delta < 1):
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    log_term = math.log(1.0 / delta)
    best_eps = math.inf
    best_alpha = curve.alphas[0]
    for alpha, value in curve.items():
        if math.isinf(value):
            continue
        eps = value + log_term / (alpha - 1.0)
        if eps < best_eps:
            best_eps = eps
            best_alpha = alpha
    return PrivacyBudget(epsilon=best_eps, delta=delta), best_alpha


def _epsilon_at_sigma(
    sigma: float,
    target_delta: float,
    q: float,
    steps: int,
    alphas: tuple[float, ...],
    max_moment_order: int | None,
) -> float:
    values = []
    for alpha in alphas:
        one = _cached_step_bound(alpha, q, sigma, max_moment_order)
        values.append(one * steps)
    budget, _ = rdp_to_dp(RdpCurve(alphas, tuple(values)), target_delta)
    return budget.epsilon


def calibrate_sigma(
    target: PrivacyBudget,
    q: float,
    steps: int,
    alphas: Iterable[float] = DEFAULT_ALPHAS,
    *,
    sigma_low: float = 0.3,
    sigma_high: float = 64.0,
    rel_tol: float = 1e-4,
    sigma_max: float = 1e6,
    max_moment_order: int | None = CALIBRATION_MAX_MOMENT_ORDER,
) -> float:
    """Smallest noise multiplier meeting the target budget over `steps` steps.

    Bisection on sigma over [sigma_low, sigma_high], doubling the upper end
    until it satisfies the target (up to sigma_max), then shrinking the
    bracket to relative width rel_tol.  The returned sigma always satisfies
    epsilon(sigma) <= target.epsilon; epsilon is nonincreasing in sigma.

    Raises CalibrationError if sigma_max is reached without meeting the
    target (e.g. a target below the conversion floor of the order grid);
    the epsilon achieved at the bracket edge is attached.
    """
    if not isinstance(target, PrivacyBudget):
        raise TypeError("target must be a PrivacyBudget")
    if not (0 < q < 1):
        raise ValueError(f"q must lie in (0, 1), got {q!r}")
    if not (isinstance(steps, int) and steps >= 1):
        raise ValueError(f"steps must be an integer >= 1, got {steps!r}")
    alphas = tuple(float(a) for a in alphas)

    def eps(sigma: float) -> float:
        return _epsilon_at_sigma(sigma, target.delta, q, steps, alphas, max_moment_order)

    lo = sigma_low
    if eps(lo) <= target.epsilon:
        return lo  # pinned at the smallest admissible noise
    hi = sigma_high
    while eps(hi) > target.epsilon:
        lo = hi
        hi *= 2.0
        if hi > sigma_max:
            edge = eps(lo)
            raise CalibrationError(
                f"target epsilon={target.epsilon} unreachable: at sigma={lo} "
                f"the composed epsilon is still {edge:.6g}",
                epsilon_at_bracket=edge,
            )
    # invariant: eps(lo) > target >= eps(hi)
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if eps(mid) <= target.epsilon:
            hi = mid
        else:
            lo = mid
    return hi
