"""Roofline model and analytic flop/byte counts for TSQR, TSMM and full TT-SVD runs."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DivergenceError
from .tsqr import default_block_rows

BANDWIDTH_KINDS = ("load", "copy", "stream", "store")


@dataclass(frozen=True)
class MachineProfile:
    """Bandwidths in bytes/s and peak rate in flops/s."""

    name: str = "xeon-14core"
    b_load: float = 93e9
    b_copy: float = 70e9
    b_stream: float = 73e9
    b_store: float = 45e9
    p_max: float = 1009e9

    def __post_init__(self):
        for key in ("b_load", "b_copy", "b_stream", "b_store", "p_max"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if not self.b_store <= self.b_copy <= self.b_load:
            warnings.warn(f"profile {self.name!r}: expected b_store <= b_copy <= b_load", stacklevel=2)

    def bandwidth(self, kind: str) -> float:
        if kind not in BANDWIDTH_KINDS:
            raise ValueError(f"unknown bandwidth kind {kind!r}")
        return getattr(self, "b_" + kind)

    def machine_intensity(self, kind: str) -> float:
        return self.p_max / self.bandwidth(kind)


DEFAULT_PROFILE = MachineProfile()


def load_profile(path) -> MachineProfile:
    """Flat ``key = value`` (or ``key: value``) file; missing keys keep the defaults."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split(sep, 1))
        if key == "name":
            values[key] = value
        elif key in ("b_load", "b_copy", "b_stream", "b_store", "p_max"):
            values[key] = float(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return replace(DEFAULT_PROFILE, **values)


def save_profile(profile: MachineProfile, path) -> None:
    lines = [f"name = {profile.name}"]
    lines += [f"{k} = {getattr(profile, k)!r}" for k in ("b_load", "b_copy", "b_stream", "b_store", "p_max")]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class CostEstimate:
    n_flops: float
    v_bytes: float
    t_min: float | None = None
    bound: str | None = None

    @property
    def i_c(self) -> float:
        return self.n_flops / self.v_bytes if self.v_bytes > 0 else math.inf

    def __add__(self, other: CostEstimate) -> CostEstimate:
        t = None
        if self.t_min is not None and other.t_min is not None:
            t = self.t_min + other.t_min
        bound = self.bound if self.bound == other.bound else None
        return CostEstimate(self.n_flops + other.n_flops, self.v_bytes + other.v_bytes, t, bound)


ZERO_COST = CostEstimate(0.0, 0.0, 0.0, None)


def roofline(cost: CostEstimate, profile: MachineProfile = DEFAULT_PROFILE,
             bandwidth_kind: str = "load") -> CostEstimate:
    """Fill in ``t_min`` and the limiting resource."""
    b = profile.bandwidth(bandwidth_kind)
    if cost.i_c > profile.p_max / b:
        return replace(cost, t_min=cost.n_flops / profile.p_max, bound="compute")
    return replace(cost, t_min=cost.v_bytes / b, bound="memory")


def tsqr_cost(n: int, m: int, n_b: float = math.inf) -> CostEstimate:
    """``(1 + 1/n_b) 2 n m^2`` flops over ``8 n m`` bytes read."""
    return CostEstimate((1.0 + 1.0 / n_b) * 2.0 * n * m * m, 8.0 * n * m)


def tsmm_cost(n: int, m: int, k: int) -> CostEstimate:
    """``2 n m k`` flops over ``8 n (m + k)`` bytes."""
    return CostEstimate(2.0 * n * m * k, 8.0 * n * (m + k))


def _check_f(f_bar: float) -> None:
    if not f_bar < 1:
        raise DivergenceError(f"reduction factor {f_bar} >= 1: the geometric series diverges")
    if not f_bar > 0:
        raise ValueError(f"reduction factor must be positive, got {f_bar}")


def ttsvd_volume_estimate(n_bar: float, f_bar: float) -> float:
    """Bytes moved by all steps when every step shrinks the work array by ``f_bar``."""
    _check_f(f_bar)
    return 8.0 * (2.0 * n_bar / (1.0 - f_bar) + f_bar * n_bar / (1.0 - f_bar))


def ttsvd_flops_estimate(n_bar: float, r_max: int, f_bar: float) -> float:
    """``2 n_bar r_max (1/f_bar + 2/(1 - f_bar))`` flops."""
    _check_f(f_bar)
    return 2.0 * n_bar * r_max * (1.0 / f_bar + 2.0 / (1.0 - f_bar))


def optimal_reduction_factor() -> float:
    """Minimizer of ``1/f + 2/(1 - f)``, i.e. of the flop bound over ``f_bar``: ``1/(1 + sqrt 2)``."""
    return 1.0 / (1.0 + math.sqrt(2.0))


@dataclass
class StepCost:
    step: int
    rows: int
    cols: int
    rank: int
    f: float
    tsqr: CostEstimate
    tsmm: CostEstimate

    @property
    def total(self) -> CostEstimate:
        return self.tsqr + self.tsmm


@dataclass
class ReductionPlan:
    steps: list[StepCost] = field(default_factory=list)
    combined: int = 1

    @property
    def f(self) -> list[float]:
        return [s.f for s in self.steps]

    @property
    def f_bar(self) -> float:
        """Bounding factor: the first-step factor when trailing modes are merged, else the largest."""
        if not self.steps:
            return 0.0
        if self.combined > 1:
            return self.steps[0].f
        return max(self.f)

    @property
    def total(self) -> CostEstimate:
        out = ZERO_COST
        for s in self.steps:
            out = out + s.total
        return out


def per_step_model(shape, ranks, combine_plan: int | None = None,
                   profile: MachineProfile | None = None, n_b: int | None = None):
    """Exact per-step tsqr + tsmm costs of a right-to-left sweep with the given ranks.

    ``ranks`` is ``r_0..r_d``; ``combine_plan`` is the number ``k`` of trailing
    modes merged into the first step (1 or ``None`` for the plain sweep).
    Returns ``(plan, total)``; with ``profile`` every cost carries a roofline time.
    """
    dims = tuple(int(n) for n in shape)
    ranks = tuple(int(r) for r in ranks)
    d = len(dims)
    if len(ranks) != d + 1 or ranks[0] != 1 or ranks[-1] != 1:
        raise ValueError(f"ranks {ranks} do not fit shape {dims}")
    k = combine_plan or 1
    plan = ReductionPlan(combined=k)
    rows = math.prod(dims[: d - k])
    cols = math.prod(dims[d - k :])
    first = True
    i = d - k + 1 if k > 1 else d
    while i >= 2:
        r_new = ranks[i - 1]
        nb = n_b if n_b is not None else default_block_rows(cols)
        q = tsqr_cost(rows, cols, nb)
        t = tsmm_cost(rows, cols, r_new)
        if profile is not None:
            q = roofline(q, profile, "load")
            t = roofline(t, profile, "stream")
        plan.steps.append(StepCost(i if not first or k == 1 else d, rows, cols, r_new,
                                   r_new / cols, q, t))
        first = False
        rows, cols = rows // dims[i - 2], dims[i - 2] * r_new
        i -= 1
    total = plan.total
    return plan, total


def model_ttsvd(n_bar: float, r_max: int, f_bar: float,
                profile: MachineProfile = DEFAULT_PROFILE) -> CostEstimate:
    """Roofline estimate of a full run from the ``f_bar`` bounds."""
    cost = CostEstimate(ttsvd_flops_estimate(n_bar, r_max, f_bar), ttsvd_volume_estimate(n_bar, f_bar))
    return roofline(cost, profile, "load")
