"""Software counters and phase timers for a single decomposition run.

Kernels tally executed flops (FMA count x 2) and modeled bytes (8 x elements
streamed in and out). Workers compute their own tallies; the coordinating
thread merges them into the cell of the active step and phase.
"""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class PhaseRecord:
    seconds: float = 0.0
    flops: int = 0
    bytes: int = 0


@dataclass
class StepRecord:
    step: int
    rank: int | None = None
    phases: dict[str, PhaseRecord] = field(default_factory=dict)


class RunCounters:
    """Per-run accumulator of flops, bytes and wall time by step and phase."""

    def __init__(self):
        self.steps: list[StepRecord] = []
        self.flops = 0
        self.bytes = 0
        self.peak_scratch_bytes = 0
        self._step: StepRecord | None = None
        self._phase: str | None = None

    def begin_step(self, index: int) -> StepRecord:
        rec = StepRecord(index)
        self.steps.append(rec)
        self._step = rec
        return rec

    def set_rank(self, rank: int) -> None:
        if self._step is not None:
            self._step.rank = int(rank)

    @contextmanager
    def phase(self, name: str):
        if self._step is None:
            self.begin_step(len(self.steps) + 1)
        rec = self._step.phases.setdefault(name, PhaseRecord())
        outer, self._phase = self._phase, name
        t0 = time.perf_counter()
        try:
            yield rec
        finally:
            rec.seconds += time.perf_counter() - t0
            self._phase = outer

    def add(self, flops: int = 0, nbytes: int = 0) -> None:
        self.flops += int(flops)
        self.bytes += int(nbytes)
        if self._step is not None and self._phase is not None:
            rec = self._step.phases[self._phase]
            rec.flops += int(flops)
            rec.bytes += int(nbytes)

    def note_scratch(self, nbytes: int) -> None:
        self.peak_scratch_bytes = max(self.peak_scratch_bytes, int(nbytes))


def collect_counters(run: RunCounters) -> tuple[int, int]:
    """``(flops_executed, bytes_modeled)`` accumulated over a run."""
    return run.flops, run.bytes


@contextmanager
def maybe_phase(counters: RunCounters | None, name: str):
    if counters is None:
        yield None
    else:
        with counters.phase(name) as rec:
            yield rec
