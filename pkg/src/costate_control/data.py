"""Training-set generation and sliding-window extraction.

A dataset is a collection of solved boundary-value trajectories, one per
initial state on a uniform grid. Persistence is a self-describing text
format (header plus fixed-order columns) whose floating-point fields
round-trip exactly via repr.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .problems import OcpProblem
from .tpbvp import SolverConfig, TrajectoryPair, continuation_solve, solve_tpbvp

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed."""


class GenerationError(RuntimeError):
    """Too many boundary value problems failed to converge."""


@dataclass
class Dataset:
    """Converged trajectory pairs for a grid of initial states."""

    problem_id: str
    delta: float
    n_steps: int
    entries: list[TrajectoryPair]
    failures: list[float] = field(default_factory=list)  # x0 values that failed; not persisted

    @property
    def count(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Window:
    """A contiguous horizon-length slice of one trajectory, starting at step k."""

    k: int
    x_window: np.ndarray  # (n, p)
    lambda_window: np.ndarray  # (n, p)


def windows(pair: TrajectoryPair, n: int) -> Iterator[Window]:
    """Yield the N-n sliding windows of length n, k = 0..N-n-1."""
    N = pair.x_traj.shape[0]
    if not 1 <= n < N:
        raise ValueError(f"horizon n={n} must satisfy 1 <= n < N={N}")
    for k in range(N - n):
        yield Window(k, pair.x_traj[k : k + n], pair.lambda_traj[k : k + n])


def generate_dataset(
    problem: OcpProblem,
    x0_min: float,
    x0_max: float,
    count: int,
    solver: SolverConfig | None = None,
) -> Dataset:
    """Solve the boundary value problem on an inclusive uniform grid of
    initial states and collect the converged trajectories.

    The grid is split at the target into two continuation chains solved
    outward, so each solve warm-starts from its nearest converged neighbor.
    Raises GenerationError if fewer than 90% of the points converge;
    otherwise failures are reported in ``Dataset.failures``.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    if not x0_min < x0_max:
        raise ValueError("x0_min must be < x0_max")
    if problem.state_dim != 1:
        raise ValueError("dataset generation supports scalar-state problems only")
    solver = solver or SolverConfig()
    values = np.linspace(x0_min, x0_max, count)
    pivot = float(problem.x_target[0])
    below = sorted([v for v in values if v < pivot], reverse=True)  # outward, descending
    above = sorted([v for v in values if v >= pivot])
    pairs: list[TrajectoryPair] = []
    for chain in (below, above):
        warm = None
        anchor = pivot
        for x0 in chain:
            pair = solve_tpbvp(problem, x0, solver, init=warm)
            if not pair.converged:
                # refine the continuation path from the last converged anchor
                steps = np.linspace(anchor, x0, 12)[1:]
                interm = continuation_solve(problem, steps[:-1], solver, init=warm)
                if interm and interm[-1].converged:
                    pair = solve_tpbvp(problem, x0, solver, init=interm[-1].shooting_vector)
            pairs.append(pair)
            if pair.converged:
                warm = pair.shooting_vector
                anchor = x0
    good = [p for p in pairs if p.converged]
    failures = [float(p.x0[0]) for p in pairs if not p.converged]
    if len(good) < 0.9 * count:
        raise GenerationError(
            f"only {len(good)}/{count} boundary value problems converged; failures at {failures}"
        )
    good.sort(key=lambda p: tuple(p.x0))
    return Dataset(
        problem_id=problem.problem_id,
        delta=problem.delta,
        n_steps=problem.n_steps,
        entries=good,
        failures=failures,
    )


def save_dataset(ds: Dataset, path) -> None:
    """Write a dataset as diff-able text; floats round-trip exactly."""
    lines = [
        f"# costate-control dataset v{FORMAT_VERSION}",
        f"problem_id={ds.problem_id}",
        f"delta={float(ds.delta)!r}",
        f"n_steps={ds.n_steps}",
        f"count={ds.count}",
    ]
    for e in ds.entries:
        x0 = ",".join(repr(float(v)) for v in e.x0)
        lines.append(f"entry x0={x0} converged={e.converged} residual={float(e.residual_norm)!r}")
        for k in range(ds.n_steps):
            t = k * ds.delta
            row = [str(k), repr(float(t))]
            row += [repr(float(v)) for v in e.x_traj[k]]
            row += [repr(float(v)) for v in e.lambda_traj[k]]
            lines.append(" ".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Inverse of save_dataset. Raises DatasetFormatError on malformed input."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("# costate-control dataset v"):
        raise DatasetFormatError(f"{path}: missing dataset header")
    version = lines[0].rsplit("v", 1)[-1]
    if version != str(FORMAT_VERSION):
        raise DatasetFormatError(f"{path}: unsupported format version {version!r}")

    def header(idx: int, key: str) -> str:
        if idx >= len(lines) or not lines[idx].startswith(key + "="):
            raise DatasetFormatError(f"{path}: expected '{key}=' on line {idx + 1}")
        return lines[idx].split("=", 1)[1]

    problem_id = header(1, "problem_id")
    try:
        delta = float(header(2, "delta"))
        n_steps = int(header(3, "n_steps"))
        count = int(header(4, "count"))
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: bad header field: {exc}") from None
    entries: list[TrajectoryPair] = []
    i = 5
    for which in range(count):
        if i >= len(lines) or not lines[i].startswith("entry "):
            raise DatasetFormatError(f"{path}: expected entry {which} on line {i + 1}")
        try:
            fields = dict(tok.split("=", 1) for tok in lines[i].split()[1:])
            x0 = np.array([float(v) for v in fields["x0"].split(",")])
            converged = fields["converged"] == "True"
            residual = float(fields["residual"])
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: bad entry header on line {i + 1}: {exc}") from None
        i += 1
        rows = []
        for k in range(n_steps):
            if i >= len(lines):
                raise DatasetFormatError(f"{path}: entry {which} truncated at step {k}")
            toks = lines[i].split()
            try:
                if int(toks[0]) != k:
                    raise ValueError(f"step index {toks[0]} != {k}")
                rows.append([float(v) for v in toks[2:]])
            except (ValueError, IndexError) as exc:
                raise DatasetFormatError(f"{path}: bad row in entry {which}, line {i + 1}: {exc}") from None
            i += 1
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[1] % 2 != 0 or rows.shape[1] == 0:
            raise DatasetFormatError(f"{path}: entry {which} has malformed columns")
        p = rows.shape[1] // 2
        entries.append(
            TrajectoryPair(
                x0=x0,
                x_traj=rows[:, :p].copy(),
                lambda_traj=rows[:, p:].copy(),
                converged=converged,
                residual_norm=residual,
            )
        )
    return Dataset(problem_id=problem_id, delta=delta, n_steps=n_steps, entries=entries)
