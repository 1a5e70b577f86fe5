"""CSV/JSON writers and the matching readers.

Floats in CSV use ``%.17g`` so every value reads back bit-identical; JSON
relies on ``repr`` round-tripping and is written with sorted keys.  Writes go
through a temporary file in the target directory and ``os.replace``.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .integrator import CrossingEvent, HybridTrajectory, Segment, Termination
from .model import BoundaryKind, Regime, State

TRAJECTORY_HEADER = ("t", "w", "eta", "xi", "regime")
EVENT_HEADER = ("t", "w", "eta", "xi", "kind", "regime_before", "regime_after")


def fmt(value: float) -> str:
    return "%.17g" % value


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_table(path, header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    """Numeric columns to CSV."""
    rows = ([fmt(v) for v in row] for row in zip(*columns))
    return atomic_write_text(path, _csv_text(header, rows))


def read_table(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [list(map(float, row)) for row in reader]
    arr = np.asarray(data, dtype=float).reshape(len(data), len(header))
    return {name: arr[:, j] for j, name in enumerate(header)}


# -- trajectories -----------------------------------------------------------------


def trajectory_rows(times, states, regimes):
    for t, x, r in zip(times, states, regimes):
        yield (fmt(t), fmt(x[0]), fmt(x[1]), fmt(x[2]), r.value)


def write_trajectory_csv(path, trajectory: HybridTrajectory, sample_dt=None) -> int:
    """One row per sample; the first row of each segment is its start (a crossing).

    Returns the number of rows written.
    """
    samples = trajectory.samples() if sample_dt is None else trajectory.resample(sample_dt)
    atomic_write_text(path, _csv_text(TRAJECTORY_HEADER, trajectory_rows(*samples)))
    return len(samples[0])


def write_events_csv(path, events: Sequence[CrossingEvent]) -> Path:
    rows = (
        (fmt(e.time), fmt(e.state.w), fmt(e.state.eta), fmt(e.state.xi), e.kind.value,
         e.regime_before.value, e.regime_after.value)
        for e in events
    )
    return atomic_write_text(path, _csv_text(EVENT_HEADER, rows))


def read_events_csv(path) -> tuple[CrossingEvent, ...]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != EVENT_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return tuple(
            CrossingEvent(
                time=float(row["t"]),
                state=State(float(row["w"]), float(row["eta"]), float(row["xi"])),
                kind=BoundaryKind(row["kind"]),
                regime_before=Regime(row["regime_before"]),
                regime_after=Regime(row["regime_after"]),
            )
            for row in reader
        )


def read_trajectory_csv(path, events_path=None, termination=Termination.MAX_TIME, diagnostic="") -> HybridTrajectory:
    """Rebuild a :class:`HybridTrajectory` from its CSV (and optional events file).

    Segments are the maximal runs of equal ``regime``.  Termination and
    diagnostic are not stored in the CSV and are taken from the arguments.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    segments: list[Segment] = []
    start = 0
    for i in range(1, len(rows) + 1):
        if i == len(rows) or rows[i][4] != rows[start][4]:
            block = rows[start:i]
            segments.append(
                Segment(
                    regime=Regime(block[0][4]),
                    times=np.array([float(r[0]) for r in block]),
                    states=np.array([[float(r[1]), float(r[2]), float(r[3])] for r in block]),
                )
            )
            start = i
    events = read_events_csv(events_path) if events_path is not None else ()
    return HybridTrajectory(tuple(segments), events, Termination(termination), diagnostic)


def trajectories_equal(a: HybridTrajectory, b: HybridTrajectory) -> bool:
    """Exact equality, including array contents."""
    if (a.termination, a.diagnostic, a.events) != (b.termination, b.diagnostic, b.events):
        return False
    if len(a.segments) != len(b.segments):
        return False
    return all(
        s.regime is r.regime and np.array_equal(s.times, r.times) and np.array_equal(s.states, r.states)
        for s, r in zip(a.segments, b.segments)
    )
