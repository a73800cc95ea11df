"""Grids, channel stacks, derivative stencils and GridText file I/O.

Everything downstream (detection, flow estimation, metrics) works on the
two data types defined here: a ``Grid`` is a dense rows x cols raster of
finite float64 values in row-major order, and a ``ChannelStack`` is an
ordered, named collection of co-registered grids.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

# Canonical channel names used by the detection pipeline.
CH_BT120 = "BT12.0"
CH_BT108 = "BT10.8"
CH_BT87 = "BT8.7"
CH_RED = "R"
CH_GREEN = "G"
CH_BLUE = "B"
CH_DBR = "dT_BR"
CH_DBG = "dT_BG"
CH_ROLLMEAN = "M"
CH_EMIS = "E"


class GridParseError(ValueError):
    """Malformed GridText input; the message names the offending line."""


class Grid:
    """Immutable-by-convention raster; values are validated finite on construction."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data):
        rows = int(rows)
        cols = int(cols)
        if rows <= 0 or cols <= 0:
            raise ValueError(f"grid dimensions must be positive, got {rows}x{cols}")
        arr = np.array(data, dtype=np.float64).ravel()
        if arr.size != rows * cols:
            raise ValueError(
                f"expected {rows * cols} values for a {rows}x{cols} grid, got {arr.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid values must all be finite")
        self.rows = rows
        self.cols = cols
        self.data = arr

    @classmethod
    def from_2d(cls, arr) -> "Grid":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got ndim={a.ndim}")
        return cls(a.shape[0], a.shape[1], a)

    @classmethod
    def full(cls, rows: int, cols: int, value: float = 0.0) -> "Grid":
        return cls(rows, cols, np.full(rows * cols, float(value)))

    def to_2d(self) -> np.ndarray:
        return self.data.reshape(self.rows, self.cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def same_shape(self, other: "Grid") -> bool:
        return self.rows == other.rows and self.cols == other.cols

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None  # mutable payload, not hashable

    def __repr__(self) -> str:
        return f"Grid({self.rows}x{self.cols})"


def _format_value(x: float) -> str:
    # Shortest decimal form that round-trips; integral values drop the ".0".
    if x == int(x) and abs(x) <= 2**53:
        return str(int(x))
    return repr(x)


def save_grid(g: Grid, path) -> None:
    """Write ``g`` in GridText v1: header line, then one row of values per line."""
    lines = [f"grid {g.rows} {g.cols}"]
    d = g.data
    for i in range(g.rows):
        row = d[i * g.cols : (i + 1) * g.cols]
        lines.append(" ".join(_format_value(float(x)) for x in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grid(path) -> Grid:
    """Parse a GridText v1 file.

    Raises GridParseError with the failing line number for a malformed
    header, an unparseable or non-finite token, or a value-count mismatch.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != "grid":
        raise GridParseError(f"line 1: expected header 'grid <rows> <cols>', got {lines[0]!r}")
    try:
        rows, cols = int(head[1]), int(head[2])
    except ValueError:
        raise GridParseError(f"line 1: non-integer dimensions in {lines[0]!r}") from None
    if rows <= 0 or cols <= 0:
        raise GridParseError(f"line 1: dimensions must be positive, got {rows}x{cols}")
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        for tok in line.split():
            # float() accepts '_' digit separators; the format does not.
            if "_" in tok:
                raise GridParseError(f"line {lineno}: unparseable value {tok!r}")
            try:
                x = float(tok)
            except ValueError:
                raise GridParseError(f"line {lineno}: unparseable value {tok!r}") from None
            if not np.isfinite(x):
                raise GridParseError(f"line {lineno}: non-finite value {tok!r}")
            values.append(x)
    if len(values) != rows * cols:
        raise GridParseError(
            f"line {len(lines)}: expected {rows * cols} values, found {len(values)}"
        )
    return Grid(rows, cols, values)


@dataclass
class ChannelStack:
    """Named, co-registered grids plus a frame timestamp and optional local hour."""

    channels: dict
    timestamp: int = 0
    hour_of_day: float | None = None

    def __post_init__(self):
        if not self.channels:
            raise ValueError("channel stack needs at least one channel")
        shapes = {(g.rows, g.cols) for g in self.channels.values()}
        if len(shapes) != 1:
            raise ValueError(f"channels disagree on dimensions: {sorted(shapes)}")
        if self.hour_of_day is not None and not 0.0 <= self.hour_of_day < 24.0:
            raise ValueError(f"hour_of_day must lie in [0, 24), got {self.hour_of_day}")

    @property
    def rows(self) -> int:
        return next(iter(self.channels.values())).rows

    @property
    def cols(self) -> int:
        return next(iter(self.channels.values())).cols

    def __getitem__(self, name: str) -> Grid:
        return self.channels[name]

    def __contains__(self, name: str) -> bool:
        return name in self.channels


def save_stack(stack: ChannelStack, directory) -> None:
    """Write a stack as a directory of GridText files plus a ``stack.manifest``."""
    os.makedirs(directory, exist_ok=True)
    lines = [f"timestamp {stack.timestamp}"]
    if stack.hour_of_day is None:
        lines.append("hour none")
    else:
        lines.append(f"hour {_format_value(float(stack.hour_of_day))}")
    for name, grid in stack.channels.items():
        fname = name.replace("/", "_") + ".grid"
        save_grid(grid, os.path.join(directory, fname))
        lines.append(f"{name} {fname}")
    with open(os.path.join(directory, "stack.manifest"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_stack(directory) -> ChannelStack:
    manifest = os.path.join(directory, "stack.manifest")
    channels: dict[str, Grid] = {}
    timestamp = 0
    hour: float | None = None
    with open(manifest, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            if key == "timestamp":
                timestamp = int(rest)
            elif key == "hour":
                hour = None if rest == "none" else float(rest)
            else:
                if key in channels:
                    raise ValueError(f"duplicate channel {key!r} in manifest")
                channels[key] = load_grid(os.path.join(directory, rest))
    return ChannelStack(channels=channels, timestamp=timestamp, hour_of_day=hour)


@dataclass(frozen=True)
class FalseColorRanges:
    """Physical value ranges mapped onto [0, 1] by the false-color rescalings.

    The exact constants are presentation configuration, not science: detection
    thresholds operate on the raw temperature differences, never on R/G/B.
    """

    red: tuple[float, float] = (-4.0, 2.0)  # BT12.0 - BT10.8, Kelvin
    green: tuple[float, float] = (0.0, 15.0)  # BT10.8 - BT8.7, Kelvin
    blue: tuple[float, float] = (261.0, 289.0)  # BT10.8, Kelvin


def _rescale(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def false_color(
    bt12: Grid,
    bt108: Grid,
    bt87: Grid,
    gamma: float = 0.4,
    ranges: FalseColorRanges = FalseColorRanges(),
) -> ChannelStack:
    """Compose the dust false-color product from the three thermal channels.

    R rescales the BT12.0-BT10.8 difference, G rescales the BT10.8-BT8.7
    difference (with gamma correction), and B rescales BT10.8 itself.  The
    returned stack carries R/G/B plus the raw difference grids.
    """
    if not (bt12.same_shape(bt108) and bt12.same_shape(bt87)):
        raise ValueError("false_color inputs must be co-registered")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d_br = bt12.to_2d() - bt108.to_2d()
    d_bg = bt108.to_2d() - bt87.to_2d()
    red = _rescale(d_br, *ranges.red)
    green = _rescale(d_bg, *ranges.green) ** gamma
    blue = _rescale(bt108.to_2d(), *ranges.blue)
    return ChannelStack(
        channels={
            CH_RED: Grid.from_2d(red),
            CH_GREEN: Grid.from_2d(green),
            CH_BLUE: Grid.from_2d(blue),
            CH_DBR: Grid.from_2d(d_br),
            CH_DBG: Grid.from_2d(d_bg),
        }
    )


@dataclass(frozen=True)
class DerivativeSet:
    """Discrete derivatives of a frame pair.

    fx/fy are central differences of the two-frame average (one-sided on the
    boundary ring), ft is the plain frame difference over a unit interval,
    and avg is the two-frame average itself (used as the multiplicative
    field by the compressible-transport likelihood).
    """

    fx: Grid
    fy: Grid
    ft: Grid
    avg: Grid

    def __post_init__(self):
        if not (self.fx.same_shape(self.fy) and self.fx.same_shape(self.ft) and self.fx.same_shape(self.avg)):
            raise ValueError("derivative grids must share dimensions")


def derivatives(frame_a: Grid, frame_b: Grid) -> DerivativeSet:
    """Derivative stencils for a consecutive frame pair (unit frame interval)."""
    if not frame_a.same_shape(frame_b):
        raise ValueError("frame pair must share dimensions")
    if frame_a.rows < 3 or frame_a.cols < 3:
        raise ValueError("derivative stencils need at least a 3x3 grid")
    a = frame_a.to_2d()
    b = frame_b.to_2d()
    avg = 0.5 * (a + b)
    ft = b - a
    fx = np.empty_like(avg)
    fx[:, 1:-1] = 0.5 * (avg[:, 2:] - avg[:, :-2])
    fx[:, 0] = avg[:, 1] - avg[:, 0]
    fx[:, -1] = avg[:, -1] - avg[:, -2]
    fy = np.empty_like(avg)
    fy[1:-1, :] = 0.5 * (avg[2:, :] - avg[:-2, :])
    fy[0, :] = avg[1, :] - avg[0, :]
    fy[-1, :] = avg[-1, :] - avg[-2, :]
    return DerivativeSet(
        fx=Grid.from_2d(fx), fy=Grid.from_2d(fy), ft=Grid.from_2d(ft), avg=Grid.from_2d(avg)
    )
