"""Synthetic benchmarks: an advected growing plume and labeled detector data.

The plume sequence provides exact ground truth for transport estimation: a
Gaussian blob drifts with a constant flow while its radius grows each frame,
so total mass increases and brightness constancy is deliberately violated.
The labeled generator provides a desk-scale two-class training set whose
dusty class decouples intensity from the emissivity covariate, which is the
structure the latent-surface detector exploits and a purely linear one
cannot.

All randomness comes from ``numpy.random.default_rng(seed)`` (the PCG64
generator); draw order is documented per function, so identical (inputs,
seed) give bit-identical output everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .detect import LabeledSample
from .flow import FlowField
from .raster import CH_BT87, CH_BT108, CH_BT120, CH_EMIS, ChannelStack, Grid, _format_value

# Class-conditional constants for generate_labeled, per channel.
# Pristine intensities follow a tight line in emissivity; dusty intensities
# ignore the sample's own emissivity (anchored at the mid emissivity) and
# shift by a per-channel offset modulated by a mild hour-of-day factor.
EMISSIVITY_RANGE = (0.70, 0.98)
INTENSITY_BASE = (0.35, 0.45, 0.55)
INTENSITY_SLOPE = (0.9, 0.8, 1.0)
PRISTINE_SD = 0.04
DUSTY_SHIFT = (0.30, -0.25, 0.20)
DUSTY_SD = 0.08
SAMPLE_HOURS = tuple(range(7, 19))  # assigned cyclically by sample index


@dataclass(frozen=True)
class PlumeScenario:
    """Constant-flow growing-plume sequence parameters.

    ``flow`` and ``center0`` are (x, y) pairs in (column, row) pixel units;
    frame k centers the plume at center0 + k*flow with radius
    sigma0 * growth**k.
    """

    rows: int = 64
    cols: int = 64
    n_frames: int = 4
    flow: tuple[float, float] = (1.0, 0.5)
    center0: tuple[float, float] = (28.0, 28.0)
    sigma0: float = 6.0
    growth: float = 1.15
    amplitude: float = 1.0
    noise_sd: float = 0.01

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be positive")
        if self.n_frames < 2:
            raise ValueError(f"need at least 2 frames, got {self.n_frames}")
        if self.sigma0 <= 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.growth < 1:
            raise ValueError(f"growth must be >= 1, got {self.growth}")
        if self.amplitude <= 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be nonnegative, got {self.noise_sd}")


@dataclass
class GroundTruth:
    """A generated sequence with its exact flow and noise-free frames."""

    true_flow: FlowField
    frames: list[Grid]
    noiseless: list[Grid]
    boundary_warning: bool = False


# Flat key=value serialization of a scenario; pair-valued fields split into
# _x/_y keys.  Files may specify any subset; unset keys keep defaults.
_SCALAR_KEYS = ("rows", "cols", "n_frames", "sigma0", "growth", "amplitude", "noise_sd")
_PAIR_KEYS = {"flow": ("flow_x", "flow_y"), "center0": ("center0_x", "center0_y")}


def save_scenario(sc: PlumeScenario, path) -> None:
    lines = []
    for f in fields(sc):
        value = getattr(sc, f.name)
        if f.name in _PAIR_KEYS:
            for key, x in zip(_PAIR_KEYS[f.name], value):
                lines.append(f"{key}={_format_value(float(x))}")
        else:
            lines.append(f"{f.name}={_format_value(float(value))}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scenario(path) -> PlumeScenario:
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, rest = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
            try:
                values[key.strip()] = float(rest.strip())
            except ValueError:
                raise ValueError(f"line {lineno}: unparseable value {rest.strip()!r}") from None
    kwargs: dict = {}
    for name in _SCALAR_KEYS:
        if name in values:
            x = values.pop(name)
            kwargs[name] = int(x) if name in ("rows", "cols", "n_frames") else x
    for name, (kx, ky) in _PAIR_KEYS.items():
        if kx in values or ky in values:
            default = getattr(PlumeScenario(), name)
            kwargs[name] = (values.pop(kx, default[0]), values.pop(ky, default[1]))
    if values:
        raise ValueError(f"unknown scenario keys: {sorted(values)}")
    return PlumeScenario(**kwargs)


def _noiseless_frame(sc: PlumeScenario, k: int) -> np.ndarray:
    cx = sc.center0[0] + k * sc.flow[0]
    cy = sc.center0[1] + k * sc.flow[1]
    radius = sc.sigma0 * sc.growth**k
    jj, ii = np.meshgrid(np.arange(sc.cols, dtype=np.float64), np.arange(sc.rows, dtype=np.float64))
    return sc.amplitude * np.exp(-((jj - cx) ** 2 + (ii - cy) ** 2) / (2.0 * radius**2))


def generate_plume(sc: PlumeScenario, seed: int) -> GroundTruth:
    """Generate the sequence; noise is drawn frame by frame in frame order.

    If any frame's plume center comes within 3 radii of the grid edge the
    result is still produced but flagged with ``boundary_warning``.
    """
    rng = np.random.default_rng(seed)
    frames: list[Grid] = []
    noiseless: list[Grid] = []
    warn = False
    for k in range(sc.n_frames):
        clean = _noiseless_frame(sc, k)
        cx = sc.center0[0] + k * sc.flow[0]
        cy = sc.center0[1] + k * sc.flow[1]
        margin = 3.0 * sc.sigma0 * sc.growth**k
        if (
            cx - margin < 0
            or cx + margin > sc.cols - 1
            or cy - margin < 0
            or cy + margin > sc.rows - 1
        ):
            warn = True
        noisy = clean + rng.normal(0.0, sc.noise_sd, size=clean.shape)
        noiseless.append(Grid.from_2d(clean))
        frames.append(Grid.from_2d(noisy))
    true_flow = FlowField(
        u=Grid.full(sc.rows, sc.cols, sc.flow[0]),
        v=Grid.full(sc.rows, sc.cols, sc.flow[1]),
    )
    return GroundTruth(true_flow=true_flow, frames=frames, noiseless=noiseless, boundary_warning=warn)


def evaluation_mask(
    gt: GroundTruth, pair: int, threshold: float = 0.01, amplitude: float | None = None
) -> Grid:
    """Default flow-evaluation mask for frame pair (pair, pair+1).

    Selects pixels where the pair-averaged noise-free plume exceeds
    ``threshold`` times the plume amplitude; elsewhere the true transport
    acts on no signal and angular error is uninformative.  When ``amplitude``
    is omitted, the peak of the pair's noise-free frames stands in for it.
    """
    a = gt.noiseless[pair].to_2d()
    b = gt.noiseless[pair + 1].to_2d()
    scale = max(a.max(), b.max()) if amplitude is None else float(amplitude)
    return Grid.from_2d((0.5 * (a + b) > threshold * scale).astype(np.float64))


def _hour_factor(hours: np.ndarray) -> np.ndarray:
    lo, hi = min(SAMPLE_HOURS), max(SAMPLE_HOURS)
    return 0.75 + 0.25 * (hours - lo) / (hi - lo)


def generate_labeled(sc: PlumeScenario, seed: int, cutoff: float = 0.01) -> list[LabeledSample]:
    """Labeled samples over every pixel of every noise-free frame.

    Sample index is frame*rows*cols + row-major pixel offset; the label is 1
    where the noise-free plume value exceeds ``cutoff``.  Draw order:
    emissivities (n uniforms), then one n-by-3 standard-normal block scaled
    by the class-conditional standard deviation.  Hours cycle through
    SAMPLE_HOURS by sample index.
    """
    labels = np.concatenate(
        [(_noiseless_frame(sc, k) > cutoff).ravel() for k in range(sc.n_frames)]
    )
    n = labels.size
    n_dusty = int(labels.sum())
    if n_dusty == 0:
        raise ValueError("degenerate labeling: no dusty samples (cutoff too high)")
    if n_dusty == n:
        raise ValueError("degenerate labeling: no pristine samples (cutoff too low)")

    rng = np.random.default_rng(seed)
    emiss = rng.uniform(*EMISSIVITY_RANGE, size=n)
    noise = rng.standard_normal((n, 3))
    hours = np.asarray(SAMPLE_HOURS, dtype=np.float64)[np.arange(n) % len(SAMPLE_HOURS)]

    base = np.asarray(INTENSITY_BASE)
    slope = np.asarray(INTENSITY_SLOPE)
    shift = np.asarray(DUSTY_SHIFT)
    mid_e = 0.5 * (EMISSIVITY_RANGE[0] + EMISSIVITY_RANGE[1])
    pristine = base + slope * emiss[:, None] + PRISTINE_SD * noise
    dusty = base + slope * mid_e + shift * _hour_factor(hours)[:, None] + DUSTY_SD * noise
    intensity = np.where(labels[:, None], dusty, pristine)

    return [
        LabeledSample.make(
            index=i,
            intensity=intensity[i],
            emissivity=emiss[i],
            label=int(labels[i]),
            hour_of_day=hours[i],
        )
        for i in range(n)
    ]


def samples_to_stack(samples: list[LabeledSample], rows: int, cols: int, frame: int = 0) -> ChannelStack:
    """Repack one frame's worth of samples as a channel stack for the detectors.

    Uses samples with indices [frame*rows*cols, (frame+1)*rows*cols); their
    intensities become the three thermal channels and their (first-channel)
    emissivities the shared 'E' layer.
    """
    start = frame * rows * cols
    chunk = samples[start : start + rows * cols]
    if len(chunk) != rows * cols:
        raise ValueError(f"need {rows * cols} samples for frame {frame}, have {len(chunk)}")
    intensity = np.array([s.intensity for s in chunk])
    emissivity = np.array([s.emissivity[0] for s in chunk])
    names = (CH_BT120, CH_BT108, CH_BT87)
    channels = {name: Grid(rows, cols, intensity[:, c]) for c, name in enumerate(names)}
    channels[CH_EMIS] = Grid(rows, cols, emissivity)
    return ChannelStack(channels=channels)
