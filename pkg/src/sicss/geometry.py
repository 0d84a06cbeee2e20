"""Array geometry and far-field steering vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal_core import FrameConfig

SPEED_OF_SOUND = 343.0
DEFAULT_RADIUS = 0.0425


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    reference_index: int = 0
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError("mic_positions must be (num_mics, 2)")
        if pos.shape[0] < 2:
            raise ValueError("at least 2 microphones required")
        if not np.all(np.isfinite(pos)):
            raise ValueError("mic positions must be finite")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise ValueError(f"reference_index {self.reference_index} out of range")
        d = self.pairwise_distances(pos)
        if np.any(d[~np.eye(len(pos), dtype=bool)] <= 0):
            raise ValueError("distinct microphones must not coincide")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)

    @staticmethod
    def pairwise_distances(pos):
        diff = pos[:, None, :] - pos[None, :, :]
        return np.sqrt(np.sum(diff**2, axis=-1))

    @property
    def num_mics(self):
        return self.mic_positions.shape[0]

    def distances(self):
        return self.pairwise_distances(self.mic_positions)

    def delays(self, angle_deg):
        """Far-field arrival delay of each mic relative to the reference, seconds.

        A plane wave from azimuth ``angle`` reaches position ``p`` at time
        ``-u . p / c`` with ``u`` the unit vector pointing at the source.
        """
        theta = np.deg2rad(np.asarray(angle_deg, dtype=float))
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        rel = self.mic_positions - self.mic_positions[self.reference_index]
        return -(u @ rel.T) / self.speed_of_sound

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return (
            np.array_equal(self.mic_positions, other.mic_positions)
            and self.reference_index == other.reference_index
            and self.speed_of_sound == other.speed_of_sound
        )

    def __hash__(self):
        return hash((self.mic_positions.tobytes(), self.reference_index, self.speed_of_sound))


def circular_array(num_circle=6, radius=DEFAULT_RADIUS, center_mic=True, phase_deg=0.0):
    """Uniform circular array, optionally with a center mic used as reference."""
    phi = np.deg2rad(phase_deg) + 2 * np.pi * np.arange(num_circle) / num_circle
    ring = radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    if center_mic:
        return ArrayGeometry(np.vstack([[0.0, 0.0], ring]), reference_index=0)
    return ArrayGeometry(ring, reference_index=0)


def default_geometry():
    """Seven-channel array: center reference mic plus six on a 4.25 cm circle."""
    return circular_array()


def load_geometry(path):
    """Read a geometry text file.

    One mic per line as ``x y`` in meters. Optional ``reference = i`` and
    ``speed_of_sound = c`` lines; ``#`` starts a comment.
    """
    positions, opts = [], {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, value = (s.strip() for s in line.split("=", 1))
                opts[key] = value
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ValueError(f"bad geometry line: {raw.rstrip()!r}")
            positions.append([float(parts[0]), float(parts[1])])
    return ArrayGeometry(
        np.array(positions),
        reference_index=int(opts.get("reference", 0)),
        speed_of_sound=float(opts.get("speed_of_sound", SPEED_OF_SOUND)),
    )


def save_geometry(geom, path):
    with open(path, "w") as fh:
        fh.write(f"reference = {geom.reference_index}\n")
        fh.write(f"speed_of_sound = {float(geom.speed_of_sound)!r}\n")
        for x, y in geom.mic_positions:
            fh.write(f"{float(x)!r} {float(y)!r}\n")


def steering_vector(geom, angle, bin, config=None):
    """Unit-norm far-field steering vector for one angle and bin."""
    config = config or FrameConfig()
    if not 0 <= angle < 360:
        raise ValueError(f"angle {angle} outside [0, 360)")
    if not 0 <= bin < config.num_bins:
        raise ValueError(f"bin {bin} outside [0, {config.num_bins})")
    f = bin * config.sample_rate / config.frame_length
    tau = geom.delays(angle)
    return np.exp(-2j * np.pi * f * tau) / np.sqrt(geom.num_mics)


@dataclass(frozen=True, eq=False)
class SteeringTable:
    """Steering vectors indexed ``(angle, bin, channel)``."""

    vectors: np.ndarray
    angle_grid: np.ndarray
    geometry: ArrayGeometry
    config: FrameConfig = field(default_factory=FrameConfig)

    def __post_init__(self):
        # read-only so compiled kernels may cache per-table layouts
        v = np.array(self.vectors, dtype=np.complex128)
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    @property
    def num_angles(self):
        return len(self.angle_grid)

    def index_of(self, angle):
        """Grid index nearest to ``angle`` in circular distance."""
        d = circular_distance(self.angle_grid, angle)
        return int(np.argmin(d))


def angle_grid(step=5.0):
    n = int(round(360.0 / step))
    if not np.isclose(n * step, 360.0):
        raise ValueError(f"grid step {step} does not divide 360")
    return np.arange(n) * step


def build_steering_table(geom, grid, config=None):
    config = config or FrameConfig()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("angle grid must be a non-empty 1-D sequence")
    if np.any((grid < 0) | (grid >= 360)):
        raise ValueError("grid angles must lie in [0, 360)")
    if np.any(np.diff(grid) == 0):
        raise ValueError("duplicate grid angles")
    if np.any(np.diff(grid) < 0):
        raise ValueError("angle grid must be ascending")
    freqs = config.bin_frequencies()
    tau = geom.delays(grid)  # (A, M)
    vectors = np.exp(-2j * np.pi * freqs[None, :, None] * tau[:, None, :])
    vectors /= np.sqrt(geom.num_mics)
    vectors.setflags(write=False)
    grid.setflags(write=False)
    return SteeringTable(vectors, grid, geom, config)


def circular_distance(a, b):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)
