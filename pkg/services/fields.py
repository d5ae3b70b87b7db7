"""
Uniform periodic grid, complex envelope fields and spectral primitives.

Fourier convention (unitary on the grid):
    F(k_q) = dx / sqrt(2 pi) * sum_j f_j exp(-i k_q x_j)
so that sum |f|^2 dx == sum |F|^2 dk.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import fft

from services.errors import ConfigError, GridMismatchError, OutputError

logger = logging.getLogger(__name__)

SNAPSHOT_COLUMNS = ['x', 'Re', 'Im', 'carrier', 'kind', 'time']
CSV_VERSION = '# teleport-csv v1'

# Allowed boundary tail of a freshly built envelope, relative to its peak
TAIL_TOLERANCE = 1e-10


class FieldKind(str, Enum):
    ATOMIC_BEAM = 'atomic-beam'
    OPTICAL_PROBE = 'optical-probe'
    CONDENSATE = 'condensate'


@dataclass(frozen=True)
class Grid1D:
    """Periodic grid of n points; point n is identified with point 0"""
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ConfigError(f"Grid size must be a power of two, got {self.n}")
        if not self.x_max > self.x_min:
            raise ConfigError("Grid requires x_max > x_min")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def dk(self) -> float:
        return 2 * math.pi / (self.n * self.dx)

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @cached_property
    def k(self) -> np.ndarray:
        """Wavenumbers in FFT order"""
        return 2 * math.pi * fft.fftfreq(self.n, d=self.dx)

    def contains(self, x: float) -> bool:
        return self.x_min <= x < self.x_max

    def index_of(self, x: float) -> int:
        return int(round((x - self.x_min) / self.dx)) % self.n

    def refined(self, factor: int) -> 'Grid1D':
        return Grid1D(self.x_min, self.x_max, self.n * factor)


@dataclass(frozen=True, eq=False)
class ComplexField:
    """
    Envelope of a field on a grid. The stored values omit the plane-wave
    factor exp(i * carrier * x). Values are copied and frozen on construction.
    """
    grid: Grid1D
    values: np.ndarray
    carrier: float = 0.0
    kind: FieldKind = FieldKind.ATOMIC_BEAM

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128, copy=True)
        if values.shape != (self.grid.n,):
            raise GridMismatchError(f"Field has {values.shape} points, grid has {self.grid.n}")
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'kind', FieldKind(self.kind))

    def norm(self) -> float:
        """Discrete integral of |f|^2"""
        return float(np.vdot(self.values, self.values).real * self.grid.dx)

    def peak(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values: np.ndarray) -> 'ComplexField':
        return ComplexField(self.grid, values, self.carrier, self.kind)

    def scaled(self, alpha: complex) -> 'ComplexField':
        return self.with_values(alpha * self.values)

    @classmethod
    def zeros(cls, grid: Grid1D, carrier: float = 0.0, kind: FieldKind = FieldKind.ATOMIC_BEAM) -> 'ComplexField':
        return cls(grid, np.zeros(grid.n, dtype=np.complex128), carrier, kind)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier-space counterpart of a ComplexField, values in FFT order"""
    grid: Grid1D
    values: np.ndarray
    carrier: float = 0.0
    kind: FieldKind = FieldKind.ATOMIC_BEAM

    def norm(self) -> float:
        return float(np.vdot(self.values, self.values).real * self.grid.dk)


def require_same_grid(f: ComplexField, g: ComplexField, match_content: bool = True):
    if f.grid != g.grid:
        raise GridMismatchError(f"Grid mismatch: {f.grid} vs {g.grid}")
    if match_content and (f.carrier != g.carrier or f.kind != g.kind):
        raise GridMismatchError(
            f"Cannot combine {f.kind.value} (carrier {f.carrier}) with {g.kind.value} (carrier {g.carrier})"
        )


class SpectralWorkspace:
    """
    Per-run transform helper. Holds the x_min phase of the unitary convention
    and caches diagonal Fourier-space propagators. Not shared between threads.
    """

    def __init__(self, grid: Grid1D):
        self.grid = grid
        self.k = grid.k
        self._origin_phase = np.exp(-1j * self.k * grid.x_min)
        self._forward_scale = grid.dx / math.sqrt(2 * math.pi)
        self._inverse_scale = grid.dk * grid.n / math.sqrt(2 * math.pi)
        self._cache: Dict[Hashable, np.ndarray] = {}

    def forward(self, values: np.ndarray) -> np.ndarray:
        return self._forward_scale * self._origin_phase * fft.fft(values)

    def inverse(self, spectrum: np.ndarray) -> np.ndarray:
        return self._inverse_scale * fft.ifft(spectrum / self._origin_phase)

    def propagator(self, key: Hashable, factory: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Cached multiplier factory(k) for repeated diagonal steps"""
        if key not in self._cache:
            self._cache[key] = factory(self.k)
        return self._cache[key]

    def apply(self, values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
        """Multiply in Fourier space; the convention phases cancel so plain FFTs suffice"""
        return fft.ifft(fft.fft(values) * multiplier)


def inner_product(f: ComplexField, g: ComplexField) -> complex:
    """Discrete integral of conj(f) * g"""
    require_same_grid(f, g)
    return complex(np.vdot(f.values, g.values) * f.grid.dx)


def field_norm(f: ComplexField) -> float:
    return f.norm()


def centroid(f: ComplexField) -> float:
    density = np.abs(f.values) ** 2
    total = density.sum()
    if total == 0:
        raise ConfigError("Centroid of an empty field is undefined")
    return float(np.dot(f.grid.x, density) / total)


def gaussian_envelope(grid: Grid1D, center: float, width: float, amplitude: float,
                      carrier: float = 0.0, kind: FieldKind = FieldKind.ATOMIC_BEAM) -> ComplexField:
    """
    Gaussian exp(-(x - center)^2 / (2 width^2)) normalized to norm amplitude^2.
    The second moment of |f|^2 is width^2 / 2.
    """
    if width <= 3 * grid.dx:
        raise ConfigError(f"Envelope width {width:.4g} under-resolved by grid spacing {grid.dx:.4g}")
    margin = min(center - grid.x_min, grid.x_max - center)
    if margin <= 0 or math.exp(-margin ** 2 / (2 * width ** 2)) > TAIL_TOLERANCE:
        raise ConfigError(f"Envelope at {center:.4g} (width {width:.4g}) does not fit inside the domain")

    shape = np.exp(-(grid.x - center) ** 2 / (2 * width ** 2)).astype(np.complex128)
    shape *= amplitude / math.sqrt(np.vdot(shape, shape).real * grid.dx)
    return ComplexField(grid, shape, carrier, kind)


def fourier_forward(f: ComplexField) -> SpectralField:
    workspace = SpectralWorkspace(f.grid)
    return SpectralField(f.grid, workspace.forward(f.values), f.carrier, f.kind)


def fourier_inverse(spectrum: SpectralField) -> ComplexField:
    workspace = SpectralWorkspace(spectrum.grid)
    return ComplexField(spectrum.grid, workspace.inverse(spectrum.values), spectrum.carrier, spectrum.kind)


def translate_field(f: ComplexField, shift: float) -> ComplexField:
    """Spectral translation f(x) -> f(x - shift)"""
    if abs(shift) >= f.grid.length:
        raise ConfigError(f"Shift {shift:.4g} exceeds the domain length {f.grid.length:.4g}")
    if shift == 0:
        return f
    phase = np.exp(-1j * f.grid.k * shift)
    return f.with_values(fft.ifft(fft.fft(f.values) * phase))


def export_snapshot(fields: Sequence[ComplexField], path: Union[str, Path], times: Sequence[float],
                    metadata: Optional[Dict[str, str]] = None) -> Path:
    """
    Write fields to CSV (x, Re, Im, carrier, kind, time) or to a bit-exact .npz,
    chosen by the file suffix.
    """
    path = Path(path)
    if len(fields) != len(times):
        raise ConfigError("One time stamp per exported field is required")

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == '.npz':
            _export_npz(fields, path, times, metadata or {})
        else:
            _export_csv(fields, path, times, metadata or {})
    except OSError as e:
        raise OutputError(f"Failed to write snapshot file {path}: {e}", str(path))

    logger.debug(f"Wrote {len(fields)} fields to {path}")
    return path


def _export_csv(fields, path: Path, times, metadata: Dict[str, str]):
    frames = []
    for f, t in zip(fields, times):
        frames.append(pd.DataFrame({
            'x': f.grid.x,
            'Re': f.values.real,
            'Im': f.values.imag,
            'carrier': f.carrier,
            'kind': f.kind.value,
            'time': t,
        }))
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SNAPSHOT_COLUMNS)

    with open(path, 'w', newline='') as out:
        out.write(CSV_VERSION + '\n')
        for key, value in metadata.items():
            out.write(f"# {key}: {value}\n")
        table.to_csv(out, index=False, columns=SNAPSHOT_COLUMNS, float_format='%.17g')


def _export_npz(fields, path: Path, times, metadata: Dict[str, str]):
    arrays = {
        'values': np.stack([f.values for f in fields]) if fields else np.zeros((0, 0), dtype=np.complex128),
        'carriers': np.array([f.carrier for f in fields], dtype=float),
        'kinds': np.array([f.kind.value for f in fields]),
        'times': np.array(times, dtype=float),
        'meta_keys': np.array(list(metadata.keys())),
        'meta_values': np.array([str(v) for v in metadata.values()]),
    }
    if fields:
        g = fields[0].grid
        arrays['grid'] = np.array([g.x_min, g.x_max, g.n], dtype=float)
    np.savez(path, **arrays)


def load_snapshot(path: Union[str, Path]) -> List[tuple]:
    """Read an exported snapshot file back as a list of (time, ComplexField)"""
    path = Path(path)
    if not path.exists():
        raise OutputError(f"Snapshot file not found: {path}", str(path))

    if path.suffix == '.npz':
        with np.load(path) as data:
            if 'grid' not in data:
                return []
            x_min, x_max, n = data['grid']
            grid = Grid1D(float(x_min), float(x_max), int(n))
            return [
                (float(t), ComplexField(grid, v, float(c), FieldKind(str(kind))))
                for v, c, kind, t in zip(data['values'], data['carriers'], data['kinds'], data['times'])
            ]

    table = pd.read_csv(path, comment='#')
    # Fields are written as consecutive blocks, each restarting at x_min
    x_all = table['x'].to_numpy()
    bounds = np.concatenate([[0], np.flatnonzero(np.diff(x_all) < 0) + 1, [len(table)]])

    snapshots = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            continue
        rows = table.iloc[lo:hi]
        t, kind, carrier = rows['time'].iloc[0], rows['kind'].iloc[0], rows['carrier'].iloc[0]
        x = rows['x'].to_numpy()
        dx = x[1] - x[0]
        grid = Grid1D(float(x[0]), float(x[0] + dx * len(x)), len(x))
        values = rows['Re'].to_numpy() + 1j * rows['Im'].to_numpy()
        snapshots.append((float(t), ComplexField(grid, values, float(carrier), FieldKind(kind))))
    return snapshots
