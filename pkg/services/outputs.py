"""
Result emission: CSV tables, JSON records and self-contained SVG plots.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from services.dynamics import SystemState
from services.errors import ConfigError, OutputError
from services.fields import CSV_VERSION, export_snapshot
from services.quantum_metrics import TransferResult
from services.units import SimConfig

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'json', 'svg')

TRANSFER_COLUMNS = list(TransferResult.model_fields.keys())
SWEEP_COLUMNS = ['kind', 'parameter', 'parameter2'] + TRANSFER_COLUMNS + [
    'converged', 'commutator', 'at_window_edge', 'error',
]

# Display magnification of the beam density; the probe gets an extra c / v
BEAM_MAGNIFICATION = 1000.0

SERIES_COLORS = ['#2563eb', '#ef4444', '#16a34a', '#9333ea', '#f59e0b', '#0891b2']


class SweepPointResult(BaseModel):
    """One row of a parameter sweep"""
    model_config = ConfigDict(extra='forbid')

    kind: str
    parameter: float
    parameter2: Optional[float] = None
    transfer: Optional[TransferResult] = None
    wall_time: float = 0.0  # logged only, never written to artefacts
    converged: bool = False
    commutator: Optional[float] = None
    at_window_edge: bool = False
    error: Optional[str] = None

    def row(self) -> Dict[str, Any]:
        row = {'kind': self.kind, 'parameter': self.parameter, 'parameter2': self.parameter2}
        transfer = self.transfer.model_dump() if self.transfer else {}
        row.update({key: transfer.get(key) for key in TRANSFER_COLUMNS})
        row.update({
            'converged': self.converged,
            'commutator': self.commutator,
            'at_window_edge': self.at_window_edge,
            'error': self.error,
        })
        return row


def resolve_formats(fmt: str) -> Tuple[str, ...]:
    if fmt == 'all':
        return FORMATS
    if fmt not in FORMATS:
        raise ConfigError(f"Unknown output format '{fmt}' (choose from {', '.join(FORMATS)} or all)")
    return (fmt,)


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise OutputError(f"Failed to write {path}: {e}", str(path))
    logger.info(f"💾 Wrote {path}")
    return path


def write_transfer_json(result: TransferResult, path: Union[str, Path],
                        metadata: Optional[Dict[str, Any]] = None) -> Path:
    record = {'transfer': result.model_dump(), 'metadata': metadata or {}}
    return _write_text(Path(path), json.dumps(record, indent=2, default=str))


def read_transfer_json(path: Union[str, Path]) -> TransferResult:
    try:
        record = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise OutputError(f"Failed to read {path}: {e}", str(path))
    return TransferResult.model_validate(record['transfer'])


def write_sweep_csv(points: Sequence[SweepPointResult], path: Union[str, Path]) -> Path:
    """One row per point in the given order; an empty sweep still carries the header"""
    path = Path(path)
    table = pd.DataFrame([p.row() for p in points], columns=SWEEP_COLUMNS)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as out:
            out.write(CSV_VERSION + '\n')
            table.to_csv(out, index=False, float_format='%.12g')
    except OSError as e:
        raise OutputError(f"Failed to write {path}: {e}", str(path))
    logger.info(f"💾 Wrote {path} ({len(points)} rows)")
    return path


def write_sweep_json(points: Sequence[SweepPointResult], path: Union[str, Path]) -> Path:
    return _write_text(Path(path), json.dumps([p.model_dump(exclude={'wall_time'}) for p in points], indent=2))


def write_json(payload: Dict[str, Any], path: Union[str, Path]) -> Path:
    return _write_text(Path(path), json.dumps(payload, indent=2, default=_json_default))


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


def _svg_escape(text: str) -> str:
    return (
        str(text).replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
        .replace("'", "&#39;")
    )


def render_tv_plane_svg(series: Dict[str, Sequence[Tuple[float, float]]], path: Union[str, Path],
                        title: str = 'Transfer quality on the T-V plane') -> Path:
    """Scatter of (T_q, V_q) per sweep with the T_q = 1 and V_q = 1 guide lines"""
    width, height = 720, 520
    left, right, top, bottom = 70, 170, 50, 60
    pw, ph = width - left - right, height - top - bottom

    v_values = [v for points in series.values() for _, v in points if v is not None and math.isfinite(v)]
    v_max = max([1.5] + [1.1 * v for v in v_values])

    def sx(t):
        return left + pw * t / 2.0

    def sy(v):
        return top + ph * (1 - v / v_max)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    parts.append('<rect width="100%" height="100%" fill="#ffffff"/>')
    parts.append(f'<text x="{left}" y="28" font-family="sans-serif" font-size="16">{_svg_escape(title)}</text>')
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="#9ca3af"/>')
    parts.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="#9ca3af"/>')

    for i in range(5):
        t = 0.5 * i
        parts.append(f'<text x="{sx(t):.2f}" y="{top + ph + 20}" font-family="sans-serif" font-size="11" '
                     f'text-anchor="middle">{t:.1f}</text>')
    for i in range(6):
        v = v_max * i / 5
        parts.append(f'<text x="{left - 8}" y="{sy(v) + 4:.2f}" font-family="sans-serif" font-size="11" '
                     f'text-anchor="end">{v:.2f}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 15}" font-family="sans-serif" font-size="13" '
                 f'text-anchor="middle">T_q</text>')
    parts.append(f'<text x="18" y="{top + ph / 2}" font-family="sans-serif" font-size="13">V_q</text>')

    parts.append(f'<line class="guide" x1="{sx(1):.2f}" y1="{top}" x2="{sx(1):.2f}" y2="{top + ph}" '
                 f'stroke="#6b7280" stroke-dasharray="6,4"/>')
    parts.append(f'<line class="guide" x1="{left}" y1="{sy(1):.2f}" x2="{left + pw}" y2="{sy(1):.2f}" '
                 f'stroke="#6b7280" stroke-dasharray="6,4"/>')

    for i, (name, points) in enumerate(series.items()):
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        parts.append(f'<g class="series" data-name="{_svg_escape(name)}" fill="{color}">')
        for t, v in points:
            if t is None or v is None:
                continue
            parts.append(f'<circle cx="{sx(t):.2f}" cy="{sy(min(v, v_max)):.2f}" r="4"/>')
        parts.append('</g>')
        ly = top + 10 + 22 * i
        parts.append(f'<circle cx="{left + pw + 20}" cy="{ly}" r="5" fill="{color}"/>')
        parts.append(f'<text x="{left + pw + 32}" y="{ly + 4}" font-family="sans-serif" font-size="12">{_svg_escape(name)}</text>')

    parts.append('</svg>')
    return _write_text(Path(path), '\n'.join(parts))


def render_snapshots_svg(snapshots: Sequence[SystemState], sim: SimConfig, path: Union[str, Path],
                         max_points: int = 2000) -> Path:
    """
    One panel per snapshot: condensate densities, the beam density magnified
    by 1000 and the probe intensity magnified by 1000 m c / (2 hbar k0).
    """
    panel_w, panel_h = 760, 170
    left, top, gap = 70, 40, 30
    width = left + panel_w + 30
    height = top + len(snapshots) * (panel_h + gap) + 20
    x0_mm = sim.scaling.x0 * 1e3
    probe_magnification = BEAM_MAGNIFICATION * sim.light_speed / sim.velocity

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    parts.append('<rect width="100%" height="100%" fill="#ffffff"/>')
    parts.append(f'<text x="{left}" y="24" font-family="sans-serif" font-size="15">'
                 f'Densities: condensates (grey), beam x{BEAM_MAGNIFICATION:g} (blue), '
                 f'probe x{probe_magnification:.3g} (red)</text>')

    for i, state in enumerate(snapshots):
        grid = state.grid
        stride = max(1, grid.n // max_points)
        x_mm = grid.x[::stride] * x0_mm
        curves = [
            (np.abs(state.phi_send.values[::stride]) ** 2 + np.abs(state.phi_recv.values[::stride]) ** 2, '#6b7280'),
            (BEAM_MAGNIFICATION * np.abs(state.psi.values[::stride]) ** 2, '#2563eb'),
            (probe_magnification * np.abs(state.physical_probe()[::stride]) ** 2, '#ef4444'),
        ]
        y_max = max(float(np.max(c)) for c, _ in curves) or 1.0
        y0 = top + i * (panel_h + gap)

        parts.append(f'<g class="snapshot" data-time="{state.t:.6g}">')
        parts.append(f'<line x1="{left}" y1="{y0 + panel_h}" x2="{left + panel_w}" y2="{y0 + panel_h}" stroke="#9ca3af"/>')
        t_ms = sim.scaling.to_si(state.t, 'time') * 1e3
        parts.append(f'<text x="{left + 4}" y="{y0 + 14}" font-family="sans-serif" font-size="12">'
                     f't = {t_ms:.3f} ms</text>')
        for values, color in curves:
            pts = ' '.join(
                f'{left + panel_w * (x - x_mm[0]) / (x_mm[-1] - x_mm[0]):.2f},{y0 + panel_h * (1 - y / y_max):.2f}'
                for x, y in zip(x_mm, values)
            )
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append('</g>')

    parts.append('</svg>')
    return _write_text(Path(path), '\n'.join(parts))


def format_loss_table(rows: Sequence[Tuple[str, str]]) -> str:
    """Two-column plain-text table for the CLI report"""
    key_width = max((len(k) for k, _ in rows), default=0)
    lines = ['-' * (key_width + 24)]
    lines += [f"{key.ljust(key_width)} | {value}" for key, value in rows]
    lines.append('-' * (key_width + 24))
    return '\n'.join(lines)


def emit_outputs(out_dir: Union[str, Path], formats: Iterable[str], *,
                 transfer: Optional[TransferResult] = None,
                 snapshots: Optional[Sequence[SystemState]] = None,
                 sim: Optional[SimConfig] = None,
                 sweeps: Optional[Dict[str, Sequence[SweepPointResult]]] = None,
                 losses: Optional[Dict[str, Any]] = None,
                 metadata: Optional[Dict[str, Any]] = None) -> List[Path]:
    """Write every requested artefact; returns the paths in write order"""
    out_dir = Path(out_dir)
    formats = set(formats)
    metadata = metadata or {}
    written: List[Path] = []

    if snapshots:
        fields, times = [], []
        for state in snapshots:
            for f in (state.psi, state.E.scaled(state.optical_scale), state.phi_send, state.phi_recv):
                fields.append(f)
                times.append(state.t)
        meta = {k: str(v) for k, v in metadata.items()}
        if 'csv' in formats:
            written.append(export_snapshot(fields, out_dir / 'snapshots.csv', times, meta))
        if 'json' in formats or 'csv' in formats:
            written.append(export_snapshot(fields, out_dir / 'snapshots.npz', times, meta))
        if 'svg' in formats and sim is not None:
            written.append(render_snapshots_svg(snapshots, sim, out_dir / 'fig3_snapshots.svg'))

    if transfer is not None and 'json' in formats:
        written.append(write_transfer_json(transfer, out_dir / 'transfer.json', metadata))

    if sweeps:
        for kind, points in sweeps.items():
            if 'csv' in formats:
                written.append(write_sweep_csv(points, out_dir / f'sweep_{kind}.csv'))
            if 'json' in formats:
                written.append(write_sweep_json(points, out_dir / f'sweep_{kind}.json'))
        if 'svg' in formats:
            series = {
                kind: [(p.transfer.T_q, p.transfer.V_q) for p in points if p.transfer is not None]
                for kind, points in sweeps.items()
            }
            written.append(render_tv_plane_svg(series, out_dir / 'tv_plane.svg'))

    if losses is not None and 'json' in formats:
        written.append(write_json(losses, out_dir / 'loss_budget.json'))

    return written
