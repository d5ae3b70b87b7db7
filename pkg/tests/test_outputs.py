import json
import xml.etree.ElementTree as ET
from pathlib import Path

import pandas as pd
import pytest

from services.errors import ConfigError, OutputError
from services.fields import CSV_VERSION, load_snapshot
from services.outputs import (
    SWEEP_COLUMNS,
    SweepPointResult,
    emit_outputs,
    format_loss_table,
    read_transfer_json,
    render_tv_plane_svg,
    resolve_formats,
    write_sweep_csv,
    write_sweep_json,
    write_transfer_json,
)
from services.quantum_metrics import GaussianMode, TransferResult, transfer_metrics

SCHEMA = Path(__file__).resolve().parent.parent / 'config' / 'transfer_result.schema.json'


@pytest.fixture
def transfer():
    mode = GaussianMode(mean_X=100.0, mean_Y=0.0, V_X=0.14, V_Y=7.39)
    return transfer_metrics(mode, 0.9216, translation_m=3.1e-4)


@pytest.fixture
def points(transfer):
    return [
        SweepPointResult(kind='rabi', parameter=0.66, transfer=transfer, converged=True, commutator=1.0,
                         wall_time=2.5),
        SweepPointResult(kind='rabi', parameter=1.0, error='GuardTripError: boundary'),
    ]


def test_resolve_formats():
    assert resolve_formats('all') == ('csv', 'json', 'svg')
    assert resolve_formats('svg') == ('svg',)
    with pytest.raises(ConfigError):
        resolve_formats('png')


class TestTransferRecord:
    def test_json_round_trip(self, transfer, tmp_path):
        path = write_transfer_json(transfer, tmp_path / 'transfer.json', {'species': 'Rb87'})
        assert read_transfer_json(path) == transfer
        assert json.loads(path.read_text())['metadata'] == {'species': 'Rb87'}

    def test_schema_matches_model(self):
        schema = json.loads(SCHEMA.read_text())
        assert set(schema['properties']) == set(TransferResult.model_fields)
        required = {name for name, info in TransferResult.model_fields.items() if info.is_required()}
        assert set(schema['required']) == required

    def test_unreadable_record(self, tmp_path):
        bad = tmp_path / 'bad.json'
        bad.write_text('{not json')
        with pytest.raises(OutputError):
            read_transfer_json(bad)


class TestSweepTables:
    def test_empty_sweep_keeps_header(self, tmp_path):
        path = write_sweep_csv([], tmp_path / 'sweep.csv')
        lines = path.read_text().splitlines()
        assert lines == [CSV_VERSION, ','.join(SWEEP_COLUMNS)]

    def test_rows_in_order(self, points, tmp_path):
        path = write_sweep_csv(points, tmp_path / 'sweep.csv')
        table = pd.read_csv(path, comment='#')
        assert list(table.columns) == SWEEP_COLUMNS
        assert list(table['parameter']) == [0.66, 1.0]
        assert table['eta'].iloc[0] == pytest.approx(0.9216)
        assert pd.isna(table['eta'].iloc[1])
        assert table['error'].iloc[1].startswith('GuardTripError')

    def test_timing_stays_out_of_artefacts(self, points, tmp_path):
        csv_text = write_sweep_csv(points, tmp_path / 'sweep.csv').read_text()
        records = json.loads(write_sweep_json(points, tmp_path / 'sweep.json').read_text())
        assert 'wall_time' not in csv_text
        assert all('wall_time' not in r for r in records)
        assert records[0]['transfer']['eta'] == pytest.approx(0.9216)

    def test_write_into_a_file_path(self, points, tmp_path):
        blocker = tmp_path / 'blocker'
        blocker.write_text('')
        with pytest.raises(OutputError):
            write_sweep_csv(points, blocker / 'sweep.csv')


def test_tv_plane_has_one_series_per_sweep(tmp_path):
    series = {'rabi': [(1.2, 0.3), (1.5, 0.1)], 'dn': [(0.9, 0.6)]}
    svg = render_tv_plane_svg(series, tmp_path / 'tv.svg').read_text()
    assert svg.startswith('<svg')
    assert svg.count('<g class="series"') == 2
    assert svg.count('class="guide"') == 2
    assert 'data-name="dn"' in svg


def test_tv_plane_escapes_labels(tmp_path):
    name = 'rabi <0.66 & "1.33">'
    path = render_tv_plane_svg({name: [(1.2, 0.3)]}, tmp_path / 'tv.svg', title="T & V <sweep>")
    root = ET.parse(path).getroot()
    ns = {'svg': 'http://www.w3.org/2000/svg'}
    assert root.find('svg:g[@class="series"]', ns).get('data-name') == name
    assert [t.text for t in root.findall('svg:text', ns)][0] == 'T & V <sweep>'


def test_loss_table():
    table = format_loss_table([('species', 'Rb87'), ('eta_loss', '0.04')])
    assert 'species  | Rb87' in table
    assert table.splitlines()[0] == table.splitlines()[-1]


def test_emit_outputs_for_a_transfer(fast_run, out_dir):
    written = emit_outputs(out_dir, ('csv', 'json', 'svg'), transfer=fast_run.transfer,
                           snapshots=fast_run.snapshots, sim=fast_run.sim, metadata={'species': 'Rb87'})
    names = {p.name for p in written}
    assert names == {'snapshots.csv', 'snapshots.npz', 'fig3_snapshots.svg', 'transfer.json'}

    loaded = load_snapshot(out_dir / 'snapshots.npz')
    assert len(loaded) == 4 * len(fast_run.snapshots)
    assert read_transfer_json(out_dir / 'transfer.json') == fast_run.transfer
    assert (out_dir / 'fig3_snapshots.svg').read_text().count('class="snapshot"') == len(fast_run.snapshots)


def test_emit_outputs_for_sweeps(points, out_dir):
    written = emit_outputs(out_dir, ('json',), sweeps={'rabi': points}, losses={'species': 'Rb87'})
    assert {p.name for p in written} == {'sweep_rabi.json', 'loss_budget.json'}
