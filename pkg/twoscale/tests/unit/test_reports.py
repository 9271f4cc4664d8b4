import json
import os

import numpy as np
import pandas as pd
import pytest

from twoscale.src.harness.report import ConvergenceReport
from twoscale.src.scripts.reports import read_frame, sha256_of, write_frame, write_manifest, write_report
from twoscale.src.utils.profiling import profiled


@pytest.fixture
def report():
    records = [{'eps': 1 / 3, 'value': np.float64(0.1) + 0.2, 'limit': 0.3, 'gap': 5.551115123125783e-17,
                'quad_stability': 1e-9, 'pass': True, 'functional': 'scaled:sin(2*pi*y)', 'iterations': 2,
                'residual': 1e-13, 'status': 'ok', 'message': ''}]
    return ConvergenceReport.from_records('scaled_pairing', records, {'p': 2.0}, {'rows_ok': True})


def test_csv_is_byte_stable_and_round_trips(tmp_path, report):
    first = write_report(report, 'csv', str(tmp_path / 'a.csv'))
    second = write_report(report, 'csv', str(tmp_path / 'b.csv'))
    assert open(first, 'rb').read() == open(second, 'rb').read()
    back = read_frame(first)
    assert back['eps'].iloc[0] == 1 / 3
    assert back['value'].iloc[0] == 0.1 + 0.2
    assert list(back.columns[:6]) == ['eps', 'value', 'limit', 'gap', 'quad_stability', 'pass']


def test_json_report(tmp_path, report):
    path = write_report(report, 'json', str(tmp_path / 'r.json'))
    payload = json.loads(open(path, encoding='utf-8').read())
    assert payload['study'] == 'scaled_pairing'
    assert payload['passed'] is True
    assert payload['rows'][0]['value'] == 0.1 + 0.2


def test_unknown_format(tmp_path, report):
    with pytest.raises(ValueError):
        write_report(report, 'xlsx', str(tmp_path / 'r.xlsx'))


def test_read_missing_frame(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_frame(str(tmp_path / 'missing.csv'))


def test_manifest_hashes_artifacts(tmp_path):
    art = write_frame(pd.DataFrame({'x': [0.0, 0.5], 'u': [0.0, 0.125]}), str(tmp_path / 'u.csv'))
    path = write_manifest(str(tmp_path), 'solve-eps', {'problem': {'p': 2.0}}, 'abc', ['problem.p=2'],
                          {'converged': True}, [art])
    manifest = json.loads(open(path, encoding='utf-8').read())
    assert manifest['command'] == 'solve-eps'
    assert manifest['passed'] is True
    assert manifest['artifacts'] == {'u.csv': sha256_of(art)}
    assert 'utc' not in manifest
    assert not [f for f in os.listdir(tmp_path) if f.startswith('.tmp-')]


def test_failed_write_leaves_no_temporary_file(tmp_path, report, monkeypatch):
    def refuse(src, dst):
        raise PermissionError(13, 'read-only target')
    monkeypatch.setattr(os, 'replace', refuse)
    with pytest.raises(OSError, match='Cannot write'):
        write_report(report, 'csv', str(tmp_path / 'r.csv'))
    assert os.listdir(tmp_path) == []


def test_profiled_block_reports_even_when_it_raises():
    with profiled('ok') as run:
        sum(range(1000))
    assert run.elapsed >= 0.0
    assert 'function calls' in run.stats
    with pytest.raises(RuntimeError):
        with profiled('boom') as failed:
            raise RuntimeError('boom')
    assert failed.stats
