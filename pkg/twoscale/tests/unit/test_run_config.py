import pytest

from twoscale.src.errors import ConfigError
from twoscale.src.ingestion.run_config import load_run_config, parse_override


@pytest.fixture
def ini(tmp_path):
    def write(text):
        path = tmp_path / 'run.ini'
        path.write_text(text, encoding='utf-8')
        return str(path)
    return write


def test_defaults_without_file():
    cfg, overrides = load_run_config()
    assert overrides == []
    assert cfg.problem.p == 2.0
    assert cfg.grids.eps == [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    assert cfg.study.studies == ['limit']


def test_file_values_and_fractions(ini):
    path = ini("[problem]\np = 3\nxi = 1/2, -1\n\n[grids]\neps = 1/4, 1/8  # two values\n\n"
               "[study]\nstudies = limit, apriori\nphi2 = trig(0, 1, 1); cos(2*pi*y)\n")
    cfg, _ = load_run_config(path)
    assert cfg.problem.p == 3.0
    assert cfg.problem.xi == [0.5, -1.0]
    assert cfg.grids.eps == [0.25, 0.125]
    assert cfg.study.studies == ['limit', 'apriori']
    assert cfg.study.phi2 == ['trig(0, 1, 1)', 'cos(2*pi*y)']


def test_overrides_win_over_file(ini):
    path = ini("[problem]\np = 3\n")
    cfg, overrides = load_run_config(path, ['problem.p=4', 'output.format=json'])
    assert cfg.problem.p == 4.0
    assert cfg.output.format == 'json'
    assert overrides == ['problem.p=4', 'output.format=json']


def test_invalid_value_names_its_line(ini):
    path = ini("[problem]\nd = 1\np = 1.5\n")
    with pytest.raises(ConfigError, match=r'problem\.p \(line 3\)'):
        load_run_config(path)


def test_invalid_override_is_flagged(ini):
    with pytest.raises(ConfigError, match=r'--set'):
        load_run_config(None, ['grids.n=1'])


@pytest.mark.parametrize('text', ["[nope]\nx = 1\n", "[problem]\nq = 2\n", "[study]\nstudies = limit, other\n",
                                  "[grids]\neps = 0.3, abc\n", "[study]\nansatz = full\n"])
def test_rejected_configs(ini, text):
    with pytest.raises(ConfigError):
        load_run_config(ini(text))


def test_missing_file():
    with pytest.raises(ConfigError):
        load_run_config('/nonexistent/run.ini')


def test_parse_override():
    assert parse_override('fields.a = trig(2, 1, 1)') == ('fields', 'a', 'trig(2, 1, 1)')
    with pytest.raises(ConfigError):
        parse_override('p=3')


def test_spec_hash_is_stable(ini):
    first, _ = load_run_config(ini("[problem]\np = 3\n"))
    second, _ = load_run_config(None, ['problem.p=3.0'])
    assert first.spec_hash() == second.spec_hash()
    third, _ = load_run_config(None, ['problem.p=3.5'])
    assert third.spec_hash() != first.spec_hash()
