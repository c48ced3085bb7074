"""
Description:
    Tests of the config parser and the array file helpers.

To-do:
"""
# third party imports
import numpy as np
import pytest

# local imports
from utils.config_parser import ConfigError, ConfigParser
from utils.utilities import load_arrays, save_arrays, sibling_path


def test_typed_getters(tmp_path):
    filepath = tmp_path / 'test.ini'
    filepath.write_text('[DEFAULT]\nname = walk\nn = 3\nflag = True\nrate = 0.5\n'
                        'items = a, b ,c\nvalues = 1, 2.5\n\n[extra]\nn = 4\n')
    configparser = ConfigParser(str(filepath))

    assert configparser.getstr('name') == 'walk'
    assert configparser.getint('n') == 3
    assert configparser.getint('n', section='extra') == 4
    assert configparser.getbool('flag') is True
    assert configparser.getfloat('rate') == 0.5
    assert configparser.get_str_list('items') == ['a', 'b', 'c']
    assert configparser.get_float_list('values') == [1.0, 2.5]
    assert configparser.getint('missing') is None

    configparser.overwrite('rate', 'fast')
    with pytest.raises(ConfigError):
        configparser.getfloat('rate')


def test_validate_keys(tmp_path):
    filepath = tmp_path / 'test.ini'
    filepath.write_text('[DEFAULT]\nout = x\n\n[stage]\nstep_size = 1\n')
    configparser = ConfigParser(str(filepath))

    configparser.validate_keys(['out'])
    configparser.validate_keys(['out', 'step_size'], section='stage')
    configparser.validate_keys(['out'], section='absent')

    with pytest.raises(ConfigError, match="'step_size'"):
        configparser.validate_keys(['out'], section='stage')
    with pytest.raises(ConfigError):
        ConfigParser(str(tmp_path / 'missing.ini'))


def test_array_file_round_trip(tmp_path):
    filepath = str(tmp_path / 'sub' / 'arrays.bin')
    arrays = [('a', np.arange(6).reshape(2, 3)), ('b', np.linspace(0, 1, 4)),
              ('flag', np.array([True, False]))]

    save_arrays(filepath, 'test', arrays, meta={'note': 'x'})
    loaded, meta = load_arrays(filepath, kind='test')

    assert list(loaded) == ['a', 'b', 'flag']
    assert np.array_equal(loaded['a'], arrays[0][1])
    assert loaded['a'].dtype == np.int64
    assert np.array_equal(loaded['b'], arrays[1][1])
    assert loaded['flag'].tolist() == [1, 0]
    assert meta == {'note': 'x'}

    with pytest.raises(ValueError):
        load_arrays(filepath, kind='other')


def test_sibling_path():
    assert sibling_path('out/walk.jsonl', '.bin') == 'out/walk.bin'
    assert sibling_path('walk', '_loss.csv') == 'walk_loss.csv'
