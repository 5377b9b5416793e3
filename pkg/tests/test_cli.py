import json
import os

import pytest

from ebsdcs import read_map, read_mask, read_results
from ebsdcs.cli import main

def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err

def summary(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out.strip().splitlines()[-1])

def test_full_workflow(tmp_path, capsys):
    out = str(tmp_path)
    info = summary(capsys, '--out', out, '--seed', '4', '--quiet', 'phantom', '--height', '24', '--width', '24', '--grains', '3')
    assert info == {'grains': 3, 'height': 24, 'width': 24}
    phantom = os.path.join(out, 'phantom.json')
    reference = os.path.join(out, 'ipf.ppm')
    assert read_map(reference).map.grid.shape == (24, 24)

    info = summary(capsys, '--out', out, '--seed', '1', '--quiet', 'mask', '--phantom', phantom, '--rate', '0.5')
    assert info['sampled'] == 288
    mask = os.path.join(out, 'mask.json')

    info = summary(capsys, '--out', out, '--quiet', 'synth', '--phantom', phantom, '--mask', mask)
    assert info['patterns'] == 288
    assert info['pattern_shape'] == [48, 64]

    info = summary(capsys, '--out', out, '--quiet', 'noise', '--stack', os.path.join(out, 'stack.ebcs'), '--mask', mask, '--kind', 'none')
    assert info['measured_snr_db'] is None

    indexed = os.path.join(out, 'indexed')
    info = summary(capsys, '--out', indexed, '--quiet', '--threads', '2', 'index', '--stack', os.path.join(out, 'noisy.ebcs'), '--mask', mask, '--phantom', phantom)
    assert info['zsp'] == 0
    assert info['hit_rate'] == pytest.approx(1.0)
    indexed_mask = read_mask(os.path.join(indexed, 'indexed_mask.json'))
    assert indexed_mask.count == 288

    ipf = os.path.join(indexed, 'ipf.ppm')
    info = summary(capsys, '--out', out, '--quiet', 'inpaint', '--map', ipf, '--mask', mask, '--patch', '4', '4', '--reimpose')
    assert info['sampled'] == 288
    assert info['map'] == os.path.join(out, 'inpainted.ppm')

    info = summary(capsys, '--out', out, '--quiet', 'metrics', '--ref', reference, '--est', os.path.join(out, 'inpainted.ppm'), '--mask', os.path.join(indexed, 'indexed_mask.json'))
    assert 0.0 <= info['normalized_error'] < 1.0
    assert info['hit_rate'] == 1.0

def test_noise_command(tmp_path, capsys):
    out = str(tmp_path)
    summary(capsys, '--out', out, '--quiet', 'phantom', '--height', '12', '--width', '12', '--grains', '2')
    summary(capsys, '--out', out, '--quiet', 'synth', '--phantom', os.path.join(out, 'phantom.json'))
    info = summary(
        capsys, '--out', out, '--quiet', 'noise',
        '--stack', os.path.join(out, 'stack.ebcs'),
        '--mask', os.path.join(out, 'stack_mask.json'),
        '--kind', 'gaussian', '--snr', '5',
    )
    assert info['measured_snr_db'] == pytest.approx(5.0, abs=0.5)

def test_experiment_command(tmp_path, capsys):
    config = tmp_path / 'config.yaml'
    config.write_text(
        'phantom: {height: 24, width: 24, n_grains: 3}\n'
        'bpfa: {K: 6, s: 2}\n'
        'map_kinds: [ipf]\n'
    )
    out = str(tmp_path / 'run')
    info = summary(
        capsys, '--config', str(config), '--out', out, '--seed', '2', '--quiet',
        'sweep', '--rates', '0.5', '--noise-kinds', 'poisson', '--snrs', '5', '--no-noiseless',
    )
    assert info['rows'] == 1
    rows = read_results(info['csv'])
    assert rows[0].seed == 2 and rows[0].noise_kind == 'poisson' and rows[0].rate == 0.5

def test_error_contract(tmp_path, capsys):
    code, out, err = run(capsys, '--out', str(tmp_path), 'metrics', '--ref', str(tmp_path / 'missing.pgm'), '--est', str(tmp_path / 'missing.pgm'))
    assert code == 1
    assert out == ''
    assert err.startswith('error: ')
    payload = json.loads(err[len('error: '):])
    assert payload['type'] == 'FileNotFoundError'

    code, _, err = run(capsys, '--out', str(tmp_path), 'mask', '--rate', '0.1')
    assert code == 1
    assert json.loads(err[len('error: '):])['type'] == 'InvalidArgument'

    code, _, err = run(capsys, '--out', str(tmp_path), 'mask', '--height', '4', '--width', '4', '--rate', '2')
    assert code == 1

    code, _, err = run(capsys, '--threads', '0', 'mask', '--height', '4', '--width', '4', '--rate', '0.5')
    assert code == 1

def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(['noise', '--stack', 'x'])
    assert e.value.code == 2
