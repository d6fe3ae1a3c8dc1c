import csv
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
import ablate
import train
from environments.datasets import DatasetError
from generate_data import generate_split
from networks import tensor as T
from rpcl_detector import RpclDetector
from utilities import loader
from utilities.config import load_config

IMAGE_SIZE = 32


@pytest.fixture(scope='module')
def data(tmp_path_factory):
    root = str(tmp_path_factory.mktemp('shapes'))
    source_train, _ = generate_split(0, 6, 2, 'source', root, IMAGE_SIZE)
    target_train, target_test = generate_split(1, 6, 3, 'target', root, IMAGE_SIZE)
    return {'source_train': source_train, 'target_train': target_train,
            'target_test': target_test}


def _params(data, output_dir, *overrides):
    return load_config(overrides=[
        f'dataset.source_train={data["source_train"]!r}',
        f'dataset.target_train={data["target_train"]!r}',
        f'dataset.target_test={data["target_test"]!r}',
        f'output_dir={str(output_dir)!r}',
        'optimization.steps=3',
        'evaluation.interval=2',
        'evaluation.workers=1',
        'networks.top_k=4',
        'logging.tensorboard=False',
    ] + list(overrides))


def _read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def _metrics_rows(output_dir):
    with open(os.path.join(output_dir, 'metrics.csv'), newline='') as f:
        return list(csv.DictReader(f))


def test_active_tasks():
    params = load_config(overrides=['tasks.enable_cl=False', 'weights.lambda1=0.0'])
    assert train.active_tasks(params) == {'det': True, 'uda': True, 'rp': False, 'cl': False}


def test_zero_steps_writes_initial_model(data, tmp_path):
    params = _params(data, tmp_path, 'optimization.steps=0')
    result = train.train(params)
    assert result.target_map is None
    assert _metrics_rows(str(tmp_path)) == []
    for name in (train.CHECKPOINT_FILENAME, train.CONFIG_FILENAME, train.PREDICTIONS_FILENAME):
        assert os.path.isfile(os.path.join(str(tmp_path), name))
    restored = RpclDetector().load(os.path.join(str(tmp_path), train.CHECKPOINT_FILENAME))
    initial = loader.load_detector(params)
    for name, param in initial.named_parameters():
        assert np.array_equal(param.values, restored.parameters()[name].values)


def test_training_is_deterministic(data, tmp_path):
    runs = []
    for run in ('a', 'b'):
        result = train.train(_params(data, tmp_path / run))
        runs.append(result.output_dir)
        assert 0 <= result.target_map <= 1
    assert _read_bytes(os.path.join(runs[0], 'metrics.csv')) == \
        _read_bytes(os.path.join(runs[1], 'metrics.csv'))
    assert _read_bytes(os.path.join(runs[0], train.CHECKPOINT_FILENAME)) == \
        _read_bytes(os.path.join(runs[1], train.CHECKPOINT_FILENAME))

    rows = _metrics_rows(runs[0])
    assert [row['step'] for row in rows] == ['1', '2', '3']
    # Evaluated every 2 steps and at the last step
    assert [row['target_map'] != '' for row in rows] == [False, True, True]
    for row in rows:
        weighted = float(row['l_det']) + 0.1 * (float(row['l_uda']) + float(row['l_rp'])
                                                + float(row['l_cl']))
        assert np.isclose(float(row['total']), weighted)


def test_source_only_never_reads_target(data, tmp_path):
    missing = str(tmp_path / 'missing' / 'train.json')
    params = _params(data, tmp_path / 'run', f'dataset.target_train={missing!r}',
                     'tasks.enable_uda=False', 'tasks.enable_rp=False', 'tasks.enable_cl=False')
    train.train(params)
    rows = _metrics_rows(str(tmp_path / 'run'))
    assert all(float(row[k]) == 0 for row in rows for k in ('l_uda', 'l_rp', 'l_cl'))

    params['tasks']['enable_uda'] = True
    with pytest.raises(DatasetError):
        train.train(params)


def test_disabled_flag_equals_zero_weight(data, tmp_path):
    flag = train.train(_params(data, tmp_path / 'flag', 'tasks.enable_rp=False'))
    weight = train.train(_params(data, tmp_path / 'weight', 'weights.lambda1=0.0'))
    for name in ('metrics.csv', train.CHECKPOINT_FILENAME):
        assert _read_bytes(os.path.join(flag.output_dir, name)) == \
            _read_bytes(os.path.join(weight.output_dir, name))


@pytest.mark.parametrize('overrides', [
    ('tasks.rotation_proposals="original"',),
    ('tasks.rotation_mode="ImgRot"', 'tasks.enable_det=False'),
    ('networks.dtype="float32"',),
])
def test_training_variants_run(data, tmp_path, overrides):
    params = _params(data, tmp_path, 'optimization.steps=1', *overrides)
    try:
        result = train.train(params)
    finally:
        T.set_default_dtype('float64')
    assert len(_metrics_rows(result.output_dir)) == 1


def test_divergence_is_reported(data, tmp_path, monkeypatch):
    monkeypatch.setattr(train, 'detection_loss', lambda *args: T.Tensor(np.inf))
    with pytest.raises(train.TrainingDivergedError) as info:
        train.train(_params(data, tmp_path))
    assert info.value.step == 1


def test_nothing_to_train(data, tmp_path):
    params = _params(data, tmp_path, 'tasks.enable_det=False', 'weights.alpha=0.0',
                     'tasks.enable_rp=False', 'tasks.enable_cl=False')
    with pytest.raises(ValueError):
        train.RpclTrainer(params)


def test_missing_source_split(data, tmp_path):
    params = _params(data, tmp_path, 'dataset.source_train=None')
    with pytest.raises(DatasetError, match='source_train'):
        train.RpclTrainer(params)


def test_shuffled_cycle_visits_every_index():
    cycle = loader.ShuffledCycle(5, np.random.default_rng(0))
    for _ in range(3):
        assert sorted(cycle.next() for _ in range(5)) == list(range(5))
    with pytest.raises(DatasetError):
        loader.ShuffledCycle(0, np.random.default_rng(0))


def _fake_train(failing=()):
    def train_fn(params):
        tasks = params['tasks']
        if any(tasks[f'enable_{t}'] for t in failing):
            raise RuntimeError('boom')
        score = 0.1 * sum(tasks[k] for k in ('enable_uda', 'enable_rp', 'enable_cl'))
        return train.TrainResult(None, score + 0.01 * params['seed'], params['output_dir'])
    return train_fn


def test_ablation_grid(tmp_path):
    base = load_config(overrides=[f'output_dir={str(tmp_path)!r}'])
    rows = ablate.ablate(base, seeds=[0, 1], train_fn=_fake_train())
    assert len(rows) == len(ablate.VARIANTS) * 3
    medians = {r.name: r.target_map for r in rows if r.seed == 'median'}
    assert np.isclose(medians['source-only'], 0.005)
    assert np.isclose(medians['+RP+CL'], 0.305)
    with open(os.path.join(str(tmp_path), 'ablation.csv')) as f:
        assert len(f.read().splitlines()) == 1 + len(rows)
    with open(os.path.join(str(tmp_path), 'ablation_summary.csv')) as f:
        assert len(f.read().splitlines()) == 1 + len(ablate.VARIANTS)


def test_ablation_records_failed_runs(tmp_path):
    base = load_config(overrides=[f'output_dir={str(tmp_path)!r}'])
    with pytest.warns(UserWarning, match='failed'):
        rows = ablate.ablate(base, seeds=[3], variants=['source-only', '+CL'],
                             train_fn=_fake_train(failing=('cl',)))
    assert [r.status for r in rows] == ['ok', 'failed: RuntimeError', 'ok', 'no results']
    with pytest.raises(KeyError):
        ablate.ablate(base, variants=['+XYZ'], train_fn=_fake_train())


def test_variant_params_share_the_seed():
    base = load_config()
    dirs = set()
    for variant in ablate.VARIANTS:
        params = ablate.variant_params(base, variant, 4)
        assert params['seed'] == 4
        dirs.add(params['output_dir'])
    assert len(dirs) == len(ablate.VARIANTS)
    assert ablate.variant_params(base, '+ImgRot', 0)['tasks']['rotation_mode'] == 'ImgRot'
    assert base['tasks']['rotation_mode'] == 'PropRot'


def test_sweep(tmp_path):
    base = load_config(overrides=[f'output_dir={str(tmp_path)!r}'])
    seen = []

    def train_fn(params):
        seen.append((params['weights']['lambda1'], params['weights']['lambda2']))
        return train.TrainResult(None, 0.5, params['output_dir'])
    rows = ablate.sweep(base, seeds=[0], train_fn=train_fn)
    assert len(seen) == 10
    assert (0.5, 0.1) in seen and (0.1, 0.0) in seen
    assert len(rows) == 20
    assert os.path.isfile(os.path.join(str(tmp_path), 'sweep.csv'))
