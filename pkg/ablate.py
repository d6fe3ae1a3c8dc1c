"""Ablation grid over the auxiliary tasks and the lambda sensitivity sweep.

Every variant of a seed shares that seed, so the data sampling order, rotation draws and
augmentation draws are identical across variants.
"""
import copy
import csv
import os
import warnings
from collections import OrderedDict, namedtuple

from utilities.statistics import mean_confidence_interval, median

VARIANTS = OrderedDict([
    ('source-only', {'enable_uda': False, 'enable_rp': False, 'enable_cl': False}),
    ('uda-only', {'enable_uda': True, 'enable_rp': False, 'enable_cl': False}),
    ('+RP', {'enable_uda': True, 'enable_rp': True, 'enable_cl': False}),
    ('+CL', {'enable_uda': True, 'enable_rp': False, 'enable_cl': True}),
    ('+RP+CL', {'enable_uda': True, 'enable_rp': True, 'enable_cl': True}),
    ('+ImgRot', {'enable_uda': True, 'enable_rp': True, 'enable_cl': False,
                 'rotation_mode': 'ImgRot'}),
])
VARIANT_DIRS = {'source-only': 'source_only', 'uda-only': 'uda_only', '+RP': 'rp', '+CL': 'cl',
                '+RP+CL': 'rp_cl', '+ImgRot': 'imgrot'}

RunResult = namedtuple('RunResult', ['name', 'seed', 'target_map', 'status'])


def variant_params(base_params, variant, seed):
    """Resolved config of one ablation run; variants only switch tasks (and the rotation mode)."""
    params = copy.deepcopy(base_params)
    params['tasks'].update(VARIANTS[variant])
    params['seed'] = seed
    params['experiment_id'] = f'{base_params["experiment_id"]}_{VARIANT_DIRS[variant]}_{seed}'
    params['output_dir'] = os.path.join(base_params['output_dir'], VARIANT_DIRS[variant],
                                        f'seed_{seed}')
    return params


def _run(train_fn, name, params):
    try:
        result = train_fn(params)
    except Exception as e:  # A failing run is recorded and the grid continues
        warnings.warn(f'Run {name} (seed {params["seed"]}) failed: {e}')
        return RunResult(name, params['seed'], None, f'failed: {type(e).__name__}')
    return RunResult(name, params['seed'], result.target_map, 'ok')


def _medians(results, names):
    rows = []
    for name in names:
        maps = [r.target_map for r in results if r.name == name and r.target_map is not None]
        rows.append(RunResult(name, 'median', median(maps) if maps else None,
                              'ok' if maps else 'no results'))
    return rows


def _write_rows(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(['' if v is None else (repr(v) if isinstance(v, float) else v)
                             for v in row])


def write_summary(path, results, names):
    """Mean and 95% confidence half-width of the target mAP of every variant."""
    rows = []
    for name in names:
        maps = [r.target_map for r in results if r.name == name and r.target_map is not None]
        if maps:
            mean, half_width = mean_confidence_interval(maps)
            rows.append((name, len(maps), mean, half_width))
        else:
            rows.append((name, 0, None, None))
    _write_rows(path, ['variant', 'n', 'mean_target_map', 'ci95_half_width'], rows)


def ablate(base_params, seeds=None, variants=None, train_fn=None):
    """Run the variant grid and write ablation.csv and ablation_summary.csv.

    Args:
        base_params (dict): Resolved base configuration.
        seeds (list, optional): Defaults to base_params['ablation']['seeds'].
        variants (list, optional): Variant names; defaults to all of VARIANTS.
        train_fn (callable, optional): params -> TrainResult; defaults to train.train.

    Returns:
        (list): RunResult rows, one per (variant, seed), followed by one median row per variant.
    """
    if train_fn is None:
        from train import train as train_fn
    seeds = base_params['ablation']['seeds'] if seeds is None else seeds
    variants = list(VARIANTS) if variants is None else variants
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise KeyError(f'Unknown variants {unknown}. Available variants are: '
                       + ' '.join(VARIANTS))
    results = []
    for seed in seeds:
        for variant in variants:
            print(f'Ablation: {variant}, seed {seed}')
            results.append(_run(train_fn, variant, variant_params(base_params, variant, seed)))
    rows = results + _medians(results, variants)
    output_dir = base_params['output_dir']
    _write_rows(os.path.join(output_dir, 'ablation.csv'),
                ['variant', 'seed', 'target_map', 'status'], rows)
    write_summary(os.path.join(output_dir, 'ablation_summary.csv'), results, variants)
    return rows


def sweep(base_params, seeds=None, train_fn=None):
    """Sensitivity of the full method to lambda1 and lambda2, varied one at a time.

    Returns:
        (list): (parameter, value, seed, target_map, status) rows followed by median rows.
    """
    if train_fn is None:
        from train import train as train_fn
    seeds = base_params['ablation']['seeds'] if seeds is None else seeds
    runs = [('lambda1', v) for v in base_params['sweep']['lambda1_values']] + \
        [('lambda2', v) for v in base_params['sweep']['lambda2_values']]
    results = []
    for parameter, value in runs:
        for seed in seeds:
            params = variant_params(base_params, '+RP+CL', seed)
            params['weights'][parameter] = value
            params['output_dir'] = os.path.join(base_params['output_dir'], 'sweep',
                                                f'{parameter}_{value}', f'seed_{seed}')
            print(f'Sweep: {parameter}={value}, seed {seed}')
            results.append(_run(train_fn, (parameter, value), params))
    names = list(OrderedDict.fromkeys(runs))
    rows = [(r.name[0], r.name[1], r.seed, r.target_map, r.status)
            for r in results + _medians(results, names)]
    _write_rows(os.path.join(base_params['output_dir'], 'sweep.csv'),
                ['parameter', 'value', 'seed', 'target_map', 'status'], rows)
    return rows
