"""Command-line entry point: rpcl {gen-data, train, eval, ablate, sweep, gradcheck, plot}.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
import argparse
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_args(parser, seed_nargs=None):
    parser.add_argument(
        '--config', action='store', type=str, required=False,
        help='Path to a YAML or JSON configuration file merged over '
             'experiment_params/train_config_default.yaml.'
    )
    parser.add_argument(
        '--seed', action='store', type=int, nargs=seed_nargs, required=True,
        help='Master seed' + (' (one or more).' if seed_nargs else '.')
    )
    parser.add_argument(
        '--params', action='store', nargs='+', required=False,
        help='Override one or more parameters in the config. The format of an argument is '
             'param_name=param_value. Nested parameters are accessible by using a dot, '
             'i.e. --params weights.lambda1=0.2. Lists must be quoted, i.e. '
             '--params "ablation.seeds=[0, 1]".'
    )
    parser.add_argument('--output-dir', action='store', type=str, required=False,
                        help='Overrides output_dir of the config.')
    parser.add_argument('--steps', action='store', type=int, required=False,
                        help='Overrides optimization.steps of the config.')
    parser.add_argument('--source-train', action='store', type=str, required=False,
                        help='Source train index file.')
    parser.add_argument('--target-train', action='store', type=str, required=False,
                        help='Target train index file (annotations are never read).')
    parser.add_argument('--target-test', action='store', type=str, required=False,
                        help='Target test index file used for evaluation.')


def build_parser():
    parser = _ArgumentParser(prog='rpcl', description=__doc__.splitlines()[0])
    subparsers = parser.add_subparsers(dest='command', required=True,
                                       parser_class=_ArgumentParser)

    gen = subparsers.add_parser('gen-data', help='Generate the synthetic source/target splits.')
    gen.add_argument('--config', type=str, required=False,
                     help='Dataset config merged over experiment_params/dataset_default.yaml.')
    gen.add_argument('--seed', type=int, required=False)
    gen.add_argument('--root', type=str, required=False, help='Output folder.')
    gen.add_argument('--domain', choices=('source', 'target', 'both'), required=False)
    gen.add_argument('--n-train', type=int, required=False)
    gen.add_argument('--n-test', type=int, required=False)
    gen.add_argument('--image-size', type=int, required=False)

    train_parser = subparsers.add_parser('train', help='Train a detector.')
    _add_config_args(train_parser)
    train_parser.add_argument('--load', type=str, required=False,
                              help='Checkpoint to warm-start from.')

    evaluate = subparsers.add_parser('eval', help='Compute per-class AP and mAP.')
    evaluate.add_argument('--predictions', type=str, required=True,
                          help='JSON-lines predictions file.')
    evaluate.add_argument('--index', type=str, required=True,
                          help='Ground-truth index file of the evaluated split.')
    evaluate.add_argument('--output', type=str, required=False,
                          help='Results CSV; defaults to eval.csv next to the predictions.')

    for name, help_text in (('ablate', 'Run the task ablation grid.'),
                            ('sweep', 'Run the lambda1/lambda2 sensitivity sweep.')):
        sub = subparsers.add_parser(name, help=help_text)
        _add_config_args(sub, seed_nargs='+')
    subparsers.choices['ablate'].add_argument(
        '--variants', nargs='+', required=False, help='Subset of variants to run.')

    gradcheck = subparsers.add_parser('gradcheck', help='Finite-difference gradient suite.')
    gradcheck.add_argument('--seed', type=int, default=0)
    gradcheck.add_argument('--entries', type=int, default=6,
                           help='Checked entries per parameter tensor.')

    plot = subparsers.add_parser('plot', help='Plot curves from a metrics CSV.')
    plot.add_argument('--metrics', type=str, required=False, help='metrics.csv of a run.')
    plot.add_argument('--output-dir', type=str, required=False,
                      help='Folder for the images; defaults to the metrics folder.')
    plot.add_argument('--detections', type=str, required=False,
                      help='Predictions file to draw on test images (needs --index).')
    plot.add_argument('--index', type=str, required=False, help='Index of the test split.')
    plot.add_argument('--n-images', type=int, default=8)
    plot.add_argument('--score-threshold', type=float, default=0.5)
    return parser


def _resolve_train_config(args, seed):
    from utilities.config import load_config
    overrides = list(args.params or [])
    overrides.append(f'seed={seed}')
    for flag, key in ((args.output_dir, 'output_dir'), (args.source_train, 'dataset.source_train'),
                      (args.target_train, 'dataset.target_train'),
                      (args.target_test, 'dataset.target_test')):
        if flag is not None:
            overrides.append(f'{key}={flag!r}')
    if args.steps is not None:
        overrides.append(f'optimization.steps={args.steps}')
    if getattr(args, 'load', None) is not None:
        overrides.append(f'load_path={args.load!r}')
    return load_config(args.config, overrides)


def _gen_data(args):
    from generate_data import generate_split
    from utilities.config import DEFAULT_DATASET_CONFIG_FILE, check_dataset_ranges, load_config
    overrides = []
    for flag, key in ((args.seed, 'seed'), (args.n_train, 'split.n_train'),
                      (args.n_test, 'split.n_test'), (args.image_size, 'split.image_size')):
        if flag is not None:
            overrides.append(f'{key}={flag}')
    for flag, key in ((args.root, 'root'), (args.domain, 'split.domain')):
        if flag is not None:
            overrides.append(f'{key}={flag!r}')
    config = load_config(args.config, overrides, DEFAULT_DATASET_CONFIG_FILE,
                         check_dataset_ranges)
    split = config['split']
    domains = ['source', 'target'] if split['domain'] == 'both' else [split['domain']]
    for offset, domain in enumerate(domains):
        seed = config['seed'] + (offset if split['domain'] == 'both' else 0)
        paths = generate_split(seed, split['n_train'], split['n_test'], domain, config['root'],
                               split['image_size'])
        print(f'{domain}: ' + ', '.join(paths))
    return EXIT_OK


def _train(args):
    from train import train
    params = _resolve_train_config(args, args.seed)
    result = train(params)
    if result.target_map is not None:
        print(f'Target-test mAP: {100 * result.target_map:.2f}')
    print(f'Artifacts written to {result.output_dir}')
    return EXIT_OK


def _eval(args):
    from environments.datasets import read_index
    from environments.scenes import CLASS_NAMES
    from utilities.evaluation import (format_table, mean_average_precision, read_predictions,
                                      write_results_csv)
    predictions = read_predictions(args.predictions)
    index = read_index(args.index)
    class_names = index.get('classes', list(CLASS_NAMES))
    result = mean_average_precision(predictions, index['entries'], class_names)
    output = args.output or os.path.join(os.path.dirname(os.path.abspath(args.predictions)),
                                         'eval.csv')
    write_results_csv(output, result)
    print(format_table(result))
    return EXIT_OK


def _ablate(args, sweep=False):
    import ablate
    seeds = args.seed
    params = _resolve_train_config(args, seeds[0])
    if sweep:
        ablate.sweep(params, seeds=seeds)
    else:
        ablate.ablate(params, seeds=seeds, variants=args.variants)
    print(f'Results written to {params["output_dir"]}')
    return EXIT_OK


def _gradcheck(args):
    from utilities.gradient_check import TOLERANCE, gradient_suite
    report = gradient_suite(seed=args.seed, entries_per_param=args.entries)
    width = max(len(term) for term in report)
    for term, (error, where) in report.items():
        status = 'ok' if error < TOLERANCE else 'FAIL'
        print(f'{term:<{width}}  max relative error {error:.3e}  {status}  {where}')
    return EXIT_OK if all(error < TOLERANCE for error, _ in report.values()) else EXIT_RUNTIME


def _plot(args):
    from utilities.evaluation import read_predictions
    from utilities.plotting import plot_curves, plot_detections
    if args.metrics is None and args.detections is None:
        raise UsageError('plot needs --metrics and/or --detections.')
    if args.metrics is not None:
        output_dir = args.output_dir or os.path.dirname(os.path.abspath(args.metrics))
        for path in plot_curves(args.metrics, output_dir):
            print(path)
    if args.detections is not None:
        if args.index is None:
            raise UsageError('--detections needs --index.')
        output_dir = args.output_dir or os.path.dirname(os.path.abspath(args.detections))
        print(plot_detections(read_predictions(args.detections), args.index,
                              os.path.join(output_dir, 'detections.png'), args.n_images,
                              args.score_threshold))
    return EXIT_OK


COMMANDS = {
    'gen-data': _gen_data,
    'train': _train,
    'eval': _eval,
    'ablate': _ablate,
    'sweep': lambda args: _ablate(args, sweep=True),
    'gradcheck': _gradcheck,
    'plot': _plot,
}


def main(argv=None):
    """Run the CLI and return its exit code."""
    from environments.datasets import DatasetError
    from train import TrainingDivergedError
    from utilities.config import ConfigError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:  # --help
        return e.code or EXIT_OK
    except (UsageError, ConfigError) as e:
        print(f'rpcl: error: {e}', file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, TrainingDivergedError, IOError, ValueError, KeyError) as e:
        print(f'rpcl: error: {e}', file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
