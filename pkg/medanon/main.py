"""
The main file, which exposes the ``medanon`` command-line tool, detailed in
:doc:`this walkthrough <../example_usage/cli_usage>`.

Subcommands: ``prepare``, ``train-target``, ``train``, ``anonymize``,
``sweep``, ``table``, ``game`` and ``export-model``. Exit codes are 0 on
success, 2 on an input or validation error and 3 on a numeric failure.
"""

from argparse import ArgumentParser
import os
import sys
import time

import git
import numpy as np
import pandas as pd
import torch as ch

import cox
import cox.utils
import cox.store

try:
    from . import datasets, defaults, __version__
    from .anonymizer import AnonymizationSession, PrivacyConfig
    from .dp import DpConfig, dp_anonymize, estimate_sensitivity
    from .evaluation import (AnonymizerMechanism, LaplaceMechanism,
                             RetrainedAnonymizerMechanism, evaluate_mechanism,
                             feature_correlation_matrix, per_layer_table,
                             write_summary)
    from .game import ADVERSARIES, FullModelScheme, MaskOnlyScheme, \
        run_distinguisher_game
    from .model_utils import (export_json, import_json, load_container,
                              make_and_restore_model, save_container)
    from .train import train_anonymizer, train_target
    from .tools import constants
    from .tools.helpers import ShapeError, as_numpy
    from .defaults import check_and_fill_args
except ImportError:
    raise ValueError("Make sure to run with python -m (see README.rst)")


parser = ArgumentParser(prog='medanon')
subparsers = parser.add_subparsers(dest='command')
for command, arg_lists in defaults.COMMAND_ARGS.items():
    subparser = subparsers.add_parser(command)
    for arg_list in arg_lists:
        defaults.add_args_to_parser(arg_list, subparser)


def _path(args, name, default_name):
    path = getattr(args, name)
    return path if path else os.path.join(args.out_dir, default_name)


def _load(args, kind):
    name, default_name = {
        'dataset': ('dataset_path', constants.DATASET_NAME),
        'target': ('target_path', constants.TARGET_NAME),
        'anonymizer': ('model_path', constants.ANONYMIZER_NAME),
    }[kind]
    obj, _ = make_and_restore_model(kind=kind,
                                    resume_path=_path(args, name, default_name))
    return obj


def privacy_config(args):
    return PrivacyConfig(lambda_e=args.lambda_e, lambda_d=args.lambda_d,
                         delta=args.delta, mask_mode=args.mask_mode,
                         injection=args.injection, fusion=args.fusion,
                         seed=args.seed)


def parse_grid(grid):
    if grid is None:
        return list(constants.DEFAULT_GRID)
    try:
        return [float(g) for g in str(grid).split(',') if g.strip()]
    except ValueError:
        raise ValueError(f"cannot parse grid {grid!r}")


def _records_frame(ds, X, y):
    df = pd.DataFrame(as_numpy(X), columns=ds.feature_names)
    if y is not None:
        df['label'] = as_numpy(y).astype(int)
    return df


def cmd_prepare(args, store):
    raw = datasets.load_csv(args.data, args.dataset, args.split_seed,
                            args.schema_path)
    ds = datasets.normalize(datasets.impute(raw))
    save_container(ds, os.path.join(args.out_dir, constants.DATASET_NAME))
    # ranges and missing counts in original units, as seen before cleaning
    features_path = os.path.join(args.out_dir, constants.FEATURES_CSV)
    report = datasets.feature_report(raw.replace(degenerate=ds.degenerate))
    report.to_csv(features_path, index=False)
    _records_frame(ds, ds.train_X, ds.train_y).to_csv(
        os.path.join(args.out_dir, constants.TRAIN_RECORDS_CSV), index=False)
    _records_frame(ds, ds.test_X, ds.test_y).to_csv(
        os.path.join(args.out_dir, constants.TEST_RECORDS_CSV), index=False)
    summary = {'dataset': ds.ds_name, 'n': ds.n,
               'train': int(ds.train_X.shape[0]),
               'test': int(ds.test_X.shape[0]),
               'split_seed': ds.seed, 'degenerate': list(ds.degenerate)}
    write_summary(features_path, summary)
    print(f"=> prepared {ds.ds_name}: n={ds.n}, split "
          f"{summary['train']}/{summary['test']}")
    return summary


def cmd_train_target(args, store):
    ds = _load(args, 'dataset')
    target = train_target(ds, args.target_kind, epochs=args.target_epochs,
                          lr=args.target_lr, batch_size=args.target_batch_size,
                          seed=args.target_seed, store=store)
    save_container(target, _path(args, 'target_path', constants.TARGET_NAME))
    return target


def _train(args, ds, target, cfg, store):
    return train_anonymizer(ds, target, cfg, args.steps, args.batch_size,
                            lr=args.lr, betas=(args.beta1, args.beta2),
                            inject_noise=bool(args.train_noise),
                            log_iters=args.log_iters, store=store)


def cmd_train(args, store):
    ds, target = _load(args, 'dataset'), _load(args, 'target')
    start = time.perf_counter()
    model = _train(args, ds, target, privacy_config(args), store)
    train_seconds = time.perf_counter() - start
    save_container(model, _path(args, 'model_path', constants.ANONYMIZER_NAME))
    log = pd.DataFrame(model.training_log, columns=constants.TRAIN_LOG_COLUMNS)
    log['step'] = log['step'].astype(int)
    log_path = os.path.join(args.out_dir, constants.TRAIN_LOG_CSV)
    log.to_csv(log_path, index=False)
    write_summary(log_path, {'steps': args.steps,
                             'batch_size': args.batch_size,
                             'train_seconds': train_seconds,
                             'final': {k: float(v) for k, v
                                       in log.iloc[-1].items()}})
    print(f"=> training took {train_seconds:.1f}s")
    return model


def cmd_anonymize(args, store):
    ds = _load(args, 'dataset')
    df = pd.read_csv(args.input)
    missing = [c for c in ds.feature_names if c not in df.columns]
    if missing:
        raise ShapeError(f"{args.input} lacks feature columns {missing}")
    X = df[ds.feature_names].to_numpy(dtype=np.float64)
    model = _load(args, 'anonymizer') if args.mechanism == 'anomigan' else None
    start = time.perf_counter()
    if model is None:
        cfg = DpConfig(args.dp_delta, estimate_sensitivity(ds),
                       args.session_seed)
        X_hat = as_numpy(dp_anonymize(X, cfg))
    else:
        session = AnonymizationSession(model, args.session_seed,
                                       delta=args.delta,
                                       injection=args.injection)
        X_hat = np.stack([as_numpy(session.anonymize(x)) for x in X]) \
            if len(X) else X
    seconds = time.perf_counter() - start
    out = df.copy()
    out[ds.feature_names] = X_hat
    out.to_csv(args.output, index=False)
    write_summary(args.output, {
        'mechanism': args.mechanism, 'records': len(out),
        'seconds': seconds,
        'seconds_per_record': seconds / len(out) if len(out) else 0.0})
    print(f"=> anonymized {len(out)} records with {args.mechanism} into "
          f"'{args.output}' ({seconds:.3f}s)")
    return out


def cmd_sweep(args, store):
    ds, target = _load(args, 'dataset'), _load(args, 'target')
    grid = parse_grid(args.grid)
    if args.sweep_param == 'lambda_e':
        cfg = privacy_config(args)
        models = {}
        for value in grid:
            print(f"=> training anonymizer with lambda_e={value}")
            models[value] = _train(args, ds, target,
                                   cfg.replace(lambda_e=value), store)
        mechanism = RetrainedAnonymizerMechanism(models)
    else:
        mechanism = AnonymizerMechanism(_load(args, 'anonymizer'))
    report = evaluate_mechanism(mechanism, ds, target, grid, args.n_cases,
                                args.eval_seed, store)
    report = report.merge(evaluate_mechanism(
        LaplaceMechanism.from_dataset(ds), ds, target, grid, args.n_cases,
        args.eval_seed, store))
    report.feature_corr, _ = feature_correlation_matrix(ds)
    report.save(args.out_dir)
    return report


def cmd_table(args, store):
    ds, target = _load(args, 'dataset'), _load(args, 'target')
    model = _load(args, 'anonymizer')
    table = per_layer_table(model, ds, target, args.table_trials,
                            args.eval_seed, args.delta, store)
    path = os.path.join(args.out_dir, constants.PER_LAYER_CSV)
    layers = table[table['layer'] != 'off']
    layers.to_csv(path, index=False)
    control = table[table['layer'] == 'off'].iloc[0].to_dict()
    write_summary(path, {'trials': args.table_trials, 'delta': args.delta,
                         'injection_off': {k: (v.item() if hasattr(v, 'item')
                                               else v)
                                           for k, v in control.items()}})
    print(f"=> wrote {len(layers)} layer rows to '{path}'")
    return table


def cmd_game(args, store):
    ds = _load(args, 'dataset')
    if args.scheme == 'full_model':
        scheme = FullModelScheme(_load(args, 'anonymizer'), args.game_seed)
    else:
        scheme = MaskOnlyScheme(args.mask_mode, args.seed)
    transcript = run_distinguisher_game(scheme, ADVERSARIES[args.adversary](),
                                        ds.test_X, args.game_trials,
                                        args.game_seed, store)
    path = os.path.join(args.out_dir, constants.GAME_CSV)
    pd.DataFrame([transcript], columns=constants.GAME_COLUMNS).to_csv(
        path, index=False)
    write_summary(path, transcript)
    print(f"=> {transcript['scheme']} vs {transcript['adversary']}: success "
          f"rate {transcript['success_rate']:.4f} over "
          f"{transcript['trials']} trials")
    return transcript


def cmd_export_model(args, store):
    path = _path(args, 'model_path', constants.ANONYMIZER_NAME)
    json_path = args.json_path if args.json_path else path + '.json'
    if args.from_json:
        return save_container(import_json(json_path), path)
    return export_json(load_container(path), json_path)


COMMANDS = {
    'prepare': cmd_prepare,
    'train-target': cmd_train_target,
    'train': cmd_train,
    'anonymize': cmd_anonymize,
    'sweep': cmd_sweep,
    'table': cmd_table,
    'game': cmd_game,
    'export-model': cmd_export_model,
}


def main(args, store=None):
    '''Given arguments from `setup_args` and a store from `setup_store`,
    runs the requested subcommand.
    '''
    os.makedirs(args.out_dir, exist_ok=True)
    return COMMANDS[args.command](args, store)


def setup_args(args):
    '''
    Fill the args object with reasonable defaults from
    :mod:`medanon.defaults`, and also perform a sanity check to make sure no
    args are missing.
    '''
    # override non-None values with optional config_path
    if args.config_path:
        args = cox.utils.override_json(args, args.config_path)
    if os.environ.get(constants.OUT_DIR_ENV):
        args.out_dir = os.environ[constants.OUT_DIR_ENV]

    args = check_and_fill_args(args, defaults.CONFIG_ARGS)
    profile = 'desk' if args.desk else 'reference'
    for arg_list in defaults.COMMAND_ARGS[args.command]:
        args = check_and_fill_args(args, arg_list, profile)
    args.profile = profile
    return args


def setup_store_with_metadata(args):
    '''
    Sets up a store for the run according to the arguments object. See the
    argparse object above for options.
    '''
    # Add git commit to args
    try:
        repo = git.Repo(path=os.path.dirname(os.path.realpath(__file__)),
                        search_parent_directories=True)
        version = repo.head.object.hexsha
    except (git.exc.InvalidGitRepositoryError, git.exc.NoSuchPathError,
            ValueError):
        version = __version__
    args.version = version

    # Create the store
    os.makedirs(args.out_dir, exist_ok=True)
    store = cox.store.Store(args.out_dir, args.exp_name)
    args_dict = {k: v for k, v in args.as_dict().items() if v is not None}
    schema = cox.store.schema_from_dict(args_dict)
    store.add_table('metadata', schema)
    store['metadata'].append_row(args_dict)

    return store


def run(argv=None):
    """
    Parses ``argv``, runs the subcommand and returns the exit code.
    """
    ch.set_num_threads(1)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return constants.EXIT_INPUT if e.code else constants.EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return constants.EXIT_INPUT

    store = None
    try:
        args = setup_args(cox.utils.Parameters(vars(args)))
        store = setup_store_with_metadata(args)
        main(args, store=store)
    except FloatingPointError as e:
        print(f"medanon {args.command}: numeric failure: {e}", file=sys.stderr)
        return constants.EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as e:
        print(f"medanon {args.command}: {e}", file=sys.stderr)
        return constants.EXIT_INPUT
    finally:
        if store is not None:
            store.close()
    return constants.EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
