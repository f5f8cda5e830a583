"""
This module is used to set up arguments and defaults of the command-line
tool. Arguments are declared in tables of
``[NAME, TYPE/CHOICES, HELP, DEFAULT]`` entries; :func:`add_args_to_parser`
turns a table into ``argparse`` options *without* argparse defaults, and
:func:`check_and_fill_args` fills whatever is still missing after the
command line and the JSON config file have been read.
"""

from . import datasets
from .anonymizer import FUSIONS
from .game import ADVERSARIES, SCHEMES
from .masks import MASKS
from .target_models import ARCHITECTURES
from .tools import helpers

BY_PROFILE = 'varies by profile'
REQ = 'REQUIRED'

PROFILE_DEFAULTS = {
    'reference': {
        "steps": 50000,
        "n_cases": 1000,
        "table_trials": 1000,
        "game_trials": 10000,
    },
    'desk': {
        "steps": 5000,
        "n_cases": 1000,
        "table_trials": 200,
        "game_trials": 1000,
    },
}
"""
Run-length defaults of the two profiles; ``--desk 1`` selects the desk
profile, everything else runs the reference one.
"""

CONFIG_ARGS = [
    ['config-path', str, 'JSON config file; command-line flags win over it',
     None],
    ['out-dir', str, 'where to write artifacts (MEDANON_OUT_DIR overrides it)',
     REQ],
    ['exp-name', str, 'name of the run store directory under out-dir', None],
    ['desk', [0, 1], 'use the desk profile (shorter runs)', 0],
]
"""
Arguments shared by every subcommand.
"""

DATA_ARGS = [
    ['data', str, 'path to the input CSV file', REQ],
    ['dataset', list(datasets.DATASETS.keys()), 'CSV schema', REQ],
    ['schema-path', str, 'JSON schema of a generic CSV (default: '
     '<data>.schema.json)', None],
    ['split-seed', int, 'seed of the train/test split', 0],
]
"""
Arguments of ``prepare``.
"""

ARTIFACT_ARGS = [
    ['dataset-path', str, 'prepared dataset container (default: '
     '<out-dir>/dataset.pt)', None],
    ['target-path', str, 'target model container (default: '
     '<out-dir>/target.pt)', None],
    ['model-path', str, 'anonymizer container (default: '
     '<out-dir>/anonymizer.pt)', None],
]
"""
Where the subcommands find the artifacts of earlier ones.
"""

TARGET_ARGS = [
    ['target-kind', list(ARCHITECTURES.keys()), 'target architecture', 'mlp'],
    ['target-epochs', int, 'epochs of target training', 200],
    ['target-lr', float, 'learning rate of target training', 0.01],
    ['target-batch-size', int, 'batch size of target training', 32],
    ['target-seed', int, 'seed of target training', 0],
]
"""
Arguments of ``train-target``.
"""

PRIVACY_ARGS = [
    ['lambda-e', float, 'weight of the distance term', 0.5],
    ['lambda-d', float, 'weight of the discriminator and target terms', 0.5],
    ['delta', float, 'privacy knob (scales the injected noise)', 0.3],
    ['mask-mode', list(MASKS.keys()), 'how masks combine with records',
     'uniform_additive'],
    ['injection', str, "variance injection: 'off', 'random' or 'layer:<i>'",
     'random'],
    ['fusion', FUSIONS, 'encoder input: x and r concatenated, or premasked',
     'concat'],
    ['seed', int, 'training seed (the mask key)', 0],
]
"""
Fields of :class:`medanon.anonymizer.PrivacyConfig`.
"""

TRAINING_ARGS = [
    ['steps', int, 'training steps', BY_PROFILE],
    ['batch-size', int, 'records per step', 10],
    ['lr', float, 'Adam learning rate', 0.001],
    ['beta1', float, 'Adam first-moment decay', 0.5],
    ['beta2', float, 'Adam second-moment decay', 0.999],
    ['train-noise', [0, 1], 'inject variance noise during training too', 1],
    ['log-iters', int, 'steps between rows of the run store', 100],
]
"""
Arguments of anonymizer training.
"""

ANONYMIZE_ARGS = [
    ['input', str, 'CSV of normalized records (header = feature names)', REQ],
    ['output', str, 'CSV to write', REQ],
    ['mechanism', ['anomigan', 'dp'], 'anonymizer or Laplace baseline',
     'anomigan'],
    ['session-seed', int, 'seed of the anonymization session', 0],
    ['dp-delta', float, 'delta of the Laplace baseline', 1.0],
]
"""
Arguments of ``anonymize``.
"""

EVAL_ARGS = [
    ['sweep-param', ['delta', 'lambda_e'], 'parameter swept by the anonymizer',
     'delta'],
    ['grid', str, 'comma-separated grid (default: 0.1,0.2,...,1.0)', None],
    ['n-cases', int, 'test records sampled per grid point', BY_PROFILE],
    ['table-trials', int, 'repetitions per layer of the per-layer table',
     BY_PROFILE],
    ['eval-seed', int, 'seed of the evaluation', 0],
]
"""
Arguments of ``sweep`` and ``table``.
"""

GAME_ARGS = [
    ['scheme', list(SCHEMES.keys()), 'what the adversary attacks', 'mask_only'],
    ['adversary', list(ADVERSARIES.keys()), 'built-in adversary',
     'nearest_neighbor'],
    ['game-trials', int, 'trials of the game (at least 1000)', BY_PROFILE],
    ['game-seed', int, 'seed of the game', 0],
]
"""
Arguments of ``game``.
"""

EXPORT_ARGS = [
    ['json-path', str, 'JSON file (default: <model-path>.json)', None],
    ['from-json', [0, 1], 'import the JSON file into model-path instead', 0],
]
"""
Arguments of ``export-model``.
"""

COMMAND_ARGS = {
    'prepare': [CONFIG_ARGS, DATA_ARGS],
    'train-target': [CONFIG_ARGS, ARTIFACT_ARGS, TARGET_ARGS],
    'train': [CONFIG_ARGS, ARTIFACT_ARGS, PRIVACY_ARGS, TRAINING_ARGS],
    'anonymize': [CONFIG_ARGS, ARTIFACT_ARGS, ANONYMIZE_ARGS, PRIVACY_ARGS],
    'sweep': [CONFIG_ARGS, ARTIFACT_ARGS, EVAL_ARGS, PRIVACY_ARGS,
              TRAINING_ARGS],
    'table': [CONFIG_ARGS, ARTIFACT_ARGS, EVAL_ARGS, PRIVACY_ARGS],
    'game': [CONFIG_ARGS, ARTIFACT_ARGS, GAME_ARGS, PRIVACY_ARGS],
    'export-model': [CONFIG_ARGS, ARTIFACT_ARGS, EXPORT_ARGS],
}
"""
The argument tables of every subcommand.
"""


def add_args_to_parser(arg_list, parser):
    """
    Adds arguments from one of the argument lists above to a passed-in
    argparse.ArgumentParser object. Formats helpstrings according to the
    defaults, but does NOT set the actual argparse defaults (*important*).

    Args:
        arg_list (list) : A list of the same format as the lists above, i.e.
            containing entries of the form [NAME, TYPE/CHOICES, HELP, DEFAULT]
        parser (argparse.ArgumentParser) : An ArgumentParser object to which the
            arguments will be added

    Returns:
        The original parser, now with the arguments added in.
    """
    for arg_name, arg_type, arg_help, arg_default in arg_list:
        has_choices = (type(arg_type) == list)
        kwargs = {
            'type': type(arg_type[0]) if has_choices else arg_type,
            'help': f"{arg_help} (default: {arg_default})"
        }
        if has_choices: kwargs['choices'] = arg_type
        parser.add_argument(f'--{arg_name}', **kwargs)
    return parser


def check_and_fill_args(args, arg_list, profile='reference'):
    """
    Fills in defaults based on an arguments list (e.g., TRAINING_ARGS) and a
    run profile (a key of :attr:`PROFILE_DEFAULTS`).

    Args:
        args (object) : Any object subclass exposing :samp:`setattr` and
            :samp:`getattr` (e.g. cox.utils.Parameters)
        arg_list (list) : A list of the same format as the lists above, i.e.
            containing entries of the form [NAME, TYPE/CHOICES, HELP, DEFAULT]
        profile (str) : 'reference' or 'desk'

    Returns:
        args (object): The :samp:`args` object with all the defaults filled
        in according to :samp:`arg_list` defaults.
    """
    for arg_name, _, _, arg_default in arg_list:
        name = arg_name.replace("-", "_")
        if helpers.has_attr(args, name): continue
        if arg_default == REQ: raise ValueError(f"--{arg_name} is required")
        elif arg_default == BY_PROFILE:
            setattr(args, name, PROFILE_DEFAULTS[profile][name])
        elif arg_default is not None:
            setattr(args, name, arg_default)
    return args
