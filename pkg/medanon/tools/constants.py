import torch as ch

DTYPE = ch.float64

# Container files
CONTAINER_FORMAT = 'medanon-container'
CONTAINER_VERSION = 1
DATASET_NAME = 'dataset.pt'
TARGET_NAME = 'target.pt'
ANONYMIZER_NAME = 'anonymizer.pt'

# Report files
FEATURES_CSV = 'features.csv'
TRAIN_RECORDS_CSV = 'train.csv'
TEST_RECORDS_CSV = 'test.csv'
TRAIN_LOG_CSV = 'train_log.csv'
SWEEP_CSV = 'sweep.csv'
PER_LAYER_CSV = 'per_layer.csv'
FEATURE_CORR_CSV = 'feature_corr.csv'
GAME_CSV = 'game.csv'
SUMMARY_SUFFIX = '.summary.json'

OUT_DIR_ENV = 'MEDANON_OUT_DIR'

# Exit codes of the command-line tool
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

# delta value at which injected noise has exactly the stored layer variance
REFERENCE_DELTA = 0.3

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))

# Probability clamp used before every log in the cross-entropy losses
PROB_EPS = 1e-7

NUM_ENCODER_LAYERS = 7

LOGS_SCHEMA = {
    'epoch':int,
    'train_loss':float,
    'train_acc':float,
    'test_acc':float,
    'test_auc':float,
    'time':float
}

LOGS_TABLE = 'logs'

TRAIN_LOG_COLUMNS = ['step', 'loss_encoder', 'loss_disc', 'loss_fool', 'loss_target',
                     'distance', 'disc_real', 'disc_fake']

ANONYMIZER_LOGS_SCHEMA = {
    'step':int,
    'loss_encoder':float,
    'loss_disc':float,
    'loss_fool':float,
    'loss_target':float,
    'distance':float,
    'disc_real':float,
    'disc_fake':float,
    'time':float
}

ANONYMIZER_LOGS_TABLE = 'anonymizer_logs'

REPORT_COLUMNS = ['mechanism', 'param_name', 'param', 'n_cases',
                  'correlation_coefficient', 'cc_per_feature', 'n_undefined_cc',
                  'accuracy', 'auc', 'accuracy_vs_original', 'auc_vs_original']

REPORT_SCHEMA = {
    'mechanism':str,
    'param_name':str,
    'param':float,
    'n_cases':int,
    'correlation_coefficient':float,
    'cc_per_feature':float,
    'n_undefined_cc':int,
    'accuracy':float,
    'auc':float,
    'accuracy_vs_original':float,
    'auc_vs_original':float
}

SWEEP_TABLE = 'sweep'

PER_LAYER_COLUMNS = ['layer', 'trials', 'correlation_coefficient',
                     'accuracy', 'auc']

PER_LAYER_SCHEMA = {
    'layer':str,
    'trials':int,
    'correlation_coefficient':float,
    'accuracy':float,
    'auc':float
}

PER_LAYER_TABLE = 'per_layer'

GAME_COLUMNS = ['scheme', 'adversary', 'trials', 'successes', 'success_rate',
                'epsilon_hat', 'std_error', 'hidden_bit_mean']

GAME_SCHEMA = {
    'scheme':str,
    'adversary':str,
    'trials':int,
    'successes':int,
    'success_rate':float,
    'epsilon_hat':float,
    'std_error':float,
    'hidden_bit_mean':float
}

GAME_TABLE = 'game'
