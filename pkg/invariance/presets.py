"""
Published per-head hyper-parameters for the Rotated-MNIST SF-CNN experiments.

`preset_document(kind)` turns an entry into a run-config document that goes
through the same validation as a TOML file.
"""
import copy
from typing import Dict

from .exceptions import ConfigError

# shared backbone: five steerable conv layers, 16 orientations, three dense layers
ROTATED_MNIST_BACKBONE = {
    'backbone': 'steerable',
    'in_channels': 1,
    'image_size': 28,
    'classes': 10,
    'channels': [8, 16, 16, 24, 24],
    'kernel_size': 5,
    'n_alpha': 16,
    'n_f': 8,
    'pool_after': [1, 3],
}

ROTATED_MNIST_DATA = {
    'source': 'idx-files',
    'image_size': 28,
    'classes': 10,
    'train_prefix': 'data/rotmnist/train',
    'test_prefix': 'data/rotmnist/test',
    'augmentation': 'random-rotation',
}

# kind -> (head, n_fc, train overrides)
ROTATED_MNIST = {
    'sa': {
        'head': {'kind': 'sa', 'sa_heads': 1, 'attention_dropout': 0.0},
        'n_fc': 95,
        'train': {'batch_size': 32, 'learning_rate': 5e-3, 'decay_factor': 0.5, 'decay_epoch': 20.0,
                  'reg_constant': 1e-3},
        'dropout': 0.05,
    },
    'ws-global': {
        'head': {'kind': 'ws-global'},
        'n_fc': 85,
        'train': {'batch_size': 32, 'learning_rate': 1e-4, 'decay_factor': 0.1, 'decay_epoch': 40.0,
                  'reg_constant': 0.1},
        'dropout': 0.45,
    },
    'ws-local': {
        'head': {'kind': 'ws-local', 'ws_kernel': 3},
        'n_fc': 30,
        'train': {'batch_size': 32, 'learning_rate': 1e-3, 'decay_factor': 0.5, 'decay_epoch': 25.0,
                  'reg_constant': 1e-3},
        'dropout': 0.4,
    },
    'mlp': {
        'head': {'kind': 'mlp'},
        'n_fc': 85,
        'train': {'batch_size': 32, 'learning_rate': 1e-4, 'decay_factor': 0.1, 'decay_epoch': 30.0,
                  'reg_constant': 1e-3},
        'dropout': 0.5,
    },
    'monomial': {
        'head': {'kind': 'monomial', 'monomials': 5},
        'n_fc': 90,
        'train': {'batch_size': 32, 'learning_rate': 1e-4, 'decay_factor': 0.75, 'decay_epoch': 15.0,
                  'reg_constant': 0.15},
        'dropout': 0.45,
        # 50 candidates, 25 after 10 epochs, 5 after 5 more
        'selection': {'pool': 50, 'target': 5, 'algorithm': 'magnitude', 'schedule': [[10, 25], [15, 5]]},
    },
    'spatial-max': {
        'head': {'kind': 'spatial-max'},
        'n_fc': 96,
        'train': {'batch_size': 64, 'learning_rate': 1e-3, 'decay_factor': 0.9, 'decay_epoch': 20.0,
                  'reg_constant': 1.0},
        'dropout': 0.7,
    },
}


def preset_document(kind: str, seed: int = 0) -> Dict:
    if kind not in ROTATED_MNIST:
        raise ConfigError(f"no Rotated-MNIST preset for head {kind!r}; choose from {sorted(ROTATED_MNIST)}",
                          'model.head.kind')
    entry = copy.deepcopy(ROTATED_MNIST[kind])
    model = dict(ROTATED_MNIST_BACKBONE, head=entry['head'], dense=[entry['n_fc'], entry['n_fc']],
                 dropout=entry['dropout'])
    train = dict(optimizer='adam', decay='exponential', epochs=100, elastic_net=1e-7, seed=seed,
                 **entry['train'])
    document = {'data': dict(ROTATED_MNIST_DATA, seed=seed), 'model': model, 'train': train}
    if 'selection' in entry:
        document['selection'] = dict(entry['selection'], seed=seed)
    return document
