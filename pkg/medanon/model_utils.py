"""
Saving and restoring datasets and models.

Every artifact is a *container*: a dictionary saved with ``torch.save``
(pickled with ``dill``) carrying the format tag, the kind of object, its
topology, its ``state_dict`` and whatever else is needed to rebuild it
bit for bit. :func:`export_json` writes the same container as JSON with
floats encoded by ``float.hex``, so a JSON round trip is exact as well.
"""

import hashlib
import json
import os

import dill
import numpy as np
import torch as ch

from .anonymizer import AnonymizerModel, PrivacyConfig
from .datasets import TabularDataset
from .layers import VarianceStore
from .target_models import TargetModel
from .tools import constants
from .tools.helpers import as_numpy

KINDS = ['dataset', 'target', 'anonymizer']


def _container(kind, topology=None, state_dict=None, variance_store=None,
               config=None, metadata=None, seed=None, training_log=None):
    return {
        'format': constants.CONTAINER_FORMAT,
        'format_version': constants.CONTAINER_VERSION,
        'kind': kind,
        'topology': topology,
        'state_dict': state_dict,
        'variance_store': variance_store,
        'config': config,
        'metadata': dict(metadata or {}),
        'seed': seed,
        'training_log': training_log,
    }


def to_container(obj):
    """Builds the container of a dataset, target model or anonymizer."""
    if isinstance(obj, TabularDataset):
        return _container('dataset', state_dict=obj.state_dict(), seed=obj.seed)
    if isinstance(obj, TargetModel):
        return _container('target', topology=obj.topology(),
                          state_dict=obj.state_dict(), metadata=obj.metadata,
                          seed=obj.metadata.get('seed'))
    if isinstance(obj, AnonymizerModel):
        log = obj.training_log
        return _container('anonymizer', topology=obj.topology(),
                          state_dict=obj.state_dict(),
                          variance_store=obj.variance_store.state_dict(),
                          config=obj.config.as_dict(), metadata=obj.metadata,
                          seed=obj.config.seed,
                          training_log=None if log is None else ch.from_numpy(log))
    raise TypeError(f"cannot store objects of type {type(obj).__name__}")


def from_container(container):
    """Rebuilds the object held by a (validated) container."""
    check_container(container)
    kind = container['kind']
    if kind == 'dataset':
        return TabularDataset.from_state_dict(container['state_dict'])
    if kind == 'target':
        top = container['topology']
        model = TargetModel(top['kind'], top['n'], top['threshold'],
                            metadata=container['metadata'])
        model.load_state_dict(container['state_dict'])
        return model.freeze()
    config = PrivacyConfig.from_dict(container['config'])
    model = AnonymizerModel(container['topology']['n'], config)
    model.load_state_dict(container['state_dict'])
    model.variance_store = VarianceStore().load_state_dict(
        container['variance_store'] or {})
    model.metadata = dict(container['metadata'])
    log = container['training_log']
    model.training_log = None if log is None else as_numpy(log)
    return model.eval()


def check_container(container, kind=None):
    if not isinstance(container, dict) or \
            container.get('format') != constants.CONTAINER_FORMAT:
        raise ValueError("not a medanon container")
    if container.get('format_version') != constants.CONTAINER_VERSION:
        raise ValueError(f"unsupported container version "
                         f"{container.get('format_version')}")
    if container.get('kind') not in KINDS:
        raise ValueError(f"unknown container kind {container.get('kind')}")
    if kind is not None and container['kind'] != kind:
        raise ValueError(f"expected a {kind} container, found a "
                         f"{container['kind']} container")
    return container


def save_container(obj, path):
    container = obj if isinstance(obj, dict) else to_container(obj)
    check_container(container)
    ch.save(container, path, pickle_module=dill)
    print(f"=> saved {container['kind']} to '{path}'")
    return path


def load_container(path, kind=None):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no container found at '{path}'")
    container = ch.load(path, pickle_module=dill, weights_only=False)
    return check_container(container, kind)


def make_and_restore_model(*_, kind, resume_path):
    """
    Restores a dataset, target model or anonymizer from a container file.

    Args:
        kind ('dataset'|'target'|'anonymizer') : expected kind
        resume_path (str) : path of the container

    Returns:
        A tuple of the rebuilt object and the raw container.
    """
    print(f"=> loading {kind} '{resume_path}'")
    container = load_container(resume_path, kind)
    return from_container(container), container


def fingerprint(obj):
    """
    SHA-256 over the names, dtypes, shapes and raw bytes of a module's
    ``state_dict`` (or of a plain dict of tensors), in key order.
    """
    sd = obj.state_dict() if hasattr(obj, 'state_dict') else obj
    h = hashlib.sha256()
    for k in sorted(sd):
        t = sd[k].detach().contiguous()
        h.update(k.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def _encode(v):
    if isinstance(v, ch.Tensor):
        t = v.detach().contiguous()
        if t.is_floating_point():
            data = [float(x).hex() for x in t.reshape(-1).tolist()]
        else:
            data = [int(x) for x in t.reshape(-1).tolist()]
        return {'__tensor__': str(t.dtype).replace('torch.', ''),
                'shape': list(t.shape), 'data': data}
    if isinstance(v, float):
        return {'__float__': v.hex()}
    if isinstance(v, dict):
        return {'__dict__': [[k, _encode(x)] for k, x in v.items()]}
    if isinstance(v, (list, tuple)):
        return [_encode(x) for x in v]
    if isinstance(v, np.generic):
        return _encode(v.item())
    return v


def _decode(v):
    if isinstance(v, list):
        return [_decode(x) for x in v]
    if not isinstance(v, dict):
        return v
    if '__tensor__' in v:
        dtype = getattr(ch, v['__tensor__'])
        if dtype.is_floating_point:
            values = [float.fromhex(x) for x in v['data']]
        else:
            values = v['data']
        return ch.tensor(values, dtype=dtype).reshape(v['shape'])
    if '__float__' in v:
        return float.fromhex(v['__float__'])
    return {k: _decode(x) for k, x in v['__dict__']}


def export_json(container, json_path):
    """Writes a container as JSON; floats survive exactly."""
    check_container(container)
    with open(json_path, 'w') as f:
        json.dump(_encode(container), f, indent=1, sort_keys=True)
    print(f"=> exported {container['kind']} to '{json_path}'")
    return json_path


def import_json(json_path):
    """Reads a container written by :func:`export_json`."""
    with open(json_path) as f:
        return check_container(_decode(json.load(f)))
