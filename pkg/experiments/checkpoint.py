"""
Versioned binary checkpoints.

Layout: 8-byte magic, uint32 format version, uint32 section count, then per
section a uint16-prefixed name and a uint64-prefixed payload, then the
sha256 of every preceding byte. All integers are big-endian. Array
sections hold uint16-prefixed names followed by uint64-prefixed `.npy`
payloads, sorted by name.
"""
import csv
import hashlib
import io
import json
import logging
import struct
from dataclasses import replace
from pathlib import Path

import numpy as np

from augment.policy import DaPolicy
from dhalab.exceptions import (
    ArtifactWriteError, CheckpointChecksumError, CheckpointError, CheckpointTruncatedError, CheckpointVersionError,
)
from hpo.optimizer import HyperParams
from nas.architecture import NodeCode
from nas.genotype import Genotype
from scheduler.metrics import METRICS_HEADER, MetricsRecord
from scheduler.modes import Toggles
from scheduler.trainer import Trainer

from .config import parse_config, serialize_config

logger = logging.getLogger(__name__)

MAGIC = b'DHACKPT\x00'
FORMAT_VERSION = 1
DIGEST_SIZE = hashlib.sha256().digest_size


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.raw):
            raise CheckpointTruncatedError(f"checkpoint ends at byte {len(self.raw)}, needed {self.pos + size}")
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def blob(self, fmt):
        return self.take(self.unpack(fmt))


def _blob(fmt, payload):
    return struct.pack(fmt, len(payload)) + payload


def pack_arrays(arrays):
    out = io.BytesIO()
    for name in sorted(arrays):
        buffer = io.BytesIO()
        np.save(buffer, np.asarray(arrays[name]), allow_pickle=False)
        out.write(_blob('>H', name.encode('utf-8')))
        out.write(_blob('>Q', buffer.getvalue()))
    return out.getvalue()


def unpack_arrays(payload):
    reader = _Reader(payload)
    arrays = {}
    while reader.pos < len(payload):
        name = reader.blob('>H').decode('utf-8')
        arrays[name] = np.load(io.BytesIO(reader.blob('>Q')), allow_pickle=False)
    return arrays


def encode(sections):
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack('>II', FORMAT_VERSION, len(sections)))
    for name, payload in sections.items():
        body.write(_blob('>H', name.encode('utf-8')))
        body.write(_blob('>Q', payload))
    raw = body.getvalue()
    return raw + hashlib.sha256(raw).digest()


def decode(raw):
    """{section name: payload} after magic, version, structure and checksum checks."""
    reader = _Reader(raw)
    if len(raw) >= len(MAGIC) and raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    reader.take(len(MAGIC))
    version = reader.unpack('>I')
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    sections = {}
    for _ in range(reader.unpack('>I')):
        name = reader.blob('>H').decode('utf-8')
        sections[name] = reader.blob('>Q')
    body_end = reader.pos
    digest = reader.take(DIGEST_SIZE)
    if hashlib.sha256(raw[:body_end]).digest() != digest:
        raise CheckpointChecksumError("checkpoint checksum mismatch")
    return sections


def _json(obj):
    return json.dumps(obj, sort_keys=True).encode('utf-8')


def _metrics_text(records):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(METRICS_HEADER)
    writer.writerows(record.as_row() for record in records)
    return out.getvalue()


def checkpoint_sections(trainer):
    state = trainer.state
    codes = {}
    for node, code in zip(trainer.space.nodes, state.arch.codes):
        codes[f'A.{node}'] = code.A
        codes[f'b.{node}'] = code.b
        codes[f'alpha.{node}'] = code.alpha
    streams = {'train': trainer.train_stream.state_dict(), 'hyper': trainer.hyper_stream.state_dict()}
    meta = {
        'iteration': state.iteration,
        'phase': state.phase,
        'phase_step': state.phase_step,
        'hp': {'lr': state.hp.lr, 'wd': state.hp.wd},
        'toggles': vars(trainer.toggles) if trainer.toggles is not None else None,
        'genotype': state.genotype.to_text(),
        'fixed_genotype': state.fixed_genotype.to_text() if state.fixed_genotype is not None else None,
        'history': [list(entry) for entry in state.history],
        'streams': {name: {k: v for k, v in s.items() if k != 'order'} for name, s in streams.items()},
    }
    return {
        'config': serialize_config(trainer.config).encode('utf-8'),
        'meta': _json(meta),
        'theta': pack_arrays(state.theta),
        'tau': pack_arrays({'tau': state.policy.tau}),
        'arch': pack_arrays(codes),
        'streams': pack_arrays({f'{name}.order': s['order'] for name, s in streams.items()}),
        'rng': _json({name: rng.bit_generator.state for name, rng in trainer.rngs.items()}),
        'metrics': _metrics_text(trainer.records).encode('utf-8'),
    }


def checkpoint_save(trainer, path):
    raw = encode(checkpoint_sections(trainer))
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(raw)
    except OSError as exc:
        raise ArtifactWriteError(f"cannot write checkpoint {path}: {exc.strerror}") from exc
    logger.info("checkpoint saved path=%s iteration=%d bytes=%d", path, trainer.state.iteration, len(raw))
    return path


def checkpoint_load(path, environ=None, **hooks):
    """A Trainer positioned exactly where the checkpointed one stopped."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    sections = decode(raw)
    missing = {'config', 'meta', 'theta', 'tau', 'arch', 'streams', 'rng', 'metrics'} - set(sections)
    if missing:
        raise CheckpointError(f"checkpoint lacks sections {sorted(missing)}")

    config = parse_config(sections['config'].decode('utf-8'), environ={} if environ is None else environ)
    meta = json.loads(sections['meta'])
    toggles = Toggles(**meta['toggles']) if meta['toggles'] is not None else None
    trainer = Trainer(config, toggles=toggles, **hooks)

    arrays = unpack_arrays(sections['arch'])
    arch = trainer.state.arch
    codes = tuple(NodeCode.from_matrix(arrays[f'A.{node}'], arrays[f'b.{node}'], alpha=arrays[f'alpha.{node}'],
                                       lam=arch.lam, max_iters=arch.max_iters, tol=arch.tol)
                  for node in trainer.space.nodes)
    policy = trainer.state.policy
    fixed = meta['fixed_genotype']
    trainer.state = replace(
        trainer.state,
        iteration=meta['iteration'],
        phase=meta['phase'],
        phase_step=meta['phase_step'],
        theta=unpack_arrays(sections['theta']),
        policy=DaPolicy(policy.ops, unpack_arrays(sections['tau'])['tau'], policy.temperature),
        hp=HyperParams(lr=meta['hp']['lr'], wd=meta['hp']['wd'], lr_min=config.lr_min, lr_max=config.lr_max,
                       wd_min=config.wd_min, wd_max=config.wd_max, meta_lr=config.meta_lr),
        arch=replace(arch, codes=codes),
        genotype=Genotype.from_text(meta['genotype']),
        fixed_genotype=Genotype.from_text(fixed) if fixed is not None else None,
        history=tuple((int(t), h) for t, h in meta['history']),
    )
    orders = unpack_arrays(sections['streams'])
    for name, stream in (('train', trainer.train_stream), ('hyper', trainer.hyper_stream)):
        stream.load_state_dict({**meta['streams'][name], 'order': orders[f'{name}.order']})
    for name, state in json.loads(sections['rng']).items():
        trainer.rngs[name].bit_generator.state = state
    rows = list(csv.reader(io.StringIO(sections['metrics'].decode('utf-8'))))
    trainer.records = [MetricsRecord.from_row(row) for row in rows[1:]]
    logger.info("checkpoint loaded path=%s iteration=%d phase=%d", path, trainer.state.iteration, trainer.state.phase)
    return trainer
