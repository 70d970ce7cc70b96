"""Run outputs: metrics CSV, genotype and policy text, reports and the manifest."""
import csv
import hashlib
import json
import logging
from pathlib import Path

import django
import numpy as np
import scipy
from django.conf import settings

from dhalab.exceptions import ArtifactWriteError
from scheduler.metrics import METRICS_HEADER

from .config import config_hash

logger = logging.getLogger(__name__)

ARTIFACT_VERSIONS = {
    'metrics': 1,
    'genotype': 1,
    'policy': 1,
    'genotype_history': 1,
    'ablation': 1,
    'landscape': 1,
    'checkpoint': 1,
}


def output_dir(config, out=None):
    """`out` or the config's output_dir; relative paths resolve under DHA_RUNS_ROOT."""
    path = Path(out or config.output_dir)
    if not path.is_absolute():
        path = Path(settings.DHA_RUNS_ROOT) / path
    return path


def _open(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, 'w', newline='', encoding='utf-8')
    except OSError as exc:
        raise ArtifactWriteError(f"cannot write {path}: {exc.strerror}") from exc


def write_rows(path, header, rows):
    with _open(path) as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    return Path(path)


def write_text(path, text):
    with _open(path) as handle:
        handle.write(text)
    return Path(path)


def export_metrics(records, path):
    return write_rows(path, METRICS_HEADER, (record.as_row() for record in records))


def export_genotype(genotype, path):
    return write_text(path, genotype.to_text())


def export_policy(policy, path):
    return write_text(path, policy.to_text())


def export_genotype_history(history, path):
    return write_rows(path, ('t', 'structural_hash'), history)


def export_ablation(rows, path):
    header = ('mode', 'seeds', 'train_acc', 'holdout_acc', 'wall_time', 'iterations')
    return write_rows(path, header, ([row['mode'], ' '.join(str(s) for s in row['seeds']),
                                      repr(row['train_acc']), repr(row['holdout_acc']),
                                      repr(row['wall_time']), row['iterations']] for row in rows))


def export_landscape(grid, path):
    return write_rows(path, ('a', 'b', 'loss'), ([repr(a), repr(b), repr(loss)] for a, b, loss in grid.rows()))


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, config, artifacts, **extra):
    """
    manifest.json next to the artifacts: the full config, its hash, the
    seed, artifact format versions and digests, and library versions.
    """
    directory = Path(directory)
    manifest = {
        'config': config.to_dict(),
        'config_hash': config_hash(config),
        'seed': config.seed,
        'artifacts': {
            name: {
                'path': Path(path).name,
                'version': ARTIFACT_VERSIONS.get(name, 1),
                'sha256': file_digest(path),
            }
            for name, path in sorted(artifacts.items())
        },
        'libraries': {'numpy': np.__version__, 'scipy': scipy.__version__, 'django': django.get_version()},
        **extra,
    }
    path = write_text(directory / 'manifest.json', json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    logger.info("manifest written path=%s artifacts=%s", path, ",".join(sorted(artifacts)))
    return path


def export_run(trainer, directory, **extra):
    """Every per-run artifact for `trainer`'s current state, plus the manifest."""
    directory = Path(directory)
    state = trainer.state
    artifacts = {
        'metrics': export_metrics(trainer.records, directory / 'metrics.csv'),
        'genotype': export_genotype(state.genotype, directory / 'genotype.txt'),
        'policy': export_policy(state.policy, directory / 'policy.txt'),
        'genotype_history': export_genotype_history(state.history, directory / 'genotype_history.csv'),
    }
    write_manifest(directory, trainer.config, artifacts, iteration=state.iteration,
                   mode=trainer.config.mode, op_share=state.genotype.op_share(), **extra)
    return artifacts
