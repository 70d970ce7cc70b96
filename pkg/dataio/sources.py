import logging

from .datasets import split, synth_blobs, synth_moons
from .formats import load_csv, load_idx

logger = logging.getLogger(__name__)


def dataset_from_config(config):
    """The full dataset a run configuration names."""
    if config.dataset == 'moons':
        return synth_moons(config.dataset_size, noise=config.dataset_noise, seed=config.seed)
    if config.dataset == 'blobs':
        return synth_blobs(config.dataset_size, k=config.dataset_classes, seed=config.seed)
    if config.dataset == 'csv':
        return load_csv(config.csv_path, label_column=config.csv_label_column, header=config.csv_header)
    if config.dataset == 'idx':
        return load_idx(config.idx_images_path, config.idx_labels_path)
    raise ValueError(f"unknown dataset source {config.dataset!r}")


def train_holdout(config):
    data = dataset_from_config(config)
    train, holdout = split(data, config.holdout_fraction, seed=config.seed)
    logger.info("dataset source=%s kind=%s train=%d holdout=%d classes=%d",
                config.dataset, data.kind, len(train), len(holdout), data.num_classes)
    return train, holdout
