from pathlib import Path

from rest_framework import serializers

from scheduler.modes import RunMode

from .config import DEFAULTS


def _int(name, **kwargs):
    return serializers.IntegerField(default=DEFAULTS[name], **kwargs)


def _float(name, **kwargs):
    return serializers.FloatField(default=DEFAULTS[name], **kwargs)


def _bool(name):
    return serializers.BooleanField(default=DEFAULTS[name])


def _choice(name, choices):
    return serializers.ChoiceField(choices=choices, default=DEFAULTS[name])


def _path(name):
    return serializers.CharField(default=DEFAULTS[name], allow_blank=True)


class RunConfigSerializer(serializers.Serializer):
    """Typed fields, defaults and ranges for every run configuration key."""

    mode = _choice('mode', [m.value for m in RunMode])

    dataset = _choice('dataset', ['moons', 'blobs', 'csv', 'idx'])
    dataset_size = _int('dataset_size', min_value=2)
    dataset_noise = _float('dataset_noise', min_value=0.0)
    dataset_classes = _int('dataset_classes', min_value=2, max_value=256)
    csv_path = _path('csv_path')
    csv_label_column = _int('csv_label_column')
    csv_header = _bool('csv_header')
    idx_images_path = _path('idx_images_path')
    idx_labels_path = _path('idx_labels_path')
    holdout_fraction = _float('holdout_fraction', min_value=0.0, max_value=0.9)
    hpo_batch_source = _choice('hpo_batch_source', ['train', 'holdout'])

    num_cells = _int('num_cells', min_value=1, max_value=8)
    num_nodes = _int('num_nodes', min_value=1, max_value=6)
    channels = _int('channels', min_value=1, max_value=64)
    stem_stride = _int('stem_stride', min_value=1, max_value=2)

    iterations = _int('iterations', min_value=0)
    phase2_iterations = _int('phase2_iterations', min_value=0)
    warmup = _int('warmup', min_value=0)
    batch_size = _int('batch_size', min_value=1)
    drop_last = _bool('drop_last')

    lr = _float('lr')
    wd = _float('wd')
    lr_min = _float('lr_min')
    lr_max = _float('lr_max')
    wd_min = _float('wd_min', min_value=0.0)
    wd_max = _float('wd_max')
    meta_lr = _float('meta_lr')

    tau_lr = _float('tau_lr', min_value=0.0)
    b_lr = _float('b_lr', min_value=0.0)
    b_init_std = _float('b_init_std', min_value=0.0)
    lasso_lambda = _float('lasso_lambda', min_value=0.0)
    m_ratio = _float('m_ratio', min_value=0.01, max_value=0.99)
    ista_max_iters = _int('ista_max_iters', min_value=1)
    ista_tol = _float('ista_tol', min_value=0.0)
    temperature = _float('temperature')
    da_weight = _choice('da_weight', ['softmax', 'gumbel'])
    update_every_tau = _int('update_every_tau', min_value=1)
    update_every_eta = _int('update_every_eta', min_value=1)
    update_every_b = _int('update_every_b', min_value=1)
    param_limit = _int('param_limit', min_value=0)

    seed = _int('seed', min_value=0, max_value=2**32 - 1)
    log_every = _int('log_every', min_value=1)
    eval_batch_size = _int('eval_batch_size', min_value=1)
    record_wall_clock = _bool('record_wall_clock')
    checkpoint_every = _int('checkpoint_every', min_value=0)
    output_dir = serializers.CharField(default=DEFAULTS['output_dir'])

    landscape_resolution = _int('landscape_resolution', min_value=1, max_value=501)
    landscape_range = _float('landscape_range', min_value=0.0)
    landscape_seed_a = _int('landscape_seed_a', min_value=0)
    landscape_seed_b = _int('landscape_seed_b', min_value=0)
    landscape_batch_size = _int('landscape_batch_size', min_value=1)

    def validate_temperature(self, value):
        if value <= 0:
            raise serializers.ValidationError("must be positive")
        return value

    def validate_meta_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError("must be positive")
        return value

    def validate_lr_min(self, value):
        if value <= 0:
            raise serializers.ValidationError("must be positive")
        return value

    def validate(self, attrs):
        if attrs['lr_max'] < attrs['lr_min']:
            raise serializers.ValidationError({'lr_max': "must not be below lr_min"})
        if not attrs['lr_min'] <= attrs['lr'] <= attrs['lr_max']:
            raise serializers.ValidationError({'lr': f"must lie in [{attrs['lr_min']}, {attrs['lr_max']}]"})
        if attrs['wd_max'] < attrs['wd_min']:
            raise serializers.ValidationError({'wd_max': "must not be below wd_min"})
        if not attrs['wd_min'] <= attrs['wd'] <= attrs['wd_max']:
            raise serializers.ValidationError({'wd': f"must lie in [{attrs['wd_min']}, {attrs['wd_max']}]"})
        if attrs['dataset'] == 'csv':
            self._require_file(attrs, 'csv_path')
        if attrs['dataset'] == 'idx':
            self._require_file(attrs, 'idx_images_path')
            self._require_file(attrs, 'idx_labels_path')
        if attrs['hpo_batch_source'] == 'holdout' and attrs['holdout_fraction'] == 0:
            raise serializers.ValidationError({'hpo_batch_source': "holdout batches need holdout_fraction > 0"})
        return attrs

    @staticmethod
    def _require_file(attrs, key):
        if not attrs[key]:
            raise serializers.ValidationError({key: f"required for dataset = {attrs['dataset']}"})
        if not Path(attrs[key]).is_file():
            raise serializers.ValidationError({key: f"no such file: {attrs[key]}"})
