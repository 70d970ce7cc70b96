"""
Run configuration: a frozen record of every knob, parsed from line-oriented
`key = value` text with `DHA_<KEY>` environment overrides.
"""
import hashlib
import os
from dataclasses import asdict, dataclass, fields

from dhalab.exceptions import ConfigError


@dataclass(frozen=True)
class RunConfig:
    mode: str = 'DHA'

    # data
    dataset: str = 'blobs'
    dataset_size: int = 500
    dataset_noise: float = 0.1
    dataset_classes: int = 2
    csv_path: str = ''
    csv_label_column: int = -1
    csv_header: bool = False
    idx_images_path: str = ''
    idx_labels_path: str = ''
    holdout_fraction: float = 0.2
    hpo_batch_source: str = 'train'

    # supernet
    num_cells: int = 2
    num_nodes: int = 4
    channels: int = 8
    stem_stride: int = 1

    # schedule
    iterations: int = 2000
    phase2_iterations: int = 2000
    warmup: int = 200
    batch_size: int = 32
    drop_last: bool = False

    # hyper-parameters and their bounds
    lr: float = 0.05
    wd: float = 0.0003
    lr_min: float = 1e-5
    lr_max: float = 1.0
    wd_min: float = 0.0
    wd_max: float = 0.1
    meta_lr: float = 0.001

    # policy and architecture steps
    tau_lr: float = 1.0
    b_lr: float = 0.1
    b_init_std: float = 0.3
    lasso_lambda: float = 1e-4
    m_ratio: float = 0.5
    ista_max_iters: int = 200
    ista_tol: float = 1e-8
    temperature: float = 1.0
    da_weight: str = 'softmax'
    update_every_tau: int = 1
    update_every_eta: int = 1
    update_every_b: int = 1
    param_limit: int = 0

    # bookkeeping
    seed: int = 0
    log_every: int = 1
    eval_batch_size: int = 256
    record_wall_clock: bool = False
    checkpoint_every: int = 0
    output_dir: str = 'runs'

    # loss landscape
    landscape_resolution: int = 51
    landscape_range: float = 1.0
    landscape_seed_a: int = 1
    landscape_seed_b: int = 2
    landscape_batch_size: int = 256

    @property
    def limit(self):
        """Parameter budget, None when unconstrained."""
        return self.param_limit or None

    def to_dict(self):
        return asdict(self)


DEFAULTS = {f.name: f.default for f in fields(RunConfig)}
ENV_PREFIX = 'DHA_'


def _strip_comment(line):
    for i, char in enumerate(line):
        if char == '#' and (i == 0 or line[i - 1].isspace()):
            return line[:i]
    return line


def _unquote(value):
    if len(value) >= 2 and value[0] == value[-1] and value[0] in '"\'':
        return value[1:-1]
    return value


def read_entries(text):
    """{key: (raw value, line number)} from config text."""
    entries = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ConfigError(key or line, "expected 'key = value'", number)
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown key", number)
        if key in entries:
            raise ConfigError(key, f"duplicate key (first set on line {entries[key][1]})", number)
        entries[key] = (_unquote(value.strip()), number)
    return entries


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    return {key: environ[ENV_PREFIX + key.upper()] for key in DEFAULTS if ENV_PREFIX + key.upper() in environ}


def parse_config(text, environ=None, overrides=None):
    """
    Validated RunConfig from config text.

    Precedence, lowest first: defaults, file values, `DHA_<KEY>`
    environment variables, explicit `overrides` (command-line flags).
    """
    from .serializers import RunConfigSerializer

    entries = read_entries(text)
    data = {key: value for key, (value, _) in entries.items()}
    data.update(env_overrides(environ))
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        key, messages = next(iter(serializer.errors.items()))
        line = entries[key][1] if key in entries else None
        raise ConfigError(key, " ".join(str(m) for m in messages), line)
    return RunConfig(**serializer.validated_data)


def load_config(path, environ=None, overrides=None):
    try:
        with open(path, encoding='utf-8') as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError('config', f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, environ, overrides)


def _render(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config):
    return "".join(f"{key} = {_render(value)}\n" for key, value in config.to_dict().items())


def config_hash(config):
    return hashlib.sha256(serialize_config(config).encode('utf-8')).hexdigest()
