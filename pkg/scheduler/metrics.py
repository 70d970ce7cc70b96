from dataclasses import dataclass
from typing import Tuple

METRICS_HEADER = (
    't', 'train_loss', 'train_acc', 'holdout_acc', 'lr', 'wd',
    'da_top1', 'da_top1_p', 'da_top2', 'da_top2_p', 'da_top3', 'da_top3_p',
    'alpha_entropy', 'child_params', 'ms',
)


@dataclass(frozen=True)
class MetricsRecord:
    """One logged iteration. `da_top` holds up to three (pair, probability) entries."""
    t: int
    train_loss: float
    train_acc: float
    holdout_acc: float
    lr: float
    wd: float
    da_top: Tuple[Tuple[str, float], ...]
    alpha_entropy: float
    child_params: int
    ms: float = 0.0

    def as_row(self):
        top = list(self.da_top)[:3] + [('', '')] * (3 - len(self.da_top[:3]))
        cells = [self.t, self.train_loss, self.train_acc, self.holdout_acc, self.lr, self.wd]
        for pair, p in top:
            cells.extend([pair, p])
        cells.extend([self.alpha_entropy, self.child_params, self.ms])
        return [_cell(value) for value in cells]

    @classmethod
    def from_row(cls, row):
        values = dict(zip(METRICS_HEADER, row))
        top = tuple((values[f'da_top{k}'], float(values[f'da_top{k}_p']))
                    for k in (1, 2, 3) if values[f'da_top{k}'])
        return cls(
            t=int(values['t']),
            train_loss=float(values['train_loss']),
            train_acc=float(values['train_acc']),
            holdout_acc=float(values['holdout_acc']),
            lr=float(values['lr']),
            wd=float(values['wd']),
            da_top=top,
            alpha_entropy=float(values['alpha_entropy']),
            child_params=int(values['child_params']),
            ms=float(values['ms']),
        )


def _cell(value):
    if isinstance(value, float):
        return repr(float(value))
    return str(value)
