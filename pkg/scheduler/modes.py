"""Run modes: which blocks each phase updates and how many phases a mode has."""
from dataclasses import dataclass
from enum import Enum


class RunMode(str, Enum):
    DHA = 'DHA'
    SequentialDHA = 'SequentialDHA'
    NasOnly = 'NasOnly'
    NasPlusDA_joint = 'NasPlusDA_joint'
    NasPlusHPO_joint = 'NasPlusHPO_joint'
    NasPlusDA_seq = 'NasPlusDA_seq'
    NasPlusHPO_seq = 'NasPlusHPO_seq'
    DAplusHPO_joint = 'DAplusHPO_joint'
    DAplusHPO_seq = 'DAplusHPO_seq'

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Toggles:
    update_theta: bool = True
    update_tau: bool = False
    update_eta: bool = False
    update_b: bool = False
    augment: bool = False

    def __post_init__(self):
        if self.update_tau and not self.augment:
            raise ValueError("the policy can only learn from augmented batches; set augment with update_tau")

    @property
    def active(self):
        return tuple(name for name, on in vars(self).items() if on)


FROZEN = Toggles(update_theta=False)
NAS = Toggles(update_b=True)
ALL = Toggles(update_tau=True, update_eta=True, update_b=True, augment=True)


@dataclass(frozen=True)
class Phase:
    """
    One training phase.

    `child` phases train the genotype fixed at phase entry with one-hot
    slot weights; otherwise the relaxed supernet is trained. `reinit`
    draws fresh network weights on entry.
    """
    name: str
    toggles: Toggles
    child: bool = False
    reinit: bool = False


def _seq(second, first=NAS, child=True):
    return (Phase('search', first), Phase('train', second, child=child, reinit=True))


PHASE_PLANS = {
    RunMode.DHA: (Phase('joint', ALL),),
    RunMode.NasOnly: (Phase('joint', NAS),),
    RunMode.NasPlusDA_joint: (Phase('joint', Toggles(update_tau=True, update_b=True, augment=True)),),
    RunMode.NasPlusHPO_joint: (Phase('joint', Toggles(update_eta=True, update_b=True)),),
    RunMode.DAplusHPO_joint: (Phase('joint', Toggles(update_tau=True, update_eta=True, augment=True)),),
    RunMode.SequentialDHA: _seq(Toggles(update_tau=True, update_eta=True, augment=True)),
    RunMode.NasPlusDA_seq: _seq(Toggles(update_tau=True, augment=True)),
    RunMode.NasPlusHPO_seq: _seq(Toggles(update_eta=True)),
    # policy search first, then hyper-parameter tuning under the frozen policy
    RunMode.DAplusHPO_seq: _seq(Toggles(update_eta=True, augment=True),
                                first=Toggles(update_tau=True, augment=True), child=False),
}


def phase_plan(mode, toggles=None):
    """Phases for `mode`; explicit `toggles` replace the plan with one joint phase."""
    if toggles is not None:
        return (Phase('joint', toggles),)
    return PHASE_PLANS[RunMode(mode)]


def is_sequential(mode):
    return len(PHASE_PLANS[RunMode(mode)]) > 1
