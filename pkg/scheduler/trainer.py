"""
The search loop.

One joint step draws augmentation pairs, runs the relaxed supernet on the
augmented batch and then updates, in order, the policy logits tau, the
network weights theta, the architecture codes b (and their alpha) and the
optimizer hyper-parameters eta. Run modes switch blocks off and chain a
search phase with a from-scratch training phase.
"""
import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Tuple

import numpy as np

from augment.policy import DaPolicy, augment_batch, da_gradient, sample_pairs, sample_transforms, update_tau
from augment.transforms import catalog
from autodiff import Graph, Tensor, no_grad
from autodiff import functional as F
from dataio.batching import BatchSpec, BatchStream
from dataio.sources import train_holdout
from dhalab.exceptions import (
    BatchDisciplineError, IstaDivergenceError, NonFiniteGradientError, TrainingDivergedError,
)
from hpo.optimizer import HyperParams, hypergrad, optimizer_step, update_hparams
from nas.architecture import ArchState, alpha_entropy, update_b
from nas.genotype import Genotype, extract_child, param_count, repair_genotype
from nas.space import CellSpace, NetworkSpec
from nas.supernet import Supernet

from .metrics import MetricsRecord
from .modes import RunMode, is_sequential, phase_plan

logger = logging.getLogger(__name__)

RNG_STREAMS = ('init', 'train', 'hyper', 'gumbel', 'augment', 'phase2')

# hyper-stream draws tried before a sample-identical batch is an error
HYPER_BATCH_ATTEMPTS = 8


@dataclass(frozen=True, eq=False)
class TrainState:
    iteration: int
    theta: Mapping[str, np.ndarray]
    policy: DaPolicy
    hp: HyperParams
    arch: ArchState
    genotype: Genotype
    phase: int = 0
    phase_step: int = 0
    fixed_genotype: Optional[Genotype] = None
    # (iteration, structural hash) at every change of the extracted child
    history: Tuple[Tuple[int, str], ...] = ()


def accuracy(logits, labels):
    if len(labels) == 0:
        return math.nan
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def theta_digest(theta):
    digest = hashlib.sha256()
    for name in sorted(theta):
        digest.update(name.encode('utf-8'))
        digest.update(np.ascontiguousarray(theta[name], dtype=np.float64).tobytes())
    return digest.hexdigest()


def hyper_params(config):
    return HyperParams(lr=config.lr, wd=config.wd, lr_min=config.lr_min, lr_max=config.lr_max,
                       wd_min=config.wd_min, wd_max=config.wd_max, meta_lr=config.meta_lr)


class Trainer:
    """
    Owns one run: datasets, batch streams, rng streams and the current
    TrainState. `on_checkpoint(trainer)` fires every `checkpoint_every`
    iterations; `on_divergence(trainer)` dumps the pre-step state and
    returns the dump path.
    """

    def __init__(self, config, toggles=None, on_checkpoint=None, on_divergence=None, datasets=None):
        self.config = config
        self.toggles = toggles
        self.plan = phase_plan(config.mode, toggles)
        self.on_checkpoint = on_checkpoint
        self.on_divergence = on_divergence

        self.train_set, self.holdout_set = datasets if datasets is not None else train_holdout(config)
        self.spec = NetworkSpec(tuple(self.train_set.input_shape), self.train_set.num_classes,
                                channels=config.channels, num_cells=config.num_cells,
                                stem_stride=config.stem_stride)
        self.space = CellSpace(num_nodes=config.num_nodes)
        self.supernet = Supernet(self.spec, self.space)

        seeds = np.random.SeedSequence(config.seed).spawn(len(RNG_STREAMS))
        self.rngs = {name: np.random.default_rng(seed) for name, seed in zip(RNG_STREAMS, seeds)}
        hyper_source = self.holdout_set if config.hpo_batch_source == 'holdout' else self.train_set
        self.train_stream = BatchStream('train', self.train_set, BatchSpec(
            config.batch_size, seed=int(self.rngs['train'].integers(2**32)), drop_last=config.drop_last))
        self.hyper_stream = BatchStream('hyper', hyper_source, BatchSpec(
            config.batch_size, seed=int(self.rngs['hyper'].integers(2**32)), drop_last=config.drop_last))

        size = min(config.eval_batch_size, len(self.holdout_set))
        self.eval_set = self.holdout_set.subset(np.arange(size)) if size else None
        self.records = []
        self.state = self.initial_state()

    def initial_state(self):
        cfg = self.config
        theta = self.supernet.init_params(self.rngs['init'])
        arch = ArchState.initialize(self.space, self.rngs['init'], m_ratio=cfg.m_ratio, b_init_std=cfg.b_init_std,
                                    lam=cfg.lasso_lambda, max_iters=cfg.ista_max_iters, tol=cfg.ista_tol)
        genotype = self.extract(arch)
        return TrainState(
            iteration=0,
            theta=theta,
            policy=DaPolicy.uniform(catalog(self.train_set.kind), temperature=cfg.temperature),
            hp=hyper_params(cfg),
            arch=arch,
            genotype=genotype,
            history=((0, genotype.structural_hash()),),
        )

    def extract(self, arch):
        child = extract_child(arch, self.space)
        return repair_genotype(child, arch, self.space, self.spec, self.config.limit)

    def phase_iterations(self, index):
        return self.config.iterations if index == 0 else self.config.phase2_iterations

    def node_weights(self, state, b_tensors=None):
        if state.fixed_genotype is not None:
            return state.fixed_genotype.node_weights(self.space)
        return state.arch.relaxed_weights(b_tensors)

    def enter_phase(self, state, index):
        phase = self.plan[index]
        fixed = state.genotype if phase.child else state.fixed_genotype
        theta = state.theta
        if phase.reinit:
            theta = self.supernet.init_params(self.rngs['phase2'])
        if fixed is not None:
            theta = {name: theta[name] for name in self.supernet.child_param_names(fixed)}
        logger.info("phase start name=%s index=%d iteration=%d child=%s params=%d",
                    phase.name, index, state.iteration, phase.child, param_count(state.genotype, self.spec))
        return replace(state, phase=index, phase_step=0, theta=theta, fixed_genotype=fixed,
                       genotype=fixed if fixed is not None else state.genotype)

    # one iteration

    def dha_step(self, state, batch):
        """(state', metrics record or None) after one joint iteration on `batch`."""
        if len(batch) == 0:
            raise ValueError("dha_step needs a non-empty batch")
        try:
            return self._step(state, batch)
        except (NonFiniteGradientError, IstaDivergenceError) as exc:
            raise self._diverged(state.iteration + 1, getattr(exc, 'what', 'ISTA iterate')) from exc

    def _step(self, state, batch):
        """
        Blocks run as: sample transforms, forward with the relaxed weights of
        the current alpha, tau, theta, b, then eta on a fresh batch. The child
        is extracted from the updated alpha at the end of the step and carried
        in the state, so every step starts from the child of its own starting
        alpha; the initial child comes from `initial_state`.
        """
        cfg = self.config
        toggles = self.plan[state.phase].toggles
        t = state.iteration + 1
        warm = state.phase_step < cfg.warmup
        searching = state.fixed_genotype is None
        do_tau = toggles.update_tau and not warm and t % cfg.update_every_tau == 0
        do_b = toggles.update_b and searching and not warm and t % cfg.update_every_b == 0
        do_eta = toggles.update_eta and toggles.update_theta and not warm and t % cfg.update_every_eta == 0
        started = time.perf_counter()

        x = batch.x
        draw = None
        if toggles.augment:
            draw = sample_pairs(state.policy, len(batch), self.rngs['gumbel'], cfg.da_weight)
            x = augment_batch(x, sample_transforms(state.policy, draw, self.rngs['augment']))

        theta = {name: Tensor(value, requires_grad=toggles.update_theta, name=name)
                 for name, value in state.theta.items()}
        codes = state.arch.b_tensors() if do_b else None
        with Graph() as graph:
            logits = self.supernet.forward(theta, x, self.node_weights(state, codes))
            losses = F.cross_entropy(logits, batch.y, reduction='none')
            loss = F.mean(losses)
            if not np.isfinite(loss.item()):
                raise NonFiniteGradientError("training loss", t)
            if loss.requires_grad:
                graph.backward(loss)

        policy = state.policy
        if do_tau:
            _, grad = da_gradient(policy, draw, losses.data, cfg.da_weight)
            policy = update_tau(policy, grad, cfg.tau_lr, iteration=t)

        theta_next, cache = state.theta, None
        if toggles.update_theta:
            grads = {name: p.grad for name, p in theta.items() if p.grad is not None}
            theta_next, cache = optimizer_step(state.theta, grads, state.hp, iteration=t)

        arch = state.arch
        if do_b:
            arch = update_b(arch, [code.grad for code in codes], cfg.b_lr)

        hp = state.hp
        if do_eta:
            hp = self._update_eta(state, theta_next, cache, batch, t)

        genotype = state.fixed_genotype if not searching else self.extract(arch)
        history = state.history
        if genotype.structural_hash() != history[-1][1]:
            history = history + ((t, genotype.structural_hash()),)
        nxt = replace(state, iteration=t, phase_step=state.phase_step + 1, theta=theta_next, policy=policy,
                      hp=hp, arch=arch, genotype=genotype, history=history)

        record = None
        if t % cfg.log_every == 0:
            record = MetricsRecord(
                t=t,
                train_loss=loss.item(),
                train_acc=accuracy(logits.data, batch.y),
                holdout_acc=self.holdout_accuracy(nxt),
                lr=float(hp.lr),
                wd=float(hp.wd),
                da_top=tuple(policy.top(3)),
                alpha_entropy=alpha_entropy(arch.alphas),
                child_params=param_count(genotype, self.spec),
                ms=(time.perf_counter() - started) * 1000.0 if cfg.record_wall_clock else 0.0,
            )
            logger.debug("step t=%d loss=%.6f lr=%.6g wd=%.6g", t, record.train_loss, hp.lr, hp.wd)
        return nxt, record

    def hyper_batch(self, batch, t):
        """
        Next hyper-stream batch whose samples differ from `batch`. A draw over
        the same dataset holding exactly the same samples is skipped.
        """
        same_source = self.hyper_stream.dataset is self.train_stream.dataset
        for _ in range(HYPER_BATCH_ATTEMPTS):
            fresh = self.hyper_stream.next_batch()
            if fresh.id == batch.id:
                raise BatchDisciplineError(f"hyper-parameter batch {fresh.id} reuses the weight-update batch")
            if not (same_source and np.array_equal(np.sort(fresh.indices), np.sort(batch.indices))):
                return fresh
            logger.debug("hyper batch %s repeats the samples of %s, drawing again", fresh.id, batch.id)
        raise BatchDisciplineError(
            f"iteration {t}: {HYPER_BATCH_ATTEMPTS} hyper-parameter batches in a row held the samples of {batch.id}"
        )

    def _update_eta(self, state, theta_next, cache, batch, t):
        fresh = self.hyper_batch(batch, t)
        params = {name: Tensor(value, requires_grad=True, name=name) for name, value in theta_next.items()}
        with Graph() as graph:
            loss = F.cross_entropy(self.supernet.forward(params, fresh.x, self.node_weights(state)), fresh.y)
            if not np.isfinite(loss.item()):
                raise NonFiniteGradientError("hyper-parameter batch loss", t)
            graph.backward(loss)
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        return update_hparams(state.hp, hypergrad(grads, cache, state.hp, iteration=t), iteration=t)

    def _diverged(self, iteration, what):
        dump = self.on_divergence(self) if self.on_divergence is not None else None
        logger.error("diverged iteration=%d what=%s dump=%s", iteration, what, dump)
        return TrainingDivergedError(iteration, what, dump)

    # evaluation

    def evaluate(self, dataset, state=None):
        """Accuracy of the current model on `dataset`, in eval-sized chunks."""
        state = state or self.state
        if dataset is None or len(dataset) == 0:
            return math.nan
        weights = self.node_weights(state)
        hits = 0
        with no_grad():
            for start in range(0, len(dataset), self.config.eval_batch_size):
                stop = start + self.config.eval_batch_size
                logits = self.supernet.forward(state.theta, dataset.x[start:stop], weights).data
                hits += int(np.sum(np.argmax(logits, axis=1) == dataset.y[start:stop]))
        return hits / len(dataset)

    def holdout_accuracy(self, state):
        if self.eval_set is None:
            return math.nan
        with no_grad():
            logits = self.supernet.forward(state.theta, self.eval_set.x, self.node_weights(state)).data
        return accuracy(logits, self.eval_set.y)

    # driving

    def run(self):
        """Continue from the current state to the end of the last phase."""
        cfg = self.config
        logger.info("run start mode=%s seed=%d iteration=%d phases=%s", cfg.mode, cfg.seed,
                    self.state.iteration, ",".join(p.name for p in self.plan))
        while True:
            budget = self.phase_iterations(self.state.phase)
            while self.state.phase_step < budget:
                if cfg.warmup and self.state.phase_step == cfg.warmup:
                    logger.info("warm-up end iteration=%d", self.state.iteration)
                self.state, record = self.dha_step(self.state, self.train_stream.next_batch())
                if record is not None:
                    self.records.append(record)
                if cfg.checkpoint_every and self.state.iteration % cfg.checkpoint_every == 0 and self.on_checkpoint:
                    self.on_checkpoint(self)
            if self.state.phase == len(self.plan) - 1:
                break
            self.state = self.enter_phase(self.state, self.state.phase + 1)
        logger.info("run end mode=%s iteration=%d genotype=%s lr=%.6g wd=%.6g",
                    cfg.mode, self.state.iteration, self.state.genotype.structural_hash()[:12],
                    self.state.hp.lr, self.state.hp.wd)
        return self.state, self.state.genotype, list(self.records)


def run(config, **hooks):
    """Run whatever `config.mode` names."""
    return Trainer(config, **hooks).run()


def run_dha(config, toggles=None, **hooks):
    """The joint loop; `toggles` switches individual blocks off."""
    if toggles is None:
        config = replace(config, mode=RunMode.DHA.value)
    return Trainer(config, toggles=toggles, **hooks).run()


def run_sequential(config, **hooks):
    """Search phase, then the fixed child trained from scratch. Non-sequential modes run SequentialDHA."""
    if not is_sequential(config.mode):
        config = replace(config, mode=RunMode.SequentialDHA.value)
    return Trainer(config, **hooks).run()


def _single_run(config):
    started = time.perf_counter()
    trainer = Trainer(config)
    state, genotype, _ = trainer.run()
    return {
        'train_acc': trainer.evaluate(trainer.train_set),
        'holdout_acc': trainer.evaluate(trainer.holdout_set),
        'wall_time': time.perf_counter() - started,
        'iterations': state.iteration,
        'genotype': genotype.structural_hash(),
    }


def _row(mode, seeds, results):
    return {
        'mode': str(RunMode(mode)),
        'seeds': list(seeds),
        'train_acc': float(np.mean([r['train_acc'] for r in results])),
        'holdout_acc': float(np.mean([r['holdout_acc'] for r in results])),
        'wall_time': float(sum(r['wall_time'] for r in results)),
        'iterations': int(results[0]['iterations']),
        'runs': results,
    }


def run_ablation(mode, config, seeds=None):
    """
    Report row for one mode: final clean train and holdout accuracy (means
    over `seeds`), total wall time and iterations per run.
    """
    seeds = [config.seed] if seeds is None else list(seeds)
    results = [_single_run(replace(config, mode=str(RunMode(mode)), seed=seed)) for seed in seeds]
    return _row(mode, seeds, results)


def ablation_report(modes, config, seeds=None, jobs=1):
    """One row per mode, in the order given; runs are spread over `jobs` processes."""
    seeds = [config.seed] if seeds is None else list(seeds)
    modes = [RunMode(mode) for mode in modes]
    if jobs <= 1:
        return [run_ablation(mode, config, seeds) for mode in modes]
    configs = [replace(config, mode=str(mode), seed=seed) for mode in modes for seed in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(_single_run, configs))
    n = len(seeds)
    return [_row(mode, seeds, results[i * n:(i + 1) * n]) for i, mode in enumerate(modes)]


# modes from the expected best holdout accuracy down
ORDERING_CHAIN = ('DHA', 'NasPlusDA_joint', 'NasPlusDA_seq', 'NasOnly')


def ordering_violations(rows, chain, tie=0.005):
    """
    Adjacent pairs of `chain` (modes, expected best first) whose mean holdout
    accuracy drops by more than `tie`. Each violation is logged.
    """
    means = {row['mode']: row['holdout_acc'] for row in rows}
    violations = []
    for better, worse in zip(chain, chain[1:]):
        gap = means[better] - means[worse]
        if gap < -tie:
            logger.warning("ablation order violated %s=%.4f < %s=%.4f", better, means[better], worse, means[worse])
            violations.append((better, worse, gap))
    return violations
