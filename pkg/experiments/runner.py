"""Glue between the management commands and the library: hooks, output layout."""
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from dhalab.exceptions import DHAError

from .artifacts import export_run
from .checkpoint import checkpoint_save

logger = logging.getLogger(__name__)


def run_hooks(out):
    """Periodic checkpoints under out/checkpoints and a divergence dump at out/diverged.ckpt."""
    out = Path(out)

    def on_checkpoint(trainer):
        checkpoint_save(trainer, out / 'checkpoints' / f'iter-{trainer.state.iteration:06d}.ckpt')

    def on_divergence(trainer):
        return checkpoint_save(trainer, out / 'diverged.ckpt')

    return {'on_checkpoint': on_checkpoint, 'on_divergence': on_divergence}


def finish_run(trainer, out):
    trainer.run()
    artifacts = export_run(trainer, out)
    checkpoint_save(trainer, Path(out) / 'final.ckpt')
    return artifacts


class DhaCommand(BaseCommand):
    """Runs `execute_command` and reports library errors as CommandError."""

    def handle(self, *args, **options):
        try:
            return self.execute_command(**options)
        except DHAError as exc:
            logger.error("%s failed: %s", self.__class__.__module__.rsplit('.', 1)[-1], exc)
            raise CommandError(str(exc)) from exc

    def execute_command(self, **options):
        raise NotImplementedError
