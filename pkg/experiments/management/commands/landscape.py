from dataclasses import replace
from pathlib import Path

from django.core.management.base import CommandError

from experiments.artifacts import export_landscape, output_dir, write_manifest
from experiments.checkpoint import checkpoint_load
from experiments.landscape import trainer_landscape
from experiments.runner import DhaCommand
from scheduler.trainer import theta_digest


class Command(DhaCommand):
    help = "Evaluate the loss surface around a checkpointed model along two filter-normalized directions."

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--res', type=int, help="grid resolution R (default: landscape_resolution)")
        parser.add_argument('--range', type=float, dest='span', help="grid half-width r (default: landscape_range)")
        parser.add_argument('--out', help="output directory (default: the checkpointed config's output_dir)")

    def execute_command(self, **options):
        if options['res'] is not None and options['res'] < 1:
            raise CommandError(f"--res must be at least 1, got {options['res']}")
        if options['span'] is not None and options['span'] < 0:
            raise CommandError(f"--range must be non-negative, got {options['span']}")
        trainer = checkpoint_load(Path(options['checkpoint']))
        config = trainer.config
        if options['res'] is not None:
            config = replace(config, landscape_resolution=options['res'])
        if options['span'] is not None:
            config = replace(config, landscape_range=options['span'])
        out = output_dir(config, options['out'])

        before = theta_digest(trainer.state.theta)
        grid = trainer_landscape(trainer, config)
        if theta_digest(trainer.state.theta) != before:
            raise CommandError("landscape evaluation changed the model weights")

        path = export_landscape(grid, out / 'landscape.csv')
        write_manifest(out, config, {'landscape': path}, checkpoint=str(options['checkpoint']),
                       iteration=trainer.state.iteration, theta_sha256=before)
        self.stdout.write(self.style.SUCCESS(
            f"landscape {grid.resolution}x{grid.resolution} center={grid.center:.6f} "
            f"missing={grid.missing} out={path}"
        ))
