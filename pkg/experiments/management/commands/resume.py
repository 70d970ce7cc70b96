from pathlib import Path

from experiments.artifacts import output_dir
from experiments.checkpoint import checkpoint_load
from experiments.runner import DhaCommand, finish_run, run_hooks


class Command(DhaCommand):
    help = "Continue a run from a checkpoint to the end of its schedule."

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--out', help="output directory (default: the checkpointed config's output_dir)")

    def execute_command(self, **options):
        trainer = checkpoint_load(Path(options['checkpoint']))
        out = output_dir(trainer.config, options['out'])
        hooks = run_hooks(out)
        trainer.on_checkpoint = hooks['on_checkpoint']
        trainer.on_divergence = hooks['on_divergence']
        start = trainer.state.iteration
        finish_run(trainer, out)
        self.stdout.write(self.style.SUCCESS(
            f"resumed at iteration={start} finished at iteration={trainer.state.iteration} out={out}"
        ))
