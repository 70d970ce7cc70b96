from pathlib import Path

from experiments.artifacts import export_run, output_dir
from experiments.checkpoint import checkpoint_load
from experiments.runner import DhaCommand


class Command(DhaCommand):
    help = "Write metrics, genotype, policy and manifest for a checkpointed run."

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--out', help="output directory (default: the checkpointed config's output_dir)")

    def execute_command(self, **options):
        trainer = checkpoint_load(Path(options['checkpoint']))
        out = output_dir(trainer.config, options['out'])
        artifacts = export_run(trainer, out, checkpoint=str(options['checkpoint']))
        self.stdout.write(self.style.SUCCESS(f"exported {', '.join(sorted(artifacts))} to {out}"))
