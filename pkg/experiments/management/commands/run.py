from experiments.artifacts import output_dir
from experiments.config import load_config
from experiments.runner import DhaCommand, finish_run, run_hooks
from scheduler.trainer import Trainer


class Command(DhaCommand):
    help = "Run one search (any mode) from a config file and export its artifacts."

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help="key = value config file")
        parser.add_argument('--seed', type=int, help="overrides the config seed")
        parser.add_argument('--out', help="output directory (default: the config's output_dir)")

    def execute_command(self, **options):
        config = load_config(options['config'], overrides={'seed': options['seed']})
        out = output_dir(config, options['out'])
        trainer = Trainer(config, **run_hooks(out))
        finish_run(trainer, out)
        state = trainer.state
        self.stdout.write(self.style.SUCCESS(
            f"mode={config.mode} seed={config.seed} iterations={state.iteration} "
            f"holdout_acc={trainer.evaluate(trainer.holdout_set):.4f} out={out}"
        ))
