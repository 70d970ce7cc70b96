from django.core.management.base import CommandError

from experiments.artifacts import export_ablation, output_dir, write_manifest
from experiments.config import load_config
from experiments.runner import DhaCommand
from scheduler.modes import RunMode
from scheduler.trainer import ablation_report


def _modes(text):
    modes = [item.strip() for item in text.split(',') if item.strip()]
    known = {mode.value for mode in RunMode}
    unknown = [mode for mode in modes if mode not in known]
    if unknown or not modes:
        raise CommandError(f"unknown modes {unknown}; choose from {', '.join(sorted(known))}")
    return modes


def _seeds(text):
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise CommandError(f"--seeds expects comma-separated integers, got {text!r}") from None


class Command(DhaCommand):
    help = "Run several modes on paired seeds and write one report row per mode."

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True)
        parser.add_argument('--modes', required=True, help="comma-separated run modes")
        parser.add_argument('--seeds', help="comma-separated seeds (default: the config seed)")
        parser.add_argument('--jobs', type=int, default=1, help="parallel worker processes")
        parser.add_argument('--out', help="output directory (default: the config's output_dir)")

    def execute_command(self, **options):
        modes = _modes(options['modes'])
        config = load_config(options['config'])
        seeds = _seeds(options['seeds']) if options['seeds'] else [config.seed]
        if options['jobs'] < 1:
            raise CommandError(f"--jobs must be at least 1, got {options['jobs']}")
        out = output_dir(config, options['out'])

        rows = ablation_report(modes, config, seeds=seeds, jobs=options['jobs'])
        path = export_ablation(rows, out / 'ablation.csv')
        write_manifest(out, config, {'ablation': path}, modes=modes, seeds=seeds)
        for row in rows:
            self.stdout.write(f"{row['mode']}: train_acc={row['train_acc']:.4f} "
                              f"holdout_acc={row['holdout_acc']:.4f} iterations={row['iterations']}")
        self.stdout.write(self.style.SUCCESS(f"report written to {path}"))
