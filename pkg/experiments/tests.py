import io
import json
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from autodiff import functional as F
from autodiff import no_grad
from dhalab.exceptions import (
    ArtifactWriteError, CheckpointChecksumError, CheckpointError, CheckpointTruncatedError, CheckpointVersionError,
    ConfigError,
)
from scheduler.metrics import METRICS_HEADER
from scheduler.trainer import Trainer, theta_digest

from .artifacts import export_metrics, write_manifest
from .checkpoint import checkpoint_load, checkpoint_save, checkpoint_sections, decode, encode
from .config import DEFAULTS, RunConfig, config_hash, parse_config, serialize_config
from .landscape import filter_normalized_direction, landscape, trainer_landscape, trainer_loss_fn

HEADER_LINE = ('t,train_loss,train_acc,holdout_acc,lr,wd,da_top1,da_top1_p,da_top2,da_top2_p,'
               'da_top3,da_top3_p,alpha_entropy,child_params,ms\n')


def tiny(**overrides):
    base = dict(dataset='blobs', dataset_size=60, num_cells=1, num_nodes=2, channels=4, iterations=6,
                phase2_iterations=3, warmup=0, batch_size=8, eval_batch_size=16, seed=5)
    base.update(overrides)
    return RunConfig(**base)


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class ConfigTests(TempDirMixin, SimpleTestCase):
    def test_empty_text_gives_defaults(self):
        self.assertEqual(parse_config("", environ={}), RunConfig())
        self.assertEqual(set(RunConfig().to_dict()), set(DEFAULTS))

    def test_range_error_names_key_and_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("# schedule\niterations = 10\nbatch_size = -1\n", environ={})
        self.assertEqual(ctx.exception.key, 'batch_size')
        self.assertEqual(ctx.exception.line, 3)
        self.assertIn('batch_size', str(ctx.exception))
        self.assertIsInstance(ctx.exception, ImproperlyConfigured)

    def test_unknown_and_malformed_keys(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("iterations = 3\nlearning_rate = 0.1\n", environ={})
        self.assertEqual((ctx.exception.key, ctx.exception.line), ('learning_rate', 2))
        with self.assertRaises(ConfigError):
            parse_config("iterations 3\n", environ={})
        with self.assertRaises(ConfigError):
            parse_config("seed = 1\nseed = 2\n", environ={})

    def test_type_error(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("channels = eight\n", environ={})
        self.assertEqual(ctx.exception.key, 'channels')

    def test_comments_and_quotes(self):
        config = parse_config("mode = NasOnly  # ablation\noutput_dir = 'runs/a'\n\n# done\n", environ={})
        self.assertEqual(config.mode, 'NasOnly')
        self.assertEqual(config.output_dir, 'runs/a')

    def test_round_trip(self):
        config = replace(RunConfig(), mode='SequentialDHA', lr=0.0123456789, csv_header=True, param_limit=900,
                         ista_tol=3e-11, output_dir='out/x')
        self.assertEqual(parse_config(serialize_config(config), environ={}), config)

    def test_env_overrides_file(self):
        config = parse_config("batch_size = 16\n", environ={'DHA_BATCH_SIZE': '64', 'DHA_MODE': 'NasOnly'})
        self.assertEqual(config.batch_size, 64)
        self.assertEqual(config.mode, 'NasOnly')
        with self.assertRaises(ConfigError) as ctx:
            parse_config("", environ={'DHA_WARMUP': '-3'})
        self.assertIsNone(ctx.exception.line)

    def test_cross_field_ranges(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("lr = 2.0\n", environ={})
        self.assertEqual(ctx.exception.key, 'lr')
        with self.assertRaises(ConfigError) as ctx:
            parse_config("hpo_batch_source = holdout\nholdout_fraction = 0\n", environ={})
        self.assertEqual(ctx.exception.key, 'hpo_batch_source')

    def test_referenced_paths_must_exist(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(f"dataset = csv\ncsv_path = {self.tmp / 'missing.csv'}\n", environ={})
        self.assertEqual((ctx.exception.key, ctx.exception.line), ('csv_path', 2))
        present = self.tmp / 'data.csv'
        present.write_text("0,1\n1,0\n")
        self.assertEqual(parse_config(f"dataset = csv\ncsv_path = {present}\n", environ={}).csv_path, str(present))

    def test_hash_tracks_content(self):
        self.assertEqual(config_hash(RunConfig()), config_hash(RunConfig()))
        self.assertNotEqual(config_hash(RunConfig()), config_hash(RunConfig(seed=1)))


class CheckpointTests(TempDirMixin, SimpleTestCase):
    def _trained(self, **overrides):
        trainer = Trainer(tiny(iterations=3, **overrides))
        trainer.run()
        return trainer

    def test_save_load_save_is_byte_identical(self):
        trainer = self._trained()
        first = checkpoint_save(trainer, self.tmp / 'a.ckpt').read_bytes()
        loaded = checkpoint_load(self.tmp / 'a.ckpt', environ={})
        second = checkpoint_save(loaded, self.tmp / 'b.ckpt').read_bytes()
        self.assertEqual(first, second)
        self.assertEqual(theta_digest(loaded.state.theta), theta_digest(trainer.state.theta))
        self.assertEqual(loaded.state.hp, trainer.state.hp)

    def test_truncated(self):
        raw = encode(checkpoint_sections(self._trained()))
        for cut in (4, 20, len(raw) // 2, len(raw) - 1):
            path = self.tmp / 'cut.ckpt'
            path.write_bytes(raw[:cut])
            with self.assertRaises(CheckpointTruncatedError):
                checkpoint_load(path, environ={})

    def test_checksum(self):
        raw = bytearray(encode(checkpoint_sections(self._trained())))
        raw[len(raw) // 2] ^= 0xFF
        with self.assertRaises(CheckpointChecksumError):
            decode(bytes(raw))

    def test_version_and_magic(self):
        raw = bytearray(encode({'meta': b'{}'}))
        raw[11] += 1
        with self.assertRaises(CheckpointVersionError):
            decode(bytes(raw))
        with self.assertRaises(CheckpointError):
            decode(b'NOTACKPT' + bytes(raw[8:]))

    def test_sections_round_trip(self):
        sections = {'one': b'abc', 'two': b''}
        self.assertEqual(decode(encode(sections)), sections)

    def test_split_run_matches_unbroken(self):
        for mode in ('DHA', 'SequentialDHA'):
            config = tiny(mode=mode, iterations=6, phase2_iterations=3, checkpoint_every=3)
            saved = {}

            def keep(trainer):
                saved[trainer.state.iteration] = checkpoint_save(
                    trainer, self.tmp / f'{mode}-{trainer.state.iteration}.ckpt')

            unbroken = Trainer(config, on_checkpoint=keep)
            unbroken.run()
            resumed = checkpoint_load(saved[3], environ={})
            resumed.run()
            self.assertEqual([r.as_row() for r in resumed.records], [r.as_row() for r in unbroken.records])
            self.assertEqual(theta_digest(resumed.state.theta), theta_digest(unbroken.state.theta))
            self.assertEqual(resumed.state.genotype.structure(), unbroken.state.genotype.structure())


class LandscapeTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.X = rng.normal(size=(40, 3))
        self.y = rng.normal(size=(40, 1))
        self.theta = {'w': rng.normal(size=(3, 1))}

    def _loss(self, theta):
        with no_grad():
            return F.mse_loss(F.matmul(self.X, theta['w']), self.y).item()

    def test_linear_regression_matches_closed_form(self):
        grid = landscape(self._loss, self.theta, resolution=7, span=1.5, seed_a=3, seed_b=4)
        r = self.X @ self.theta['w'] - self.y
        u = self.X @ grid.direction_a['w']
        v = self.X @ grid.direction_b['w']
        for a, b, loss in grid.rows():
            expected = (np.mean(r * r) + 2 * a * np.mean(r * u) + 2 * b * np.mean(r * v)
                        + a * a * np.mean(u * u) + 2 * a * b * np.mean(u * v) + b * b * np.mean(v * v))
            self.assertAlmostEqual(loss, expected, delta=1e-8)

    def test_center_is_current_loss(self):
        grid = landscape(self._loss, self.theta, resolution=5)
        self.assertEqual(grid.center, self._loss(self.theta))
        self.assertEqual(grid.coords[2], 0.0)

    def test_identical_seeds_give_symmetric_grid(self):
        grid = landscape(self._loss, self.theta, resolution=5, seed_a=9, seed_b=9)
        np.testing.assert_array_equal(grid.values, grid.values.T)

    def test_theta_untouched(self):
        before = theta_digest(self.theta)
        landscape(self._loss, self.theta, resolution=3)
        self.assertEqual(theta_digest(self.theta), before)

    def test_filter_normalization(self):
        rng = np.random.default_rng(1)
        theta = {'conv': rng.normal(size=(3, 2, 3, 3)), 'dense': rng.normal(size=(4, 5)), 'bias': np.ones(5)}
        direction = filter_normalized_direction(theta, seed=2)
        np.testing.assert_allclose(np.linalg.norm(direction['conv'].reshape(3, -1), axis=1),
                                   np.linalg.norm(theta['conv'].reshape(3, -1), axis=1))
        np.testing.assert_allclose(np.linalg.norm(direction['dense'], axis=0), np.linalg.norm(theta['dense'], axis=0))
        np.testing.assert_array_equal(direction['bias'], 0.0)

    def test_non_finite_points_are_missing(self):
        def loss(theta):
            return np.inf if theta['w'][0, 0] > self.theta['w'][0, 0] + 1e-12 else 1.0

        with self.assertLogs('experiments', 'WARNING'):
            grid = landscape(loss, self.theta, resolution=5, seed_a=1, seed_b=1)
        self.assertGreater(grid.missing, 0)
        self.assertTrue(np.isnan(grid.values).any())
        self.assertEqual(grid.center, 1.0)

    def test_trainer_center(self):
        trainer = Trainer(tiny(iterations=2, landscape_resolution=3))
        trainer.run()
        grid = trainer_landscape(trainer)
        self.assertEqual(grid.values.shape, (3, 3))
        self.assertEqual(grid.center, trainer_loss_fn(trainer)(trainer.state.theta))


class ArtifactTests(TempDirMixin, SimpleTestCase):
    def test_header_only_csv(self):
        path = export_metrics([], self.tmp / 'metrics.csv')
        self.assertEqual(path.read_text(), HEADER_LINE)
        self.assertEqual(HEADER_LINE.strip().split(','), list(METRICS_HEADER))

    def test_unwritable_path(self):
        blocker = self.tmp / 'file'
        blocker.write_text('x')
        with self.assertRaises(ArtifactWriteError):
            export_metrics([], blocker / 'metrics.csv')

    def test_manifest_records_digests(self):
        path = export_metrics([], self.tmp / 'metrics.csv')
        manifest = json.loads(write_manifest(self.tmp, RunConfig(seed=7), {'metrics': path}).read_text())
        self.assertEqual(manifest['seed'], 7)
        self.assertEqual(manifest['config_hash'], config_hash(RunConfig(seed=7)))
        self.assertEqual(manifest['artifacts']['metrics']['path'], 'metrics.csv')
        self.assertEqual(manifest['config']['seed'], 7)


class CommandTests(TempDirMixin, SimpleTestCase):
    def _config(self, **overrides):
        path = self.tmp / 'run.cfg'
        path.write_text(serialize_config(tiny(**overrides)))
        return path

    def _call(self, *args, **options):
        out = io.StringIO()
        call_command(*args, stdout=out, **options)
        return out.getvalue()

    def test_run_writes_artifacts(self):
        out = self.tmp / 'run'
        self._call('run', config=str(self._config()), out=str(out))
        lines = (out / 'metrics.csv').read_text().splitlines()
        self.assertEqual(lines[0] + '\n', HEADER_LINE)
        self.assertEqual(len(lines), 7)
        self.assertEqual({len(line.split(',')) for line in lines}, {len(METRICS_HEADER)})
        self.assertEqual(len((out / 'genotype.txt').read_text().splitlines()), 4)
        self.assertEqual(len((out / 'policy.txt').read_text().splitlines()), 25)
        manifest = json.loads((out / 'manifest.json').read_text())
        self.assertEqual(manifest['seed'], 5)
        self.assertTrue((out / 'final.ckpt').is_file())

    def test_same_seed_same_csv(self):
        config = self._config()
        self._call('run', config=str(config), out=str(self.tmp / 'a'), seed=11)
        self._call('run', config=str(config), out=str(self.tmp / 'b'), seed=11)
        self.assertEqual((self.tmp / 'a' / 'metrics.csv').read_bytes(), (self.tmp / 'b' / 'metrics.csv').read_bytes())
        manifest = json.loads((self.tmp / 'a' / 'manifest.json').read_text())
        self.assertEqual(manifest['seed'], 11)

    def test_invalid_config_has_no_side_effects(self):
        path = self.tmp / 'bad.cfg'
        path.write_text("batch_size = -1\n")
        with self.assertRaises(CommandError):
            self._call('run', config=str(path), out=str(self.tmp / 'never'))
        self.assertFalse((self.tmp / 'never').exists())

    def test_resume_matches_unbroken_run(self):
        config = self._config(checkpoint_every=3)
        self._call('run', config=str(config), out=str(self.tmp / 'full'))
        checkpoint = self.tmp / 'full' / 'checkpoints' / 'iter-000003.ckpt'
        self.assertTrue(checkpoint.is_file())
        self._call('resume', checkpoint=str(checkpoint), out=str(self.tmp / 'resumed'))
        self.assertEqual((self.tmp / 'full' / 'metrics.csv').read_bytes(),
                         (self.tmp / 'resumed' / 'metrics.csv').read_bytes())

    def test_export_and_landscape(self):
        self._call('run', config=str(self._config()), out=str(self.tmp / 'run'))
        checkpoint = str(self.tmp / 'run' / 'final.ckpt')
        self._call('export', checkpoint=checkpoint, out=str(self.tmp / 'export'))
        self.assertEqual((self.tmp / 'export' / 'metrics.csv').read_bytes(),
                         (self.tmp / 'run' / 'metrics.csv').read_bytes())
        self._call('landscape', checkpoint=checkpoint, res=3, span=0.5, out=str(self.tmp / 'land'))
        rows = (self.tmp / 'land' / 'landscape.csv').read_text().splitlines()
        self.assertEqual(rows[0], 'a,b,loss')
        self.assertEqual(len(rows), 10)
        with self.assertRaises(CommandError):
            self._call('landscape', checkpoint=checkpoint, res=0)

    def test_broken_checkpoint(self):
        path = self.tmp / 'broken.ckpt'
        path.write_bytes(b'DHACKPT\x00\x00')
        with self.assertRaises(CommandError):
            self._call('resume', checkpoint=str(path))

    def test_ablate(self):
        config = self._config(iterations=2, phase2_iterations=2)
        self._call('ablate', config=str(config), modes='NasOnly,DHA', seeds='1,2', out=str(self.tmp / 'abl'))
        rows = (self.tmp / 'abl' / 'ablation.csv').read_text().splitlines()
        self.assertEqual(rows[0], 'mode,seeds,train_acc,holdout_acc,wall_time,iterations')
        self.assertEqual([row.split(',')[0] for row in rows[1:]], ['NasOnly', 'DHA'])
        with self.assertRaises(CommandError):
            self._call('ablate', config=str(config), modes='NasOnly,Bogus')
