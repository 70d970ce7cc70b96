import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from dhalab.exceptions import (
    BatchSpecError, CsvFormatError, DatasetError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError,
)

from .batching import BatchSpec, BatchStream
from .datasets import Dataset, split, synth_blobs, synth_moons
from .formats import load_csv, load_idx, minmax_normalize, write_idx


def _best_linear_accuracy(dataset, angles=720):
    """Brute force over directions and thresholds for a 2-D two-class set."""
    best = 0.0
    for theta in np.linspace(0.0, np.pi, angles, endpoint=False):
        proj = dataset.x @ np.array([np.cos(theta), np.sin(theta)])
        order = np.argsort(proj)
        labels = dataset.y[order]
        n = len(labels)
        # predict class 1 above the cut; both orientations
        ones_above = np.concatenate([[labels.sum()], labels.sum() - np.cumsum(labels)])
        zeros_below = np.concatenate([[0], np.cumsum(1 - labels)])
        acc = (ones_above + zeros_below) / n
        best = max(best, acc.max(), (1 - acc).max())
    return best


class SyntheticTests(SimpleTestCase):
    def test_noiseless_moons_on_circles(self):
        data = synth_moons(101, noise=0.0, seed=3)
        upper = data.x[data.y == 0]
        lower = data.x[data.y == 1]
        self.assertLess(np.abs(np.sum(upper ** 2, axis=1) - 1.0).max(), 1e-12)
        self.assertLess(np.abs((lower[:, 0] - 1.0) ** 2 + (lower[:, 1] - 0.5) ** 2 - 1.0).max(), 1e-12)

    def test_same_seed_same_dataset(self):
        for make in (lambda s: synth_moons(50, 0.2, s), lambda s: synth_blobs(50, 3, s)):
            a, b = make(7), make(7)
            np.testing.assert_array_equal(a.x, b.x)
            np.testing.assert_array_equal(a.y, b.y)
            self.assertFalse(np.array_equal(a.x, make(8).x))

    def test_balanced(self):
        for data in (synth_moons(77, seed=1), synth_blobs(77, k=3, seed=1)):
            counts = np.bincount(data.y, minlength=data.num_classes)
            self.assertLessEqual(counts.max() - counts.min(), 1)

    def test_linear_separability(self):
        self.assertLess(_best_linear_accuracy(synth_moons(200, noise=0.1, seed=0)), 1.0)
        self.assertEqual(_best_linear_accuracy(synth_blobs(200, k=2, seed=0)), 1.0)

    def test_too_small(self):
        with self.assertRaises(DatasetError):
            synth_moons(1)
        with self.assertRaises(DatasetError):
            synth_blobs(10, k=1)


class DatasetTests(SimpleTestCase):
    def test_label_range(self):
        with self.assertRaises(DatasetError):
            Dataset(np.zeros((2, 3)), [0, 2], 2, 'vector')

    def test_kind_shape(self):
        with self.assertRaises(DatasetError):
            Dataset(np.zeros((2, 3)), [0, 1], 2, 'image')

    def test_split_partitions(self):
        data = synth_blobs(50, seed=2)
        train, holdout = split(data, 0.2, seed=4)
        self.assertEqual((len(train), len(holdout)), (40, 10))
        rows = {tuple(r) for r in np.concatenate([train.x, holdout.x])}
        self.assertEqual(rows, {tuple(r) for r in data.x})
        self.assertEqual(holdout.provenance['split'], 'holdout')
        again, _ = split(data, 0.2, seed=4)
        np.testing.assert_array_equal(again.x, train.x)


class IdxTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, name, payload):
        path = self.dir / name
        path.write_bytes(payload)
        return path

    def test_hand_built_image(self):
        images = self._write('img', struct.pack('>IIII', 0x803, 1, 2, 2) + bytes([0, 255, 128, 64]))
        labels = self._write('lab', struct.pack('>II', 0x801, 1) + bytes([3]))
        data = load_idx(images, labels)
        self.assertEqual(data.x.shape, (1, 1, 2, 2))
        np.testing.assert_array_equal(data.x.ravel(), [0.0, 1.0, 128 / 255, 64 / 255])
        self.assertEqual(data.y.tolist(), [3])
        self.assertEqual(data.num_classes, 4)

    def test_count_mismatch(self):
        images = self._write('img', struct.pack('>IIII', 0x803, 2, 1, 1) + bytes([1, 2]))
        labels = self._write('lab', struct.pack('>II', 0x801, 1) + bytes([0]))
        with self.assertRaises(IdxCountMismatchError):
            load_idx(images, labels)

    def test_bad_magic(self):
        images = self._write('img', struct.pack('>IIII', 0x801, 1, 1, 1) + bytes([1]))
        labels = self._write('lab', struct.pack('>II', 0x801, 1) + bytes([0]))
        with self.assertRaises(IdxMagicError):
            load_idx(images, labels)

    def test_truncated(self):
        labels = self._write('lab', struct.pack('>II', 0x801, 1) + bytes([0]))
        for payload in (b'\x00\x00', struct.pack('>II', 0x803, 1),
                        struct.pack('>IIII', 0x803, 1, 2, 2) + bytes([0, 1, 2])):
            with self.assertRaises(IdxTruncatedError):
                load_idx(self._write('img', payload), labels)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(5, 1, 3, 4)) / 255.0
        original = Dataset(pixels, rng.integers(0, 10, size=5), 10, 'image')
        write_idx(original, self.dir / 'img', self.dir / 'lab')
        loaded = load_idx(self.dir / 'img', self.dir / 'lab', num_classes=10)
        np.testing.assert_array_equal(loaded.x, original.x)
        np.testing.assert_array_equal(loaded.y, original.y)


class CsvTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'data.csv'

    def tearDown(self):
        self.tmp.cleanup()

    def test_single_row_degenerate(self):
        self.path.write_text("1,2,0\n")
        data = load_csv(self.path, label_column=2)
        np.testing.assert_array_equal(data.x, [[0.0, 0.0]])
        self.assertEqual(data.num_classes, 1)

    def test_two_rows_span(self):
        self.path.write_text("f,label\n0,7\n10,9\n")
        data = load_csv(self.path, label_column=1, header=True)
        np.testing.assert_array_equal(data.x.ravel(), [0.0, 1.0])
        self.assertEqual(data.y.tolist(), [0, 1])

    def test_normalization_idempotent(self):
        x = np.random.default_rng(1).normal(size=(20, 4))
        once = minmax_normalize(x)
        np.testing.assert_allclose(minmax_normalize(once), once, atol=1e-15)
        self.assertTrue(np.all((once >= 0) & (once <= 1)))

    def test_non_numeric_cell(self):
        self.path.write_text("1,2,0\n3,x,1\n")
        with self.assertRaises(CsvFormatError) as ctx:
            load_csv(self.path)
        self.assertIn("row 2", str(ctx.exception))
        self.assertIn("column 2", str(ctx.exception))

    def test_empty_file(self):
        self.path.write_text("")
        with self.assertRaises(CsvFormatError):
            load_csv(self.path)


class BatchStreamTests(SimpleTestCase):
    def setUp(self):
        self.data = synth_blobs(12, seed=0)

    def test_full_batch_is_permutation(self):
        batch = BatchStream('train', self.data, BatchSpec(12, seed=1)).next_batch()
        self.assertEqual(sorted(batch.indices.tolist()), list(range(12)))

    def test_same_seed_same_ids(self):
        a = BatchStream('train', self.data, BatchSpec(5, seed=3))
        b = BatchStream('train', self.data, BatchSpec(5, seed=3))
        for _ in range(7):
            x, y = a.next_batch(), b.next_batch()
            self.assertEqual(x.id, y.id)
            np.testing.assert_array_equal(x.indices, y.indices)

    def test_epoch_covers_each_sample_once(self):
        stream = BatchStream('train', self.data, BatchSpec(4, seed=0))
        seen = np.concatenate([stream.next_batch().indices for _ in range(3)])
        self.assertEqual(np.bincount(seen, minlength=12).tolist(), [1] * 12)
        self.assertEqual(stream.next_batch().id, 'train-1-0')

    def test_short_final_batch(self):
        stream = BatchStream('train', self.data, BatchSpec(5))
        sizes = [len(stream.next_batch()) for _ in range(4)]
        self.assertEqual(sizes, [5, 5, 2, 5])
        dropping = BatchStream('train', self.data, BatchSpec(5, drop_last=True))
        self.assertEqual([len(dropping.next_batch()) for _ in range(3)], [5, 5, 5])

    def test_ids_unique(self):
        stream = BatchStream('hyper', self.data, BatchSpec(5))
        ids = [stream.next_batch().id for _ in range(20)]
        self.assertEqual(len(set(ids)), 20)

    def test_oversized_batch(self):
        with self.assertRaises(BatchSpecError):
            BatchStream('train', self.data, BatchSpec(13, drop_last=True))
        with self.assertRaises(BatchSpecError):
            BatchSpec(0)

    def test_state_round_trip(self):
        stream = BatchStream('train', self.data, BatchSpec(5, seed=9))
        for _ in range(4):
            stream.next_batch()
        state = stream.state_dict()
        expected = [stream.next_batch().indices for _ in range(5)]
        resumed = BatchStream('train', self.data, BatchSpec(5, seed=9))
        resumed.load_state_dict(state)
        for want in expected:
            np.testing.assert_array_equal(resumed.next_batch().indices, want)
