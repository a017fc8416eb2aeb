import gzip
import os
import shutil
import struct
import tempfile
import unittest

import mock
import numpy as np
import requests

from hecsb.datasets import ImageDataset, fetch_mnist, load_idx, load_mnist
from hecsb.errors import ArgumentError, IngestError

PIXELS = bytes([0, 255, 51, 102, 10, 20, 30, 40, 0, 0, 0, 255])


def _images_bytes(count=3, rows=2, cols=2, pixels=PIXELS, magic=2051):
    return struct.pack('>IIII', magic, count, rows, cols) + pixels


def _labels_bytes(labels=(7, 0, 3), magic=2049):
    return struct.pack('>II', magic, len(labels)) + bytes(labels)


class TestIdx(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.tmp)

    def _write(self, name, data, compress=False):
        path = os.path.join(self.tmp, name)
        opener = gzip.open if compress else open
        with opener(path, 'wb') as f:
            f.write(data)
        return path

    def test_load(self):
        dataset = load_idx(self._write('img', _images_bytes()),
                           self._write('lbl', _labels_bytes()))
        assert dataset.images.shape == (3, 4)
        assert dataset.images.dtype == np.float32
        assert dataset.images[0, 1] == 1.0
        assert abs(dataset.images[0, 2] - 0.2) < 1e-7
        assert dataset.labels.tolist() == [7, 0, 3]

    def test_gzip(self):
        dataset = load_idx(self._write('img.gz', _images_bytes(), True),
                           self._write('lbl.gz', _labels_bytes(), True))
        assert len(dataset) == 3
        assert dataset.dim == 4

    def test_images_only(self):
        assert load_idx(self._write('img', _images_bytes())).labels is None

    def test_bad_magic_names_file(self):
        path = self._write('img', _images_bytes(magic=2049))
        with self.assertRaises(IngestError) as ctx:
            load_idx(path)
        assert path in str(ctx.exception)

    def test_truncated(self):
        with self.assertRaises(IngestError):
            load_idx(self._write('img', _images_bytes()[:-1]))
        with self.assertRaises(IngestError):
            load_idx(self._write('short', b'\x00\x00\x08'))

    def test_label_count_mismatch(self):
        with self.assertRaises(IngestError):
            load_idx(self._write('img', _images_bytes()),
                     self._write('lbl', _labels_bytes((1, 2))))

    def test_missing_file(self):
        with self.assertRaises(IngestError):
            load_idx(os.path.join(self.tmp, 'nothing'))

    def test_load_mnist_from_directory(self):
        self._write('t10k-images-idx3-ubyte.gz', _images_bytes(), True)
        self._write('t10k-labels-idx1-ubyte', _labels_bytes())
        assert len(load_mnist(self.tmp, 'test')) == 3
        with self.assertRaises(IngestError):
            load_mnist(self.tmp, 'train')

    def test_unknown_split(self):
        with self.assertRaises(ArgumentError):
            load_mnist(self.tmp, 'validation')


class TestImageDataset(unittest.TestCase):
    def test_pixel_range(self):
        with self.assertRaises(ArgumentError):
            ImageDataset(np.full((2, 3), 1.5))

    def test_label_count(self):
        with self.assertRaises(ArgumentError):
            ImageDataset(np.zeros((2, 3)), [1])

    def test_subset(self):
        dataset = ImageDataset(np.linspace(0, 1, 20).reshape(10, 2),
                               np.arange(10))
        assert dataset.subset(3).labels.tolist() == [0, 1, 2]
        seeded = dataset.subset(4, seed=1)
        assert seeded.labels.tolist() == dataset.subset(4, seed=1) \
            .labels.tolist()
        assert len(dataset.subset(50)) == 10


class TestFetch(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.tmp)

    @mock.patch('hecsb.datasets.requests.get')
    def test_downloads_missing_files(self, mock_get):
        mock_get.return_value = mock.Mock(content=b'idx')
        paths = fetch_mnist(self.tmp, 'http://mirror.test/mnist/')
        assert len(paths) == 4
        assert mock_get.call_count == 4
        mock_get.assert_any_call(
            'http://mirror.test/mnist/train-images-idx3-ubyte.gz',
            timeout=mock.ANY)
        for path in paths:
            with open(path, 'rb') as f:
                assert f.read() == b'idx'

        mock_get.reset_mock()
        fetch_mnist(self.tmp, 'http://mirror.test/mnist')
        mock_get.assert_not_called()

    @mock.patch('hecsb.datasets.requests.get')
    def test_download_failure(self, mock_get):
        mock_get.side_effect = requests.exceptions.ConnectionError('down')
        with self.assertRaises(IngestError):
            fetch_mnist(self.tmp, 'http://mirror.test')
        assert not any(name.endswith('.gz') for name in os.listdir(self.tmp))
