import os
import tempfile
import unittest

import numpy as np

from hecsb import checkpoint
from hecsb.errors import CheckpointError


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tensors = {
            'encoder.0.weight': np.arange(6, dtype=np.float32).reshape(2, 3),
            'prior.support_bound': np.array(32, dtype=np.float32),
            'empty': np.zeros((0, 4), dtype=np.float32),
        }

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'model.ckpt')
            checkpoint.save(path, self.tensors)
            loaded = checkpoint.load(path)
        assert list(loaded) == list(self.tensors)
        for name, value in self.tensors.items():
            assert loaded[name].shape == value.shape
            assert np.array_equal(loaded[name], value)

    def test_layout_is_little_endian(self):
        data = checkpoint.dumps({'a': np.array([1.0], dtype=np.float32)})
        assert data[:6] == b'HECSB1'
        # name length 1, name, rank 1, extent 1, value
        assert data[6:10] == b'\x01\x00\x00\x00'
        assert data[-4:] == np.array([1.0], dtype='<f4').tobytes()

    def test_bad_magic(self):
        with self.assertRaises(CheckpointError):
            checkpoint.loads(b'NOTACKPT')

    def test_truncated(self):
        data = checkpoint.dumps(self.tensors)
        with self.assertRaises(CheckpointError):
            checkpoint.loads(data[:-3])

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            checkpoint.load('/nonexistent/model.ckpt')

    def test_save_into_missing_directory(self):
        with self.assertRaises(CheckpointError):
            checkpoint.save('/nonexistent/dir/model.ckpt', self.tensors)
