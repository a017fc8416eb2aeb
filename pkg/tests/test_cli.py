import io
import os
import shutil
import struct
import tempfile
import unittest

import mock
import numpy as np

from hecsb import bottleneck
from hecsb.cli import build_parser, main
from tests import factories


def _write_idx(directory, prefix, dataset):
    pixels = np.rint(dataset.images * 255).astype(np.uint8)
    with open(os.path.join(directory, f'{prefix}-images-idx3-ubyte'),
              'wb') as f:
        f.write(struct.pack('>IIII', 2051, len(pixels), 4, 4))
        f.write(pixels.tobytes())
    with open(os.path.join(directory, f'{prefix}-labels-idx1-ubyte'),
              'wb') as f:
        f.write(struct.pack('>II', 2049, len(pixels)))
        f.write(dataset.labels.astype(np.uint8).tobytes())


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.tmp)
        patcher = mock.patch('sys.stderr', new_callable=io.StringIO)
        self.stderr = patcher.start()
        self.addCleanup(patcher.stop)

    def _tiny_config(self):
        dataset = factories.tiny_dataset()
        _write_idx(self.tmp, 'train', dataset)
        _write_idx(self.tmp, 't10k', dataset)
        config = os.path.join(self.tmp, 'tiny.conf')
        with open(config, 'w') as f:
            f.write('teacher_hidden = 8\nteacher_epochs = 1\n'
                    'teacher_gate = 0\nbatch_size = 16\n')
        return config

    def test_usage_error(self):
        assert main([]) == 2
        assert main(['recon', '--seed', 'one']) == 2

    def test_version(self):
        with mock.patch('sys.stdout', new_callable=io.StringIO) as out:
            assert main(['--version']) == 0
        assert out.getvalue().startswith('hecsb ')

    def test_error_line(self):
        missing = os.path.join(self.tmp, 'absent.conf')
        assert main(['recon', '--config', missing]) == 1
        line = self.stderr.getvalue().strip()
        assert line.startswith('error=ConfigError message=')
        assert missing in line

    def test_bad_flag_value(self):
        assert main(['rd', '--betas', 'big']) == 1
        assert 'error=ConfigError' in self.stderr.getvalue()

    def test_missing_model(self):
        assert main(['serve', '--model-dir', self.tmp]) == 1
        assert 'error=CheckpointError' in self.stderr.getvalue()

    def test_missing_dataset(self):
        assert main(['train-teacher', '--dataset', self.tmp]) == 1
        assert 'error=IngestError' in self.stderr.getvalue()

    def test_train_teacher(self):
        config = self._tiny_config()
        model_dir = os.path.join(self.tmp, 'model')
        with mock.patch('sys.stdout', new_callable=io.StringIO) as out:
            assert main(['train-teacher', '--config', config, '--dataset',
                         self.tmp, '--model-dir', model_dir]) == 0
        path = os.path.join(model_dir, bottleneck.TEACHER_FILE)
        assert out.getvalue().strip() == path
        assert bottleneck.load_teacher(path).feature_dim == 8

    def test_unwritable_model_dir(self):
        config = self._tiny_config()
        blocker = os.path.join(self.tmp, 'blocker')
        with open(blocker, 'w') as f:
            f.write('x')
        with mock.patch('sys.stdout', new_callable=io.StringIO):
            assert main(['train-teacher', '--config', config, '--dataset',
                         self.tmp, '--model-dir',
                         os.path.join(blocker, 'model')]) == 1
        assert self.stderr.getvalue().startswith('error=CheckpointError')

    def test_parser_defaults(self):
        args = build_parser().parse_args(['infer', '--link', '4g'])
        assert args.count == 10
        assert args.link == '4g'
        args = build_parser().parse_args(['fetch-mnist'])
        assert args.url.startswith('https://')
