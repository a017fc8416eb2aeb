"""End-to-end runs on the real MNIST files.

Skipped unless ``HECSB_DATASET_DIR`` points at a directory holding the four
IDX files (``hecsb fetch-mnist`` downloads them).
"""
import csv
import os
import shutil
import socket
import tempfile
import threading
import unittest
from collections import defaultdict

from hecsb import bottleneck
from hecsb.config import load_config
from hecsb.experiments import evaluate_split, load_datasets, \
    run_latency_experiment, run_recon_experiment, train_split
from hecsb.throttle import latency_model, link_profiles, paced_send

FIXTURE = os.path.join(os.path.dirname(__file__), os.pardir, 'fixtures',
                       'table2_baseline_payloads.csv')


def _rows(path):
    with open(path, newline='') as f:
        return list(csv.DictReader(line for line in f
                                   if not line.startswith('#')))


@unittest.skipUnless(os.environ.get('HECSB_DATASET_DIR'),
                     'HECSB_DATASET_DIR is not set')
class TestMnist(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.config = load_config(overrides={'out_dir': cls.tmp})
        cls.train, cls.test = load_datasets(cls.config)
        cls.teacher = bottleneck.train_teacher(
            cls.train, cls.config.teacher_hidden, cls.config.teacher_epochs,
            cls.config.seed, test=cls.test, gate=cls.config.teacher_gate)
        cls.teacher_top1 = float(
            (cls.teacher.logits(cls.test.images).argmax(axis=1)
             == cls.test.labels).mean())
        cls.splits = {beta: train_split(cls.config, cls.teacher, cls.train,
                                        beta)
                      for beta in sorted(cls.config.betas)}

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    def test_reconstruction_curves(self):
        rows = _rows(run_recon_experiment(self.config))
        errors = defaultdict(dict)
        for row in rows:
            errors[int(row['m'])][row['method']] = float(row['mean_error'])
        for m in (2, 5, 10, 25, 50, 100):
            curve = errors[m]
            assert curve['hecsa'] < curve['vae'] < curve['lasso'], (m, curve)
        assert abs(errors[100]['lasso'] - 0.12) <= 0.05
        assert abs(errors[25]['hecsa'] - 0.08) <= 0.05
        assert abs(errors[50]['hecsa'] - 0.05) <= 0.05
        for method in ('lasso', 'vae', 'hecsa'):
            curve = [errors[m][method] for m in sorted(errors)]
            rises = [later - earlier
                     for earlier, later in zip(curve, curve[1:])
                     if later > earlier]
            assert len(rises) <= 1 and all(r <= 0.01 for r in rises), \
                (method, curve)

    def test_accuracy_retention(self):
        assert self.teacher_top1 >= 0.95
        _, top1 = evaluate_split(self.splits[self.config.beta], self.test)
        assert top1 >= self.teacher_top1 - 0.02

    def test_compression(self):
        raw = 4 * self.teacher.feature_dim
        payloads = [evaluate_split(self.splits[beta], self.test)[0]
                    for beta in sorted(self.splits)]
        assert all(later <= earlier
                   for earlier, later in zip(payloads, payloads[1:]))
        payload, _ = evaluate_split(self.splits[self.config.beta], self.test)
        assert payload <= 0.25 * raw

    def test_payload_per_latent(self):
        for beta, split in self.splits.items():
            if beta >= 0.01:
                payload, _ = evaluate_split(split, self.test)
                assert payload <= 0.5 * self.config.latent_dim, beta

    def test_throttle_fidelity(self):
        for link in link_profiles().values():
            left, right = socket.socketpair()
            self.addCleanup(left.close)
            self.addCleanup(right.close)
            reader = threading.Thread(target=_drain, args=(right, 16350))
            reader.start()
            elapsed = paced_send(left, b'\x00' * 16350, link.rate_bps)
            reader.join(5)
            expected = latency_model(16350, link)
            assert abs(elapsed - expected) <= 0.1 * expected, link.name

    def test_four_g_ordering(self):
        split = self.splits[self.config.beta]
        path = run_latency_experiment(self.config, split, self.test, FIXTURE)
        rows = [r for r in _rows(path)
                if r['link'] == '4g' and r['codec'] != 'raw']
        rows.sort(key=lambda r: float(r['transfer_ms']))
        assert [r['codec'] for r in rows] == \
            ['hecs-b', 'SVB', 'CR+BQ', 'Neural Compression', 'WebP', 'PNG']


def _drain(sock, size):
    total = 0
    while total < size:
        chunk = sock.recv(65536)
        if not chunk:
            break
        total += len(chunk)
