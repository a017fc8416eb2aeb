# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Experiment drivers writing plot-ready CSV.

Every output starts with ``#`` comment lines recording the seeds and subset
sizes, followed by a fixed header row:

* reconstruction: ``method,m,mean_error,std_error,seconds``, with the
  per-image errors in ``<name>_images.csv`` as ``method,m,image_index,error``
  and, for HECSA, a checkpoint and an ``epoch,loss,frobenius,lagrange``
  training curve per m
* rate-distortion: ``beta,bytes,top1``
* latency: ``link,codec,transfer_ms,total_ms,payload_bytes,saving``

Rows are flushed as they are produced; a run that fails leaves the rows
written so far followed by an ``# aborted`` line.
"""
import csv
import os
import time

import numpy as np

from hecsb import bottleneck, checkpoint, log
from hecsb.client import SplitClient
from hecsb.config import ExperimentConfig
from hecsb.datasets import load_idx, load_mnist
from hecsb.errors import CheckpointError, ConfigError, HecsbError
from hecsb.hecsa import hecsa_reconstruct, hecsa_state, train_hecsa
from hecsb.models import ReconMethod, ReconReport, RdPoint
from hecsb.nn import accuracy
from hecsb.sensing import gaussian_operator, ista_lasso, measure, \
    recon_error, select_lambda
from hecsb.server import TailServer
from hecsb.throttle import latency_model
from hecsb.utils import make_rng, spawn_seeds
from hecsb.vae import train_vae, vae_reconstruct

RECON_FIELDS = ['method', 'm', 'mean_error', 'std_error', 'seconds']
RECON_IMAGE_FIELDS = ['method', 'm', 'image_index', 'error']
HECSA_CURVE_FIELDS = ['epoch', 'loss', 'frobenius', 'lagrange']
RD_FIELDS = ['beta', 'bytes', 'top1']
LATENCY_FIELDS = ['link', 'codec', 'transfer_ms', 'total_ms',
                  'payload_bytes', 'saving']

HECSB_CODEC = 'hecs-b'
RAW_CODEC = 'raw'


class CsvReport(object):
    def __init__(self, path, fields, comments=()):
        directory = os.path.dirname(path)
        try:
            if directory:
                os.makedirs(directory, exist_ok=True)
            self._file = open(path, 'w', newline='', encoding='utf-8')
        except OSError as e:
            raise ConfigError(f'{path}: cannot write output:'
                              f' {e.strerror}') from e
        self.path = path
        for comment in comments:
            self.comment(comment)
        self._writer = csv.DictWriter(self._file, fieldnames=fields,
                                      lineterminator='\n')
        self._writer.writeheader()
        self._file.flush()

    def row(self, **values):
        self._writer.writerow(values)
        self._file.flush()

    def comment(self, text):
        self._file.write(f'# {text}\n')
        self._file.flush()

    def abort(self, error):
        self.comment(f'aborted {type(error).__name__}: {error}')

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(value):
    return f'{value:.6f}'


def load_datasets(config: ExperimentConfig):
    """MNIST train and test sets cut to the configured subsets."""
    train = load_mnist(config.dataset_dir, 'train')
    test = load_mnist(config.dataset_dir, 'test')
    if config.train_subset:
        train = train.subset(config.train_subset)
    if config.test_subset:
        test = test.subset(config.test_subset)
    return train, test


def _recon_images(config: ExperimentConfig):
    """``(train images, test images)`` for the reconstruction curves.

    An explicit IDX image file (e.g. converted Omniglot) is split into its
    first ``recon_subset`` images for testing and the rest for training.
    """
    if config.images:
        images = load_idx(config.images).images
        test = images[:config.recon_subset]
        train = images[config.recon_subset:
                       config.recon_subset + config.recon_train_subset]
        if len(train) == 0:
            raise ConfigError(f'{config.images}: no images left for'
                              f' training after the test subset')
        return train, test
    train = load_mnist(config.dataset_dir, 'train').images
    test = load_mnist(config.dataset_dir, 'test').images
    return train[:config.recon_train_subset], test[:config.recon_subset]


def save_hecsa(model, history, directory, m):
    """Writes ``hecsa_m<m>.ckpt`` and its ``hecsa_m<m>.csv`` training curve."""
    ckpt = os.path.join(directory, f'hecsa_m{m}.ckpt')
    try:
        os.makedirs(directory, exist_ok=True)
        checkpoint.save(ckpt, hecsa_state(model))
    except OSError as e:
        raise CheckpointError(f'{ckpt}: {e.strerror}') from e
    curve = os.path.join(directory, f'hecsa_m{m}.csv')
    comment = f'm={m} sigma={model.sigma} bound={model.frobenius_bound:.6g}'
    with CsvReport(curve, HECSA_CURVE_FIELDS, [comment]) as report:
        for epoch, (loss, norm, lagrange) in enumerate(zip(
                history.loss, history.frobenius, history.lagrange)):
            report.row(epoch=epoch, loss=_fmt(loss), frobenius=_fmt(norm),
                       lagrange=f'{lagrange:.6g}')
    return ckpt, curve


def recon_errors(method, m, config: ExperimentConfig, train, test, seed,
                 vae=None, model_dir=None):
    """Per-image errors of one method at ``m`` measurements.

    A trained HECSA model is saved to ``model_dir`` when one is given.
    """
    n = test.shape[1]
    op = gaussian_operator(m, n, seed, config.sigma)
    rng = make_rng(seed + 1)
    if method == ReconMethod.LASSO:
        lam = select_lambda(op, train[:config.lambda_subset],
                            config.lambda_grid, seed, config.ista_iters)
        y = measure(op, test, rng)
        x_hat = np.clip(ista_lasso(op, y, lam, config.ista_iters), 0.0, 1.0)
    elif method == ReconMethod.VAE:
        y = measure(op, test, rng)
        x_hat, _ = vae_reconstruct(vae, op, y, config.vae_steps,
                                   config.vae_restarts, rng)
        x_hat = np.clip(x_hat, 0.0, 1.0)
    else:
        model, history = train_hecsa(train, m, config.sigma,
                                     epochs=config.hecsa_epochs, seed=seed,
                                     batch_size=config.batch_size,
                                     lr=config.learning_rate)
        if model_dir is not None:
            save_hecsa(model, history, model_dir, m)
        y = measure(model.operator(), test, rng)
        x_hat = hecsa_reconstruct(model, y)
    return recon_error(test, x_hat)


def run_recon_experiment(config: ExperimentConfig, train=None, test=None,
                         path=None):
    if train is None or test is None:
        train, test = _recon_images(config)
    methods = sorted({ReconMethod(m) for m in config.methods},
                     key=lambda m: m.value)
    counts = sorted(config.measurement_counts)
    seeds = spawn_seeds(config.seed, len(counts))
    path = path or os.path.join(config.out_dir, 'recon.csv')
    stem, ext = os.path.splitext(path)
    images_path = f'{stem}_images{ext}'
    model_dir = os.path.dirname(path) or '.'
    comments = [f'seed={config.seed} sigma={config.sigma}'
                f' test_images={len(test)} train_images={len(train)}',
                'operator_seeds=' + ','.join(str(s) for s in seeds)]

    with CsvReport(path, RECON_FIELDS, comments) as report, \
            CsvReport(images_path, RECON_IMAGE_FIELDS, comments) as per_image:
        vae = None
        for method in methods:
            for m, seed in zip(counts, seeds):
                start = time.perf_counter()
                try:
                    if method == ReconMethod.VAE and vae is None:
                        vae = train_vae(train, config.vae_latent_dim,
                                        config.vae_epochs, config.seed,
                                        config.batch_size,
                                        config.learning_rate)
                    errors = recon_errors(method, m, config, train, test,
                                          seed, vae, model_dir)
                except HecsbError as e:
                    log.error('reconstruction failed', method=method.value,
                              m=m, error=e)
                    report.abort(e)
                    per_image.abort(e)
                    raise
                result = ReconReport(method.value, m,
                                     [float(e) for e in errors],
                                     time.perf_counter() - start)
                for index, error in enumerate(result.errors):
                    per_image.row(method=result.method, m=result.m,
                                  image_index=index, error=_fmt(error))
                report.row(method=result.method, m=result.m,
                           mean_error=_fmt(result.mean_error),
                           std_error=_fmt(result.std_error),
                           seconds=f'{result.seconds:.3f}')
                log.info('reconstruction', method=method.value, m=m,
                         error=result.mean_error, seconds=result.seconds)
    return path


def teacher_for(config: ExperimentConfig, train, test):
    """The saved teacher of ``model_dir`` or a freshly trained one."""
    if config.model_dir:
        path = os.path.join(config.model_dir, bottleneck.TEACHER_FILE)
        if os.path.exists(path):
            return bottleneck.load_teacher(path)
    return bottleneck.train_teacher(train, config.teacher_hidden,
                                    config.teacher_epochs, config.seed,
                                    test=test, gate=config.teacher_gate,
                                    batch_size=config.batch_size,
                                    lr=config.learning_rate)


def train_split(config: ExperimentConfig, teacher, train, beta=None):
    beta = config.beta if beta is None else beta
    model = bottleneck.train_bottleneck_stage1(
        teacher, train, config.latent_dim, beta, config.stage1_epochs,
        config.seed, config.batch_size, config.learning_rate,
        config.encoder_hidden)
    return bottleneck.finetune_stage2(
        teacher, model, train, config.alpha, config.tau,
        config.stage2_epochs, config.seed, config.batch_size,
        config.learning_rate)


def evaluate_split(split, dataset):
    """Mean coded payload bytes per image and top-1 through the split."""
    payloads = []
    logits = []
    for x in dataset.images:
        z, bs = bottleneck.head_infer(split, x)
        _, image_logits = bottleneck.tail_infer(split, bs, z.shape)
        payloads.append(len(bs.data))
        logits.append(image_logits)
    return float(np.mean(payloads)), accuracy(np.stack(logits),
                                              dataset.labels)


def run_rd_experiment(config: ExperimentConfig, teacher=None, train=None,
                      test=None, path=None):
    if train is None or test is None:
        train, test = load_datasets(config)
    teacher = teacher or teacher_for(config, train, test)
    teacher_top1 = accuracy(teacher.logits(test.images), test.labels)
    raw_bytes = 4 * teacher.feature_dim
    path = path or os.path.join(config.out_dir, 'rd.csv')
    comments = [f'seed={config.seed} latent_dim={config.latent_dim}'
                f' alpha={config.alpha} tau={config.tau}'
                f' test_images={len(test)}',
                f'teacher_top1={_fmt(teacher_top1)}'
                f' raw_feature_bytes={raw_bytes}']

    points = []
    with CsvReport(path, RD_FIELDS, comments) as report:
        for beta in sorted(config.betas):
            try:
                split = train_split(config, teacher, train, beta)
            except HecsbError as e:
                log.error('bottleneck training failed', beta=beta, error=e)
                report.comment(f'diverged beta={beta}'
                               f' {type(e).__name__}: {e}')
                continue
            payload, top1 = evaluate_split(split, test)
            point = RdPoint(beta, payload, top1)
            points.append(point)
            report.row(beta=beta, bytes=_fmt(point.payload_bytes),
                       top1=_fmt(point.top1))
            log.info('rd point', beta=beta, payload_bytes=payload, top1=top1)
        for point in points:
            saving = bottleneck.bandwidth_saving(point.payload_bytes,
                                                 raw_bytes)
            report.comment(f'beta={point.beta} saving={_fmt(saving)}')
    return path


def load_baseline_payloads(path):
    """``[(codec, payload bytes)]`` from a ``codec,payload_bytes`` CSV."""
    try:
        with open(path, 'r', newline='', encoding='utf-8') as f:
            rows = [line for line in f if not line.startswith('#')]
    except OSError as e:
        raise ConfigError(f'{path}: {e.strerror}') from e
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or \
            not {'codec', 'payload_bytes'} <= set(reader.fieldnames):
        raise ConfigError(f'{path}: expected columns codec,payload_bytes')
    baselines = []
    for number, row in enumerate(reader, start=2):
        try:
            baselines.append((row['codec'].strip(),
                              int(row['payload_bytes'])))
        except (TypeError, ValueError) as e:
            raise ConfigError(f'{path}:{number}: bad payload size') from e
    return baselines


def measure_link(client: SplitClient, head, images, link, raw=False):
    """Median transfer ms, median total ms and median payload bytes."""
    transfer, total, payload = [], [], []
    infer = client.infer_raw if raw else client.infer
    for x in images:
        _, _, report = infer(head, x, link)
        transfer.append(report.transfer_ms)
        total.append(report.total_ms)
        payload.append(report.payload_bytes)
    return (float(np.median(transfer)), float(np.median(total)),
            int(np.median(payload)))


def run_latency_experiment(config: ExperimentConfig, split=None, test=None,
                           baseline_csv=None, address=None, path=None):
    """Measures throttled loopback inference for every link profile.

    Without ``address`` a tail server is started on an ephemeral loopback
    port for the duration of the run.
    """
    if split is None:
        if not config.model_dir:
            raise ConfigError('latency needs a trained split (model_dir)')
        split = bottleneck.load_split(config.model_dir)
    if test is None:
        test = load_mnist(config.dataset_dir, 'test')
    images = test.images[:config.latency_repeats]
    baseline_csv = baseline_csv or config.baseline_csv
    baselines = load_baseline_payloads(baseline_csv) if baseline_csv else []
    path = path or os.path.join(config.out_dir, 'latency.csv')
    comments = [f'seed={config.seed} images={len(images)} statistic=median',
                'links=' + ','.join(f'{link.name}:{link.rate_bps:g}bps'
                                    f'/{link.rtt_ms:g}ms'
                                    for link in config.links.values())]

    server = None
    if address is None:
        server = TailServer(split.tail, '127.0.0.1', 0).start()
        address = server.address
    try:
        with CsvReport(path, LATENCY_FIELDS, comments) as report, \
                SplitClient(address[0], address[1],
                            config.timeout_ms) as client:
            try:
                client.handshake(split.head.digest())
                for link in config.links.values():
                    measured = [(codec, measure_link(client, split.head,
                                                     images, link, raw))
                                for codec, raw in ((HECSB_CODEC, False),
                                                   (RAW_CODEC, True))]
                    # savings are relative to the raw feature frame
                    reference = dict(measured)[RAW_CODEC][2]
                    for codec, (transfer, total, payload) in measured:
                        saving = bottleneck.bandwidth_saving(payload,
                                                             reference)
                        report.row(link=link.name, codec=codec,
                                   transfer_ms=_fmt(transfer),
                                   total_ms=_fmt(total),
                                   payload_bytes=payload,
                                   saving=_fmt(saving))
                        log.info('latency', link=link.name, codec=codec,
                                 transfer_ms=transfer, total_ms=total,
                                 payload_bytes=payload, saving=saving)
                    for codec, payload in baselines:
                        report.row(link=link.name, codec=codec,
                                   transfer_ms=_fmt(latency_model(payload,
                                                                  link)),
                                   total_ms='nan', payload_bytes=payload,
                                   saving='nan')
            except HecsbError as e:
                report.abort(e)
                raise
    finally:
        if server is not None:
            server.close()
    return path
