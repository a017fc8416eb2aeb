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

"""Bottleneck injection into a teacher classifier and the split models.

The bottleneck is fitted by feature mimicry, then distilled end to end.
"""
import hashlib
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hecsb import checkpoint, codec, constants, log
from hecsb.codec import Bitstream, CdfTable
from hecsb.errors import ArgumentError, CheckpointError, DecodeError, \
    StateError, SupportRangeError, TrainingError
from hecsb.models import Activation, StageLog
from hecsb.nn import AdamState, Mlp, accuracy, adam_step, \
    cross_entropy_with_grad, kd_loss_with_grad, prefixed
from hecsb.prior import FactorizedPrior
from hecsb.utils import batches, check_last_dim, check_non_negative, \
    check_positive, make_rng

HEAD_FILE = 'head.ckpt'
TAIL_FILE = 'tail.ckpt'
TABLE_FILE = 'prior.cdf'
TEACHER_FILE = 'teacher.ckpt'
DIGEST_KEY = 'meta.digest'


@dataclass
class TeacherModel:
    front: Mlp
    tail: Mlp
    frozen: bool = False

    def __post_init__(self):
        if self.front.out_dim != self.tail.in_dim:
            raise ArgumentError(f'front produces {self.front.out_dim}'
                                f' features, tail expects {self.tail.in_dim}')

    @property
    def in_dim(self):
        return self.front.in_dim

    @property
    def feature_dim(self):
        return self.front.out_dim

    @property
    def classes(self):
        return self.tail.out_dim

    def features(self, x):
        return self.front.predict(x)

    def logits(self, x):
        return self.tail.predict(self.front.predict(x))

    def parameters(self):
        params = self.front.parameters('front.')
        params.update(self.tail.parameters('tail.'))
        return params

    def state_dict(self):
        state = self.front.state_dict('front.')
        state.update(self.tail.state_dict('tail.'))
        return state

    @classmethod
    def from_state(cls, state):
        return cls(Mlp.from_state(state, 'front.'),
                   Mlp.from_state(state, 'tail.'), frozen=True)


@dataclass
class BottleneckModel:
    encoder: Mlp
    decoder: Mlp
    prior: FactorizedPrior
    beta: float
    history: StageLog = field(default_factory=StageLog)

    def __post_init__(self):
        if self.encoder.out_dim != self.prior.dim:
            raise ArgumentError(f'encoder produces {self.encoder.out_dim}'
                                f' latents, prior covers {self.prior.dim}')
        if self.decoder.in_dim != self.prior.dim:
            raise ArgumentError(f'decoder expects {self.decoder.in_dim}'
                                f' latents, prior covers {self.prior.dim}')
        check_non_negative(self.beta, 'beta')

    @property
    def latent_dim(self):
        return self.prior.dim

    def parameters(self):
        params = self.encoder.parameters('encoder.')
        params.update(self.decoder.parameters('decoder.'))
        params.update(self.prior.parameters('prior.'))
        return params


@dataclass
class SplitHead:
    """Device half: encoder, quantizer and entropy encoder."""
    encoder: Mlp
    prior: FactorizedPrior
    table: CdfTable
    teacher_front: Optional[Mlp] = None
    fingerprint: Optional[bytes] = None

    @property
    def in_dim(self):
        return self.encoder.in_dim

    @property
    def latent_dim(self):
        return self.encoder.out_dim

    def digest(self):
        return _fingerprint(self)


@dataclass
class SplitTail:
    """Server half: entropy decoder, bottleneck decoder and student tail."""
    decoder: Mlp
    student_tail: Mlp
    table: CdfTable
    teacher_tail: Optional[Mlp] = None
    prior: Optional[FactorizedPrior] = None
    fingerprint: Optional[bytes] = None

    @property
    def latent_dim(self):
        return self.decoder.in_dim

    def digest(self):
        return _fingerprint(self)

    def logits_from_latent(self, z):
        z = np.asarray(z, dtype=self.decoder.dtype)
        return self.student_tail.predict(self.decoder.predict(z))


@dataclass
class SplitModel:
    head: SplitHead
    tail: SplitTail
    history: StageLog = field(default_factory=StageLog)

    def __post_init__(self):
        if self.head.table != self.tail.table:
            raise StateError('head and tail carry different prior tables')
        if self.head.latent_dim != self.tail.latent_dim:
            raise StateError(f'head produces {self.head.latent_dim} latents,'
                             f' tail expects {self.tail.latent_dim}')
        digest = split_digest(self.head, self.tail)
        for part in (self.head, self.tail):
            if part.fingerprint not in (None, digest):
                raise StateError('head and tail belong to different splits')
        self.head.fingerprint = self.tail.fingerprint = digest

    def predict_logits(self, x):
        """Monolithic forward pass with the same quantization as the head."""
        z = quantize(self.head.encoder.predict(x),
                     self.head.prior.support_bound)
        return self.tail.logits_from_latent(z)


def build_teacher(n=constants.IMAGE_DIM, hidden=constants.TEACHER_HIDDEN,
                  classes=10, seed=constants.DEFAULT_SEED):
    if len(hidden) < 1:
        raise ArgumentError('the teacher needs at least one hidden layer')
    rng = make_rng(seed)
    front = Mlp.build([n, hidden[0]], rng, output=Activation.RELU)
    tail = Mlp.build([hidden[0], *hidden[1:], classes], rng)
    return TeacherModel(front, tail)


def train_teacher(dataset, hidden=constants.TEACHER_HIDDEN,
                  epochs=constants.TEACHER_EPOCHS,
                  seed=constants.DEFAULT_SEED, test=None,
                  gate=constants.TEACHER_ACCURACY_GATE,
                  batch_size=constants.BATCH_SIZE,
                  lr=constants.LEARNING_RATE):
    """Cross-entropy training; freezes the model and checks the accuracy gate
    on ``test`` when one is given."""
    images, labels = _labeled(dataset)
    check_positive(epochs, 'epochs')
    classes = int(np.max(labels)) + 1 if test is None else \
        int(max(np.max(labels), np.max(test.labels))) + 1
    teacher = build_teacher(images.shape[1], hidden, max(classes, 2), seed)
    rng = make_rng(seed + 1)
    state = AdamState(lr=lr)
    params = teacher.parameters()
    for epoch in range(epochs):
        total = 0.0
        for idx in batches(len(images), batch_size, rng):
            h = teacher.front.forward(images[idx])
            logits = teacher.tail.forward(h)
            loss, dlogits = cross_entropy_with_grad(logits, labels[idx])
            tail_grads, dh = teacher.tail.backward(dlogits)
            front_grads, _ = teacher.front.backward(dh)
            grads = prefixed(front_grads, 'front.')
            grads.update(prefixed(tail_grads, 'tail.'))
            adam_step(params, grads, state)
            total += loss * len(idx)
        epoch_loss = total / len(images)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f'teacher training diverged at epoch {epoch}')
        log.info('teacher epoch', epoch=epoch, loss=epoch_loss)
    teacher.frozen = True

    if test is not None:
        top1 = accuracy(teacher.logits(test.images), test.labels)
        log.info('teacher trained', top1=top1)
        if gate is not None and top1 < gate:
            raise TrainingError(f'teacher top-1 {top1:.4f} is below the'
                                f' gate {gate}')
    return teacher


def encode_train(encoder: Mlp, x, rng, cache=False):
    """``f(x) + u`` with fresh ``u ~ U(-1/2, 1/2)`` per call."""
    z = encoder.forward(x, cache)
    u = make_rng(rng).uniform(-0.5, 0.5, size=np.shape(z))
    return z + u.astype(z.dtype)


def quantize(z, support_bound=constants.SUPPORT_BOUND):
    """Round half to even into int32, bounded by ``+-support_bound``."""
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise ArgumentError('latent has non-finite entries')
    q = np.rint(z)
    outside = np.abs(q) > support_bound
    if np.any(outside):
        raise SupportRangeError(f'latent value {z[outside].flat[0]:.3f}'
                                f' outside the prior support'
                                f' +-{support_bound}')
    return q.astype(np.int32)


def rd_loss(model: BottleneckModel, x, h, rng, beta=None):
    """Batch mean of ``distortion + beta * rate`` and its gradients.

    Returns ``(loss, grads, terms)``; ``terms`` holds the mean distortion and
    mean rate (nats) separately.
    """
    beta = model.beta if beta is None else beta
    check_non_negative(beta, 'beta')
    x = np.atleast_2d(np.asarray(x, dtype=model.encoder.dtype))
    h = np.atleast_2d(np.asarray(h, dtype=model.decoder.dtype))
    if x.shape[0] == 0 or x.shape[0] != h.shape[0]:
        raise ArgumentError(f'x and h must be non-empty batches of equal'
                            f' length, got {x.shape} and {h.shape}')
    check_last_dim(h, model.decoder.out_dim, 'h')
    b = x.shape[0]

    z_noisy = encode_train(model.encoder, x, rng, cache=True)
    h_rec = model.decoder.forward(z_noisy)
    diff = h_rec - h
    distortion = float(0.5 * np.sum(diff.astype(np.float64) ** 2) / b)
    nll, dz_prior, dloc, dlog_scale = model.prior.nll_with_grad(z_noisy)
    rate = float(np.mean(nll))
    loss = distortion + beta * rate
    if not np.isfinite(loss):
        raise TrainingError('rate-distortion loss is not finite')

    dec_grads, dz = model.decoder.backward(diff / b)
    dz = dz + beta * dz_prior / b
    enc_grads, _ = model.encoder.backward(dz)
    grads = prefixed(enc_grads, 'encoder.')
    grads.update(prefixed(dec_grads, 'decoder.'))
    grads['prior.loc'] = beta * dloc / b
    grads['prior.log_scale'] = beta * dlog_scale / b
    return loss, grads, {'distortion': distortion, 'rate': rate}


def build_bottleneck(n, feature_dim, d=constants.LATENT_DIM,
                     beta=constants.BETA, seed=constants.DEFAULT_SEED,
                     hidden=constants.ENCODER_HIDDEN,
                     support_bound=constants.SUPPORT_BOUND,
                     dtype=np.float32):
    check_positive(d, 'd')
    rng = make_rng(seed)
    encoder = Mlp.build([n, hidden, d], rng, dtype=dtype)
    decoder = Mlp.build([d, hidden, feature_dim], rng, dtype=dtype)
    prior = FactorizedPrior.init(d, support_bound, dtype=dtype)
    return BottleneckModel(encoder, decoder, prior, beta)


def train_bottleneck_stage1(teacher: TeacherModel, dataset,
                            d=constants.LATENT_DIM, beta=constants.BETA,
                            epochs=constants.STAGE1_EPOCHS,
                            seed=constants.DEFAULT_SEED,
                            batch_size=constants.BATCH_SIZE,
                            lr=constants.LEARNING_RATE,
                            hidden=constants.ENCODER_HIDDEN):
    if not teacher.frozen:
        raise StateError('the teacher must be trained before distillation')
    images = _images(dataset)
    check_positive(epochs, 'epochs')
    targets = teacher.features(images)
    model = build_bottleneck(teacher.in_dim, teacher.feature_dim, d, beta,
                             seed, hidden)
    rng = make_rng(seed + 1)
    state = AdamState(lr=lr)
    params = model.parameters()
    for epoch in range(epochs):
        loss_sum = distortion_sum = rate_sum = 0.0
        for idx in batches(len(images), batch_size, rng):
            loss, grads, terms = rd_loss(model, images[idx], targets[idx],
                                         rng)
            adam_step(params, grads, state)
            loss_sum += loss * len(idx)
            distortion_sum += terms['distortion'] * len(idx)
            rate_sum += terms['rate'] * len(idx)
        count = len(images)
        epoch_loss = loss_sum / count
        if not np.isfinite(epoch_loss):
            raise TrainingError(f'stage 1 diverged at epoch {epoch}')
        model.history.record(epoch_loss, distortion_sum / count,
                             rate_sum / count)
        log.info('stage1 epoch', epoch=epoch, beta=beta, loss=epoch_loss,
                 distortion=distortion_sum / count, rate=rate_sum / count)
    return model


def finetune_stage2(teacher: TeacherModel, bottleneck: BottleneckModel,
                    dataset, alpha=constants.ALPHA,
                    tau=constants.TEMPERATURE,
                    epochs=constants.STAGE2_EPOCHS,
                    seed=constants.DEFAULT_SEED,
                    batch_size=constants.BATCH_SIZE,
                    lr=constants.LEARNING_RATE):
    """Distils ``encoder -> decoder -> tail copy`` against the frozen teacher.

    The stage 1 model is left untouched; the returned split carries copies of
    its parts and a CDF table built from the final prior.
    """
    if not teacher.frozen:
        raise StateError('the teacher must be trained before distillation')
    if bottleneck.decoder.out_dim != teacher.feature_dim:
        raise ArgumentError(f'decoder produces {bottleneck.decoder.out_dim}'
                            f' features, teacher tail expects'
                            f' {teacher.feature_dim}')
    images, labels = _labeled(dataset)
    check_non_negative(epochs, 'epochs')
    teacher_logits = teacher.logits(images)

    encoder = bottleneck.encoder.copy()
    decoder = bottleneck.decoder.copy()
    prior = FactorizedPrior(bottleneck.prior.loc.copy(),
                            bottleneck.prior.log_scale.copy(),
                            bottleneck.prior.support_bound)
    student = teacher.tail.copy()
    beta = bottleneck.beta
    params = encoder.parameters('encoder.')
    params.update(decoder.parameters('decoder.'))
    params.update(student.parameters('student.'))
    params.update(prior.parameters('prior.'))

    rng = make_rng(seed + 2)
    state = AdamState(lr=lr)
    history = StageLog()
    for epoch in range(epochs):
        loss_sum = kd_sum = rate_sum = 0.0
        for idx in batches(len(images), batch_size, rng):
            b = len(idx)
            z_noisy = encode_train(encoder, images[idx], rng, cache=True)
            logits = student.forward(decoder.forward(z_noisy))
            kd, dlogits = kd_loss_with_grad(logits, teacher_logits[idx],
                                            labels[idx], alpha, tau)
            nll, dz_prior, dloc, dlog_scale = prior.nll_with_grad(z_noisy)
            rate = float(np.mean(nll))

            student_grads, dh = student.backward(dlogits)
            dec_grads, dz = decoder.backward(dh)
            enc_grads, _ = encoder.backward(dz + beta * dz_prior / b)
            grads = prefixed(enc_grads, 'encoder.')
            grads.update(prefixed(dec_grads, 'decoder.'))
            grads.update(prefixed(student_grads, 'student.'))
            grads['prior.loc'] = beta * dloc / b
            grads['prior.log_scale'] = beta * dlog_scale / b
            adam_step(params, grads, state)
            loss_sum += (kd + beta * rate) * b
            kd_sum += kd * b
            rate_sum += rate * b
        count = len(images)
        epoch_loss = loss_sum / count
        if not np.isfinite(epoch_loss):
            raise TrainingError(f'stage 2 diverged at epoch {epoch}')
        history.record(epoch_loss, kd_sum / count, rate_sum / count)
        log.info('stage2 epoch', epoch=epoch, alpha=alpha, loss=epoch_loss,
                 kd=kd_sum / count, rate=rate_sum / count)

    table = codec.build_cdf(prior)
    head = SplitHead(encoder, prior, table, teacher.front.copy())
    tail = SplitTail(decoder, student, table, teacher.tail.copy(), prior)
    return SplitModel(head, tail, history)


def _head(split):
    return split.head if isinstance(split, SplitModel) else split


def _tail(split):
    return split.tail if isinstance(split, SplitModel) else split


def head_infer(split, x):
    """Returns the quantized latent of ``x`` and its entropy-coded stream.

    A batch of inputs is coded as one stream, row after row.
    """
    head = _head(split)
    x = np.asarray(x, dtype=head.encoder.dtype)
    if x.size == 0:
        raise ArgumentError('input is empty')
    check_last_dim(x, head.in_dim, 'x')
    z = quantize(head.encoder.predict(x), head.prior.support_bound)
    return z, codec.encode(z, head.table)


def tail_infer(split, bs: Bitstream, shape=None):
    """Decodes ``bs`` and returns ``(label, logits)`` from the student tail.

    ``shape`` is the latent shape announced by the sender; without it the
    stream's own symbol count is used.
    """
    tail = _tail(split)
    dims = tail.latent_dim
    if shape is None:
        if bs.count == 0 or bs.count % dims:
            raise DecodeError(f'{bs.count} symbols do not form latents of'
                              f' width {dims}')
        shape = (dims,) if bs.count == dims else (bs.count // dims, dims)
    shape = tuple(int(s) for s in shape)
    if not shape or shape[-1] != dims:
        raise DecodeError(f'latent shape {shape} does not end in {dims}')
    count = int(np.prod(shape))
    z = codec.decode(bs, tail.table, count).reshape(shape)
    logits = tail.logits_from_latent(z)
    return _labels(logits), logits


def head_features(split, x):
    """Raw teacher feature for the split without a bottleneck."""
    head = _head(split)
    if head.teacher_front is None:
        raise StateError('this head carries no teacher front')
    x = np.asarray(x, dtype=np.float32)
    check_last_dim(x, head.teacher_front.in_dim, 'x')
    return head.teacher_front.predict(x).astype(np.float32)


def tail_infer_features(split, h):
    tail = _tail(split)
    if tail.teacher_tail is None:
        raise StateError('this tail carries no teacher tail')
    h = np.asarray(h, dtype=np.float32)
    check_last_dim(h, tail.teacher_tail.in_dim, 'h')
    logits = tail.teacher_tail.predict(h)
    return _labels(logits), logits


def _labels(logits):
    labels = np.argmax(logits, axis=-1)
    return int(labels) if np.ndim(labels) == 0 else labels


def bandwidth_saving(payload_bytes, reference_bytes):
    """Fraction of ``reference_bytes`` saved by sending ``payload_bytes``."""
    check_positive(reference_bytes, 'reference_bytes')
    check_non_negative(payload_bytes, 'payload_bytes')
    return 1.0 - float(payload_bytes) / float(reference_bytes)


def raw_feature_bytes(split):
    return 4 * _tail(split).decoder.out_dim


def _head_state(head: SplitHead):
    state = head.encoder.state_dict('encoder.')
    state.update(head.prior.state_dict('prior.'))
    if head.teacher_front is not None:
        state.update(head.teacher_front.state_dict('front.'))
    return state


def _tail_state(tail: SplitTail):
    state = tail.decoder.state_dict('decoder.')
    state.update(tail.student_tail.state_dict('student.'))
    if tail.teacher_tail is not None:
        state.update(tail.teacher_tail.state_dict('teacher.'))
    if tail.prior is not None:
        state.update(tail.prior.state_dict('prior.'))
    return state


def model_digest(table: CdfTable, *states):
    """SHA-256 over the table file bytes and the float32 checkpoint bytes of
    ``states``, each taken in sorted tensor-name order."""
    sha = hashlib.sha256(table.to_bytes())
    for state in states:
        sha.update(checkpoint.dumps({k: state[k] for k in sorted(state)}))
    return sha.digest()


def split_digest(head: SplitHead, tail: SplitTail):
    """Handshake checksum of a whole split: table, head and tail weights."""
    return model_digest(head.table, _head_state(head), _tail_state(tail))


def _fingerprint(part):
    if part.fingerprint is None:
        raise StateError('this half is not part of an assembled split')
    return part.fingerprint


def _makedirs(directory):
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise CheckpointError(f'{directory}: {e.strerror}') from e


def _stamp(state, digest):
    state[DIGEST_KEY] = np.frombuffer(digest, dtype=np.uint8)
    return state


def _read_stamp(state, path):
    if DIGEST_KEY not in state:
        raise CheckpointError(f'{path}: no {DIGEST_KEY} tensor')
    return bytes(np.asarray(state[DIGEST_KEY]).astype(np.uint8))


def save_teacher(teacher: TeacherModel, path):
    if os.path.dirname(path):
        _makedirs(os.path.dirname(path))
    checkpoint.save(path, teacher.state_dict())


def load_teacher(path):
    return TeacherModel.from_state(checkpoint.load(path))


def save_split(split: SplitModel, directory):
    """Writes head, tail and table; both checkpoints carry the split digest."""
    digest = split.head.digest()
    _makedirs(directory)
    checkpoint.save(os.path.join(directory, HEAD_FILE),
                    _stamp(_head_state(split.head), digest))
    checkpoint.save(os.path.join(directory, TAIL_FILE),
                    _stamp(_tail_state(split.tail), digest))
    split.head.table.save(os.path.join(directory, TABLE_FILE))
    log.info('split saved', directory=directory, digest=digest.hex()[:16])


def _optional_mlp(state, prefix):
    if f'{prefix}0.weight' not in state:
        return None
    return Mlp.from_state(state, prefix)


def load_head(directory):
    path = os.path.join(directory, HEAD_FILE)
    state = checkpoint.load(path)
    table = CdfTable.load(os.path.join(directory, TABLE_FILE))
    return SplitHead(Mlp.from_state(state, 'encoder.'),
                     FactorizedPrior.from_state(state, 'prior.'), table,
                     _optional_mlp(state, 'front.'),
                     _read_stamp(state, path))


def load_tail(directory):
    path = os.path.join(directory, TAIL_FILE)
    state = checkpoint.load(path)
    table = CdfTable.load(os.path.join(directory, TABLE_FILE))
    prior = FactorizedPrior.from_state(state, 'prior.') \
        if 'prior.loc' in state else None
    return SplitTail(Mlp.from_state(state, 'decoder.'),
                     Mlp.from_state(state, 'student.'), table,
                     _optional_mlp(state, 'teacher.'), prior,
                     _read_stamp(state, path))


def load_split(directory):
    return SplitModel(load_head(directory), load_tail(directory))


def _images(dataset):
    images = np.asarray(getattr(dataset, 'images', dataset),
                        dtype=np.float32)
    if images.ndim != 2 or images.shape[0] == 0:
        raise ArgumentError('dataset must hold a non-empty image matrix')
    return images


def _labeled(dataset):
    images = _images(dataset)
    labels = getattr(dataset, 'labels', None)
    if labels is None:
        raise ArgumentError('dataset has no labels')
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (images.shape[0],):
        raise ArgumentError(f'{labels.shape[0]} labels for'
                            f' {images.shape[0]} images')
    return images, labels
