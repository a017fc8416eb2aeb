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

"""Compressed sensing autoencoder with a learned linear measurement."""
from dataclasses import dataclass

import numpy as np

from hecsb import constants, log
from hecsb.errors import ArgumentError, TrainingError
from hecsb.models import TrainLog
from hecsb.nn import AdamState, Mlp, adam_step, prefixed
from hecsb.sensing import MeasurementOperator, gaussian_operator
from hecsb.utils import batches, check_last_dim, check_non_negative, \
    check_positive, make_rng

_LAGRANGE_FLOOR = 1e-3
_ACTIVE_BAND = 0.95


@dataclass
class HecsaModel:
    W: np.ndarray
    decoder: Mlp
    sigma: float
    frobenius_bound: float

    @property
    def m(self):
        return self.W.shape[0]

    @property
    def n(self):
        return self.W.shape[1]

    @property
    def frobenius(self):
        return float(np.linalg.norm(self.W.astype(np.float64)))

    def operator(self):
        return MeasurementOperator(self.W, self.sigma)

    def parameters(self):
        params = {'W': self.W}
        params.update(self.decoder.parameters('decoder.'))
        return params

    def project(self):
        norm = self.frobenius
        if norm > self.frobenius_bound:
            self.W *= np.asarray(self.frobenius_bound / norm, self.W.dtype)


def default_frobenius_bound(m, n, seed=constants.DEFAULT_SEED):
    """Norm of an equal-shape random Gaussian operator."""
    op = gaussian_operator(m, n, seed)
    return float(np.linalg.norm(op.W.astype(np.float64)))


def build_hecsa(n, m, sigma=constants.NOISE_SIGMA, k=None,
                seed=constants.DEFAULT_SEED,
                hidden=constants.DECODER_HIDDEN):
    if not 0 < m < n:
        raise ArgumentError(f'need 0 < m < n, got m={m} n={n}')
    check_non_negative(sigma, 'sigma')
    if k is None:
        k = default_frobenius_bound(m, n, seed)
    check_positive(k, 'k')
    W = gaussian_operator(m, n, seed).W.copy()
    decoder = Mlp.build([m, *hidden, n], make_rng(seed + 1))
    model = HecsaModel(W, decoder, float(sigma), float(k))
    model.project()
    return model


def hecsa_loss(model: HecsaModel, batch, rng):
    x = np.asarray(batch, dtype=model.W.dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ArgumentError('batch must not be empty')
    check_last_dim(x, model.n, 'batch')
    check_non_negative(model.sigma, 'sigma')
    b = x.shape[0]
    # reparameterised sample of Q(y|x) = N(Wx, sigma^2 I)
    xi = rng.standard_normal((b, model.m)).astype(x.dtype)
    y = x @ model.W.T + model.sigma * xi
    x_rec = model.decoder.forward(y)
    diff = x_rec - x
    loss = float(0.5 * np.sum(diff.astype(np.float64) ** 2) / b)

    dec_grads, dy = model.decoder.backward(diff / b)
    grads = {'W': dy.T @ x}
    grads.update(prefixed(dec_grads, 'decoder.'))
    return loss, grads


def train_hecsa(images, m, sigma=constants.NOISE_SIGMA, k=None,
                epochs=constants.HECSA_EPOCHS, seed=constants.DEFAULT_SEED,
                batch_size=constants.BATCH_SIZE, lr=constants.LEARNING_RATE,
                hidden=constants.DECODER_HIDDEN):
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 2 or images.shape[0] == 0:
        raise ArgumentError('images must be a non-empty matrix')
    check_positive(epochs, 'epochs')
    model = build_hecsa(images.shape[1], m, sigma, k, seed, hidden)
    rng = make_rng(seed + 2)
    state = AdamState(lr=lr)
    params = model.parameters()
    lagrange = 0.0
    history = TrainLog()
    k = model.frobenius_bound

    for epoch in range(epochs):
        total = 0.0
        for idx in batches(len(images), batch_size, rng):
            loss, grads = hecsa_loss(model, images[idx], rng)
            norm_sq = float(np.sum(model.W.astype(np.float64) ** 2))
            if lagrange > 0 and norm_sq > k * k:
                loss += lagrange * (norm_sq - k * k)
                grads['W'] = grads['W'] + 2.0 * lagrange * model.W
            adam_step(params, grads, state)
            total += loss * len(idx)
        epoch_loss = total / len(images)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f'hecsa training diverged at epoch {epoch}')

        norm = model.frobenius
        if norm > k:
            lagrange = max(2.0 * lagrange, _LAGRANGE_FLOOR)
        elif norm < _ACTIVE_BAND * k:
            lagrange /= 2.0
        model.project()
        history.record(epoch_loss, model.frobenius, lagrange)
        log.info('hecsa epoch', epoch=epoch, m=m, loss=epoch_loss,
                 frobenius=model.frobenius, lagrange=lagrange)
    return model, history


def hecsa_reconstruct(model: HecsaModel, y):
    y = np.asarray(y, dtype=model.W.dtype)
    check_last_dim(y, model.m, 'y')
    return np.clip(model.decoder.predict(y), 0.0, 1.0)


def hecsa_state(model: HecsaModel):
    state = {'W': model.W,
             'meta.sigma': np.array(model.sigma, dtype=np.float32),
             'meta.frobenius_bound': np.array(model.frobenius_bound,
                                              dtype=np.float32)}
    state.update(model.decoder.state_dict('decoder.'))
    return state


def hecsa_from_state(state):
    return HecsaModel(np.array(state['W'], dtype=np.float32),
                      Mlp.from_state(state, 'decoder.'),
                      float(state['meta.sigma']),
                      float(state['meta.frobenius_bound']))
