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

from dataclasses import dataclass

import numpy as np

from hecsb import constants, log
from hecsb.errors import ArgumentError, StateError, TrainingError
from hecsb.nn import AdamState, Mlp, adam_step, prefixed
from hecsb.sensing import MeasurementOperator
from hecsb.utils import batches, check_last_dim, check_positive, make_rng


@dataclass
class VaeModel:
    encoder: Mlp
    decoder: Mlp
    latent_dim: int
    decoder_std: float = constants.VAE_DECODER_STD
    trained: bool = False

    def parameters(self):
        params = self.encoder.parameters('encoder.')
        params.update(self.decoder.parameters('decoder.'))
        return params


def build_vae(n, k=constants.VAE_LATENT_DIM, seed=constants.DEFAULT_SEED,
              hidden=constants.DECODER_HIDDEN,
              decoder_std=constants.VAE_DECODER_STD, dtype=np.float32):
    rng = make_rng(seed)
    encoder = Mlp.build([n, *hidden, 2 * k], rng, dtype=dtype)
    decoder = Mlp.build([k, *hidden, n], rng, dtype=dtype)
    return VaeModel(encoder, decoder, k, decoder_std)


def vae_loss(model: VaeModel, batch, rng):
    """Negative evidence lower bound (batch mean) and its gradients."""
    x = np.asarray(batch, dtype=model.encoder.dtype)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError('batch must be a non-empty matrix')
    b, k = x.shape[0], model.latent_dim
    stats = model.encoder.forward(x)
    mu, logvar = stats[:, :k], stats[:, k:]
    std = np.exp(0.5 * logvar)
    eps = rng.standard_normal(mu.shape).astype(x.dtype)
    z = mu + std * eps
    x_rec = model.decoder.forward(z)

    diff = x_rec - x
    precision = 1.0 / model.decoder_std ** 2
    rec = 0.5 * precision * np.sum(diff.astype(np.float64) ** 2)
    kl = 0.5 * np.sum(mu.astype(np.float64) ** 2 + np.exp(logvar) - logvar
                      - 1.0)
    loss = float((rec + kl) / b)
    if not np.isfinite(loss):
        raise TrainingError('VAE loss is not finite')

    dec_grads, dz = model.decoder.backward(precision * diff / b)
    dmu = dz + mu / b
    dlogvar = dz * eps * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0) / b
    enc_grads, _ = model.encoder.backward(np.concatenate([dmu, dlogvar],
                                                         axis=1))
    grads = prefixed(enc_grads, 'encoder.')
    grads.update(prefixed(dec_grads, 'decoder.'))
    return loss, grads


def train_vae(images, k=constants.VAE_LATENT_DIM, epochs=constants.VAE_EPOCHS,
              seed=constants.DEFAULT_SEED, batch_size=constants.BATCH_SIZE,
              lr=constants.LEARNING_RATE, hidden=constants.DECODER_HIDDEN):
    images = np.asarray(images, dtype=np.float32)
    model = build_vae(images.shape[1], k, seed, hidden)
    rng = make_rng(seed + 1)
    state = AdamState(lr=lr)
    params = model.parameters()
    for epoch in range(epochs):
        total, count = 0.0, 0
        for idx in batches(len(images), batch_size, rng):
            loss, grads = vae_loss(model, images[idx], rng)
            adam_step(params, grads, state)
            total += loss * len(idx)
            count += len(idx)
        log.info('vae epoch', epoch=epoch, loss=total / max(count, 1))
    model.trained = True
    return model


def vae_reconstruct(vae: VaeModel, op: MeasurementOperator, y,
                    steps=constants.VAE_STEPS, restarts=constants.VAE_RESTARTS,
                    rng=None, step_size=constants.VAE_STEP_SIZE):
    """Returns ``(G(z*), objective)`` with ``z*`` minimising ``|y - W G(z)|^2``.

    Every restart runs backtracking gradient descent: a step is accepted
    only when it does not increase the objective, otherwise the step size
    is halved. The best restart per measurement wins.
    """
    if not vae.trained:
        raise StateError('the VAE decoder has not been trained')
    check_positive(steps, 'steps')
    check_positive(restarts, 'restarts')
    if not op.is_identity:
        raise ArgumentError('latent search needs an identity acquisition')
    if vae.decoder.out_dim != op.n:
        raise ArgumentError(f'decoder produces {vae.decoder.out_dim} values,'
                            f' operator expects {op.n}')
    rng = make_rng(rng)
    G = vae.decoder
    W = op.W.astype(G.dtype)
    y = np.asarray(y, dtype=G.dtype)
    check_last_dim(y, op.m, 'y')
    single = y.ndim == 1
    Y = np.repeat(y[None, :] if single else y, restarts, axis=0)

    def objective(z):
        r = G.predict(z) @ W.T - Y
        return np.sum(r.astype(np.float64) ** 2, axis=1)

    z = rng.standard_normal((Y.shape[0], vae.latent_dim)).astype(G.dtype)
    f = objective(z)
    eta = np.full(Y.shape[0], step_size, dtype=G.dtype)
    for _ in range(steps):
        residual = G.forward(z) @ W.T - Y
        _, dz = G.backward(2.0 * residual @ W, params=False)
        candidate = z - eta[:, None] * dz
        fc = objective(candidate)
        accept = fc <= f
        z[accept] = candidate[accept]
        f[accept] = fc[accept]
        eta[accept] *= 1.2
        eta[~accept] *= 0.5

    f = f.reshape(-1, restarts)
    best = np.argmin(f, axis=1)
    z_best = z.reshape(-1, restarts, vae.latent_dim)[np.arange(len(best)),
                                                      best]
    x_hat = G.predict(z_best)
    objective_best = f[np.arange(len(best)), best]
    if single:
        return x_hat[0], float(objective_best[0])
    return x_hat, objective_best
