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
from typing import Optional

import numpy as np

from hecsb import constants, log
from hecsb.errors import ArgumentError, DimensionError, SolverError
from hecsb.nn import Mlp
from hecsb.utils import check_last_dim, check_non_negative, \
    check_positive, check_same_shape, make_rng


@dataclass
class MeasurementOperator:
    """``y = W f(x) + eps`` with ``eps ~ N(0, sigma^2 I)``.

    ``acquisition`` is the learned map f; ``None`` means identity.
    """
    W: np.ndarray
    sigma: float = 0.0
    acquisition: Optional[Mlp] = None

    def __post_init__(self):
        self.W = np.asarray(self.W)
        if self.W.ndim != 2:
            raise DimensionError(f'W must be a matrix, got {self.W.shape}')
        if not np.all(np.isfinite(self.W)):
            raise ArgumentError('W must be finite')
        check_non_negative(self.sigma, 'sigma')
        if self.acquisition is None:
            if self.m > self.W.shape[1]:
                raise ArgumentError(f'identity acquisition needs m <= n,'
                                    f' got {self.W.shape}')
        elif self.acquisition.out_dim != self.W.shape[1]:
            raise DimensionError(f'acquisition produces'
                                 f' {self.acquisition.out_dim} values, W'
                                 f' expects {self.W.shape[1]}')

    @property
    def m(self):
        return self.W.shape[0]

    @property
    def n(self):
        if self.acquisition is not None:
            return self.acquisition.in_dim
        return self.W.shape[1]

    @property
    def is_identity(self):
        return self.acquisition is None


def gaussian_operator(m, n, seed, sigma=0.0):
    if not m or m <= 0:
        raise ArgumentError(f'm must be > 0, got {m}')
    if not n or n <= 0:
        raise ArgumentError(f'n must be > 0, got {n}')
    rng = make_rng(seed)
    W = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n)).astype(np.float32)
    return MeasurementOperator(W, sigma)


def measure(op: MeasurementOperator, x, rng):
    x = np.asarray(x, dtype=np.float32)
    check_last_dim(x, op.n, 'x')
    features = op.acquisition.predict(x) if op.acquisition else x
    y = features @ op.W.T
    if op.sigma > 0:
        rng = make_rng(rng)
        y = y + op.sigma * rng.standard_normal(y.shape)
    return y.astype(np.float32)


def spectral_norm_sq(W, iters=constants.POWER_ITERATIONS):
    """Largest singular value squared of W, by power iteration on W^T W."""
    W = np.asarray(W, dtype=np.float64)
    v = np.random.default_rng(0).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        w = W.T @ (W @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        estimate = norm
    return float(estimate)


def lasso_objective(W, y, x, lam):
    residual = x @ W.T - y
    return 0.5 * np.sum(residual * residual, axis=-1) \
        + lam * np.sum(np.abs(x), axis=-1)


def _soft_threshold(z, threshold):
    return np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)


def ista_lasso(op: MeasurementOperator, y, lam, iters=constants.ISTA_MAX_ITERS,
               tol=constants.ISTA_TOLERANCE, return_objective=False):
    """Iterative soft-thresholding for ``min 1/2|y - Wx|^2 + lam |x|_1``.

    ``y`` may hold one measurement vector or a batch of them (one per row);
    each row stops on its own once its objective decrease falls below
    ``tol``.
    """
    if lam is None or lam < 0:
        raise ArgumentError(f'lambda must be >= 0, got {lam}')
    if iters < 1:
        raise ArgumentError(f'iters must be >= 1, got {iters}')
    if not op.is_identity:
        raise ArgumentError('ISTA decoding needs an identity acquisition')
    W = op.W.astype(np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_last_dim(y, op.m, 'y')
    single = y.ndim == 1
    Y = y[None, :] if single else y

    x = np.zeros((Y.shape[0], W.shape[1]))
    objective = lasso_objective(W, Y, x, lam)
    trace = [objective.copy()]
    # power iteration approaches the top eigenvalue from below
    lipschitz = spectral_norm_sq(W) * 1.01
    if lipschitz > 0:
        step = 1.0 / lipschitz
        active = np.arange(Y.shape[0])
        for t in range(iters):
            xa = x[active]
            grad = (xa @ W.T - Y[active]) @ W
            candidate = _soft_threshold(xa - step * grad, step * lam)
            new_objective = lasso_objective(W, Y[active], candidate, lam)
            slack = 1e-12 * np.maximum(1.0, np.abs(objective[active]))
            if np.any(new_objective > objective[active] + slack):
                raise SolverError(f'ISTA objective increased at iteration {t}')
            decrease = objective[active] - new_objective
            x[active] = candidate
            objective[active] = new_objective
            trace.append(objective.copy())
            active = active[decrease >= tol]
            if active.size == 0:
                break
        log.debug('ista finished', iterations=len(trace) - 1, lam=lam,
                  m=op.m)
    result = x[0] if single else x
    if return_objective:
        return result, np.array(trace)
    return result


def recon_error(x, x_hat):
    """Per-pixel scaled l2 error ``|x - x_hat| / sqrt(n)`` over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    check_same_shape(x, x_hat, 'x', 'x_hat')
    n = x.shape[-1]
    error = np.sqrt(np.sum((x - x_hat) ** 2, axis=-1) / n)
    return float(error) if np.ndim(error) == 0 else error


def select_lambda(op: MeasurementOperator, images, grid=constants.LAMBDA_GRID,
                  seed=constants.DEFAULT_SEED, iters=constants.ISTA_MAX_ITERS):
    """Grid-searches the LASSO weight on a validation batch of images."""
    check_positive(len(grid), 'len(grid)')
    images = np.asarray(images, dtype=np.float32)
    y = measure(op, images, make_rng(seed))
    best_lam, best_error = None, np.inf
    for lam in grid:
        x_hat = np.clip(ista_lasso(op, y, lam, iters), 0.0, 1.0)
        error = float(np.mean(recon_error(images, x_hat)))
        log.debug('lambda candidate', lam=lam, m=op.m, error=error)
        if error < best_error:
            best_lam, best_error = lam, error
    log.info('lambda selected', lam=best_lam, m=op.m, error=best_error)
    return best_lam
