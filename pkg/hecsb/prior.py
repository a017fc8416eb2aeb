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

"""Factorized discretized-logistic prior over integer latents.

Each latent dimension i has a location ``loc[i]`` and a scale
``exp(log_scale[i])``. The probability of integer v is the logistic CDF mass
of ``[v - 1/2, v + 1/2)``, with both tails folded into ``+-support_bound``
so the pmf sums to one over the support.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from hecsb import constants
from hecsb.errors import ArgumentError, SupportRangeError
from hecsb.utils import check_last_dim, check_positive

_PMF_FLOOR = 1e-12


@dataclass
class FactorizedPrior:
    loc: np.ndarray
    log_scale: np.ndarray
    support_bound: int = constants.SUPPORT_BOUND

    def __post_init__(self):
        self.loc = np.asarray(self.loc)
        self.log_scale = np.asarray(self.log_scale, dtype=self.loc.dtype)
        if self.loc.ndim != 1 or self.loc.shape != self.log_scale.shape:
            raise ArgumentError(f'loc {self.loc.shape} and log_scale'
                                f' {self.log_scale.shape} must be matching'
                                f' vectors')
        check_positive(self.support_bound, 'support_bound')
        self.support_bound = int(self.support_bound)

    @classmethod
    def init(cls, dim, support_bound=constants.SUPPORT_BOUND, scale=1.0,
             dtype=np.float32):
        return cls(np.zeros(dim, dtype=dtype),
                   np.full(dim, np.log(scale), dtype=dtype), support_bound)

    @property
    def dim(self):
        return self.loc.shape[0]

    @property
    def scale(self):
        return np.exp(self.log_scale.astype(np.float64))

    @property
    def support(self):
        return np.arange(-self.support_bound, self.support_bound + 1)

    def parameters(self, prefix='prior.'):
        return {f'{prefix}loc': self.loc, f'{prefix}log_scale': self.log_scale}

    def pmf_table(self):
        """Per-dimension pmf over the support, shape ``(dim, 2Z + 1)``."""
        v = self.support.astype(np.float64)[None, :]
        loc = self.loc.astype(np.float64)[:, None]
        scale = self.scale[:, None]
        upper = (v + 0.5 - loc) / scale
        lower = (v - 0.5 - loc) / scale
        # evaluate in the tail where the CDF is small to avoid cancellation
        sign = np.where(upper + lower > 0, -1.0, 1.0)
        pmf = np.abs(expit(sign * upper) - expit(sign * lower))
        pmf[:, 0] = expit(upper[:, 0])
        pmf[:, -1] = expit(-lower[:, -1])
        return np.maximum(pmf, _PMF_FLOOR)

    def nll_with_grad(self, z):
        """Continuous logistic negative log-density of ``z`` (nats).

        Returns the per-row sum and the gradients wrt ``z``, ``loc`` and
        ``log_scale`` of the total over all rows.
        """
        z = np.asarray(z, dtype=np.float64)
        check_last_dim(z, self.dim, 'z')
        loc = self.loc.astype(np.float64)
        log_scale = self.log_scale.astype(np.float64)
        scale = np.exp(log_scale)
        u = (z - loc) / scale
        nll = np.logaddexp(0.0, u) + np.logaddexp(0.0, -u) + log_scale
        t = 2.0 * expit(u) - 1.0
        dz = t / scale
        rows = dz.reshape(-1, self.dim)
        dloc = -np.sum(rows, axis=0)
        dlog_scale = np.sum((1.0 - t * u).reshape(-1, self.dim), axis=0)
        return np.sum(nll, axis=-1), dz, dloc, dlog_scale

    def bits(self, symbols):
        """Ideal code length in bits of integer latents under the pmf."""
        symbols = np.atleast_2d(np.asarray(symbols, dtype=np.int64))
        check_last_dim(symbols, self.dim, 'symbols')
        index = symbols + self.support_bound
        if np.any(index < 0) or np.any(index >= 2 * self.support_bound + 1):
            raise SupportRangeError('symbol outside the prior support')
        table = self.pmf_table()
        probs = table[np.arange(self.dim)[None, :], index]
        return -np.sum(np.log2(probs), axis=-1)

    def state_dict(self, prefix='prior.'):
        return {f'{prefix}loc': self.loc,
                f'{prefix}log_scale': self.log_scale,
                f'{prefix}support_bound': np.array(self.support_bound,
                                                   dtype=np.float32)}

    @classmethod
    def from_state(cls, state, prefix='prior.'):
        return cls(np.array(state[f'{prefix}loc'], dtype=np.float32),
                   np.array(state[f'{prefix}log_scale'], dtype=np.float32),
                   int(state[f'{prefix}support_bound']))


def prior_pmf(prior: FactorizedPrior, i, v):
    if not 0 <= i < prior.dim:
        raise ArgumentError(f'dimension {i} outside [0, {prior.dim})')
    if abs(v) > prior.support_bound:
        raise SupportRangeError(f'value {v} outside the support'
                                f' [-{prior.support_bound},'
                                f' {prior.support_bound}]')
    return float(prior.pmf_table()[i, int(v) + prior.support_bound])
