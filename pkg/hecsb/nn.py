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

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from scipy.special import logsumexp

from hecsb import constants
from hecsb.errors import ArgumentError, DimensionError, StateError, \
    TrainingError
from hecsb.models import Activation
from hecsb.utils import check_positive, check_unit_interval

_ACTIVATION_CODES = {Activation.IDENTITY: 0, Activation.RELU: 1}
_ACTIVATIONS_BY_CODE = {v: k for k, v in _ACTIVATION_CODES.items()}


class DenseLayer(object):
    def __init__(self, weight, bias, activation=Activation.IDENTITY):
        weight = np.asarray(weight)
        bias = np.asarray(bias, dtype=weight.dtype)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise DimensionError(f'weight {weight.shape} and bias'
                                 f' {bias.shape} do not match')
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise ArgumentError('layer parameters must be finite')
        self.weight = weight
        self.bias = bias
        self.activation = Activation(activation)
        self._x = None
        self._pre = None

    @classmethod
    def init(cls, n_in, n_out, rng, activation=Activation.IDENTITY,
             dtype=np.float32):
        # fan-in scaled uniform; relu layers get the sqrt(2) gain
        gain = np.sqrt(2.0) if activation == Activation.RELU else 1.0
        limit = gain * np.sqrt(3.0 / n_in)
        weight = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype)
        return cls(weight, np.zeros(n_out, dtype=dtype), activation)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def forward(self, x, cache=True):
        pre = x @ self.weight.T + self.bias
        if self.activation == Activation.RELU:
            out = np.maximum(pre, 0)
        else:
            out = pre
        if cache:
            self._x = x
            self._pre = pre
        return out

    def backward(self, upstream, params=True):
        if self._x is None:
            raise StateError('backward called without a cached forward pass')
        grad = upstream
        if self.activation == Activation.RELU:
            # subgradient at exactly 0 is 0
            grad = upstream * (self._pre > 0)
        dx = grad @ self.weight
        if params:
            dw = grad.T @ self._x
            db = grad.sum(axis=0)
        else:
            dw = db = None
        self._x = None
        self._pre = None
        return dw, db, dx


class Mlp(object):
    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ArgumentError('an Mlp needs at least one layer')
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise DimensionError(
                    f'layer {i} expects {layers[i].in_dim} inputs but layer'
                    f' {i - 1} produces {layers[i - 1].out_dim}')
        self.layers = list(layers)
        self._single = False

    @classmethod
    def build(cls, sizes, rng, hidden=Activation.RELU,
              output=Activation.IDENTITY, dtype=np.float32):
        if len(sizes) < 2:
            raise ArgumentError(f'sizes needs at least two entries: {sizes}')
        layers = []
        for i in range(len(sizes) - 1):
            act = output if i == len(sizes) - 2 else hidden
            layers.append(DenseLayer.init(sizes[i], sizes[i + 1], rng, act,
                                          dtype))
        return cls(layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f'expected input of dimension {self.in_dim},'
                                 f' got shape {np.shape(x)}')
        for layer in self.layers:
            x = layer.forward(x, cache)
        if cache:
            self._single = single
        return x[0] if single else x

    def predict(self, x):
        """Forward pass without caching; safe for concurrent readers."""
        return self.forward(x, cache=False)

    def backward(self, upstream, params=True):
        """Returns ``(grads, input_grad)``; grads keyed like :meth:`parameters`."""
        grad = np.asarray(upstream, dtype=self.dtype)
        if self._single:
            grad = grad[None, :]
        grads = {}
        for i in reversed(range(len(self.layers))):
            dw, db, grad = self.layers[i].backward(grad, params)
            if params:
                grads[f'{i}.weight'] = dw
                grads[f'{i}.bias'] = db
        input_grad = grad[0] if self._single else grad
        return grads, input_grad

    def parameters(self, prefix='') -> Dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.layers):
            params[f'{prefix}{i}.weight'] = layer.weight
            params[f'{prefix}{i}.bias'] = layer.bias
        return params

    def copy(self):
        return Mlp([DenseLayer(layer.weight.copy(), layer.bias.copy(),
                               layer.activation) for layer in self.layers])

    def state_dict(self, prefix=''):
        state = {}
        for i, layer in enumerate(self.layers):
            state[f'{prefix}{i}.weight'] = layer.weight
            state[f'{prefix}{i}.bias'] = layer.bias
            state[f'{prefix}{i}.activation'] = np.array(
                _ACTIVATION_CODES[layer.activation], dtype=np.float32)
        return state

    @classmethod
    def from_state(cls, state, prefix=''):
        layers = []
        i = 0
        while f'{prefix}{i}.weight' in state:
            code = int(state[f'{prefix}{i}.activation'])
            layers.append(DenseLayer(
                np.array(state[f'{prefix}{i}.weight'], dtype=np.float32),
                np.array(state[f'{prefix}{i}.bias'], dtype=np.float32),
                _ACTIVATIONS_BY_CODE[code]))
            i += 1
        if not layers:
            raise StateError(f'no layers stored under prefix {prefix!r}')
        return cls(layers)


def prefixed(grads, prefix):
    return {f'{prefix}{k}': v for k, v in grads.items()}


@dataclass
class AdamState:
    lr: float = constants.LEARNING_RATE
    beta1: float = constants.ADAM_BETA1
    beta2: float = constants.ADAM_BETA2
    epsilon: float = constants.ADAM_EPSILON
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if name not in params:
            raise ArgumentError(f'gradient for unknown parameter {name}')
        if np.shape(g) != params[name].shape:
            raise DimensionError(f'gradient for {name} has shape'
                                 f' {np.shape(g)}, parameter has'
                                 f' {params[name].shape}')
        if not np.all(np.isfinite(g)):
            raise TrainingError(f'non-finite gradient for parameter {name}')

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        g = np.asarray(g, dtype=p.dtype)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2)
                                                 + state.epsilon)
        p -= update.astype(p.dtype)
    return params


def softmax_tau(logits, tau=1.0):
    check_positive(tau, 'tau')
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _check_distribution(p, name):
    total = np.sum(p, axis=-1)
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise ArgumentError(f'{name} must sum to 1, sums to {total}')


def _kl_rows(p, q):
    q = np.maximum(q, constants.EPSILON_PROB)
    safe_p = np.where(p > 0, p, 1.0)
    terms = np.where(p > 0, p * (np.log(safe_p) - np.log(q)), 0.0)
    return np.maximum(np.sum(terms, axis=-1), 0.0)


def kl_divergence(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ArgumentError(f'length mismatch: {p.shape} vs {q.shape}')
    _check_distribution(p, 'p')
    _check_distribution(q, 'q')
    return float(_kl_rows(p, q))


def cross_entropy(logits, labels):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    picked = logits[np.arange(len(labels)), labels]
    return float(np.mean(logsumexp(logits, axis=1) - picked))


def cross_entropy_with_grad(logits, labels):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = len(labels)
    probs = softmax_tau(logits)
    loss = float(np.mean(logsumexp(logits, axis=1)
                         - logits[np.arange(n), labels]))
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def kd_loss_with_grad(student_logits, teacher_logits, labels, alpha, tau):
    """Batch-mean distillation loss and its gradient wrt the student logits."""
    check_unit_interval(alpha, 'alpha')
    check_positive(tau, 'tau')
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    if s.shape != t.shape:
        raise DimensionError(f'student logits {s.shape} vs teacher logits'
                             f' {t.shape}')
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = s.shape[0]

    ce = logsumexp(s, axis=1) - s[np.arange(n), labels]
    soft_teacher = softmax_tau(t, tau)
    soft_student = softmax_tau(s, tau)
    kl = _kl_rows(soft_teacher, soft_student)
    loss = float(np.mean((1.0 - alpha) * ce + alpha * tau * tau * kl))

    hard = softmax_tau(s)
    hard[np.arange(n), labels] -= 1.0
    grad = (1.0 - alpha) * hard + alpha * tau * (soft_student - soft_teacher)
    return loss, grad / n


def kd_loss(student_logits, teacher_logits, label, alpha, tau):
    loss, _ = kd_loss_with_grad(student_logits, teacher_logits, label, alpha,
                                tau)
    return loss


def accuracy(logits, labels):
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))

