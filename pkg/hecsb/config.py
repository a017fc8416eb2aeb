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

"""Experiment configuration.

A config file holds ``key = value`` lines; ``#`` starts a comment and lists
are comma separated. Link profiles are set with ``link.<name>.rate_bps`` and
``link.<name>.rtt_ms``. Values are applied over the defaults in this order:
environment, file, explicit overrides (command-line flags).
"""
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from hecsb import constants
from hecsb.errors import ConfigError
from hecsb.models import LinkProfile, ReconMethod

_ENVIRONMENT = {
    'HECSB_HOST': 'host',
    'HECSB_PORT': 'port',
    'HECSB_TIMEOUT_MS': 'timeout_ms',
    'HECSB_DATASET_DIR': 'dataset_dir',
}


def _default_links():
    return {name: LinkProfile(name, rate, rtt)
            for name, (rate, rtt) in constants.LINK_PROFILES.items()}


@dataclass
class ExperimentConfig:
    seed: int = constants.DEFAULT_SEED
    out_dir: str = constants.DEFAULT_OUT_DIR
    dataset_dir: str = constants.DEFAULT_DATASET_DIR
    model_dir: Optional[str] = None
    images: Optional[str] = None
    batch_size: int = constants.BATCH_SIZE
    learning_rate: float = constants.LEARNING_RATE

    # reconstruction
    methods: List[str] = field(
        default_factory=lambda: [m.value for m in ReconMethod])
    measurement_counts: List[int] = field(
        default_factory=lambda: list(constants.MEASUREMENT_COUNTS))
    sigma: float = constants.NOISE_SIGMA
    recon_subset: int = constants.RECON_SUBSET
    recon_train_subset: int = constants.RECON_TRAIN_SUBSET
    lambda_grid: List[float] = field(
        default_factory=lambda: list(constants.LAMBDA_GRID))
    lambda_subset: int = constants.LAMBDA_VALIDATION_SUBSET
    ista_iters: int = constants.ISTA_MAX_ITERS
    hecsa_epochs: int = constants.HECSA_EPOCHS
    vae_epochs: int = constants.VAE_EPOCHS
    vae_latent_dim: int = constants.VAE_LATENT_DIM
    vae_restarts: int = constants.VAE_RESTARTS
    vae_steps: int = constants.VAE_STEPS

    # bottleneck distillation
    teacher_hidden: List[int] = field(
        default_factory=lambda: list(constants.TEACHER_HIDDEN))
    teacher_epochs: int = constants.TEACHER_EPOCHS
    teacher_gate: float = constants.TEACHER_ACCURACY_GATE
    latent_dim: int = constants.LATENT_DIM
    encoder_hidden: int = constants.ENCODER_HIDDEN
    betas: List[float] = field(default_factory=lambda: list(constants.BETAS))
    beta: float = constants.BETA
    alpha: float = constants.ALPHA
    tau: float = constants.TEMPERATURE
    stage1_epochs: int = constants.STAGE1_EPOCHS
    stage2_epochs: int = constants.STAGE2_EPOCHS
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None

    # split runtime
    host: str = constants.DEFAULT_HOST
    port: int = constants.DEFAULT_PORT
    timeout_ms: int = constants.DEFAULT_TIMEOUT_MS
    latency_repeats: int = constants.LATENCY_REPEATS
    baseline_csv: Optional[str] = None
    links: Dict[str, LinkProfile] = field(default_factory=_default_links)


def _as_list(cast):
    def parse(text):
        return [cast(item.strip()) for item in text.split(',')
                if item.strip()]
    return parse


def _optional(cast):
    def parse(text):
        return None if text.lower() in ('', 'none') else cast(text)
    return parse


def _method_list(text):
    methods = _as_list(str)(text)
    for method in methods:
        ReconMethod(method)
    return methods


_PARSERS = {
    'seed': int,
    'out_dir': str,
    'dataset_dir': str,
    'model_dir': _optional(str),
    'images': _optional(str),
    'batch_size': int,
    'learning_rate': float,
    'methods': _method_list,
    'measurement_counts': _as_list(int),
    'sigma': float,
    'recon_subset': int,
    'recon_train_subset': int,
    'lambda_grid': _as_list(float),
    'lambda_subset': int,
    'ista_iters': int,
    'hecsa_epochs': int,
    'vae_epochs': int,
    'vae_latent_dim': int,
    'vae_restarts': int,
    'vae_steps': int,
    'teacher_hidden': _as_list(int),
    'teacher_epochs': int,
    'teacher_gate': float,
    'latent_dim': int,
    'encoder_hidden': int,
    'betas': _as_list(float),
    'beta': float,
    'alpha': float,
    'tau': float,
    'stage1_epochs': int,
    'stage2_epochs': int,
    'train_subset': _optional(int),
    'test_subset': _optional(int),
    'host': str,
    'port': int,
    'timeout_ms': int,
    'latency_repeats': int,
    'baseline_csv': _optional(str),
}


def parse_config_text(text, source='<config>'):
    """``[(line number, key, raw value)]`` of a key=value document."""
    entries = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f'{source}:{number}: expected key = value')
        entries.append((number, key.strip(), value.strip()))
    return entries


def _apply(config, key, value, where, links):
    if key.startswith('link.'):
        parts = key.split('.')
        if len(parts) != 3 or parts[2] not in ('rate_bps', 'rtt_ms'):
            raise ConfigError(f'{where}: unknown link key {key!r}')
        try:
            links.setdefault(parts[1], {})[parts[2]] = float(value)
        except ValueError as e:
            raise ConfigError(f'{where}: bad value for {key}:'
                              f' {value!r}') from e
        return
    if key not in _PARSERS:
        raise ConfigError(f'{where}: unknown key {key!r}')
    if not isinstance(value, str):
        setattr(config, key, value)
        return
    try:
        setattr(config, key, _PARSERS[key](value))
    except ValueError as e:
        raise ConfigError(f'{where}: bad value for {key}: {value!r}') from e


def load_config(path=None, overrides=None, environ=None):
    config = ExperimentConfig()
    links = {name: {'rate_bps': rate, 'rtt_ms': rtt}
             for name, (rate, rtt) in constants.LINK_PROFILES.items()}
    environ = os.environ if environ is None else environ
    for variable, key in _ENVIRONMENT.items():
        if environ.get(variable):
            _apply(config, key, environ[variable], variable, links)

    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f'{path}: {e.strerror}') from e
        for number, key, value in parse_config_text(text, path):
            _apply(config, key, value, f'{path}:{number}', links)

    for key, value in (overrides or {}).items():
        if value is not None:
            _apply(config, key, value, f'--{key.replace("_", "-")}', links)

    config.links = {}
    for name, values in links.items():
        if 'rate_bps' not in values:
            raise ConfigError(f'link {name!r} has no rate_bps')
        try:
            config.links[name] = LinkProfile(name, values['rate_bps'],
                                             values.get('rtt_ms', 0.0))
        except ValueError as e:
            raise ConfigError(str(e)) from e
    return config
