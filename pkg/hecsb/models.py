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
from enum import Enum, IntEnum
from typing import List


class Activation(Enum):
    IDENTITY = 'identity'
    RELU = 'relu'


class ReconMethod(Enum):
    LASSO = 'lasso'
    VAE = 'vae'
    HECSA = 'hecsa'


class Codec(IntEnum):
    RAW = 0
    ENTROPY = 1
    HANDSHAKE = 2
    LOGITS = 3
    ERROR = 4


@dataclass(frozen=True)
class LinkProfile:
    name: str
    rate_bps: float
    rtt_ms: float = 0.0

    def __post_init__(self):
        if not self.rate_bps > 0:
            raise ValueError(f'{self.name}: rate_bps must be > 0')
        if self.rtt_ms < 0:
            raise ValueError(f'{self.name}: rtt_ms must be >= 0')


@dataclass
class TimingReport:
    head_ms: float
    transfer_ms: float
    tail_ms: float
    total_ms: float
    payload_bytes: int


@dataclass
class ReconReport:
    method: str
    m: int
    errors: List[float]
    seconds: float

    @property
    def mean_error(self):
        return sum(self.errors) / len(self.errors) if self.errors else 0.0

    @property
    def std_error(self):
        if not self.errors:
            return 0.0
        mean = self.mean_error
        return (sum((e - mean) ** 2 for e in self.errors)
                / len(self.errors)) ** 0.5


@dataclass
class RdPoint:
    beta: float
    payload_bytes: float
    top1: float


@dataclass
class TrainLog:
    loss: List[float] = field(default_factory=list)
    frobenius: List[float] = field(default_factory=list)
    lagrange: List[float] = field(default_factory=list)

    def record(self, loss, frobenius=0.0, lagrange=0.0):
        self.loss.append(float(loss))
        self.frobenius.append(float(frobenius))
        self.lagrange.append(float(lagrange))

    def __len__(self):
        return len(self.loss)


@dataclass
class StageLog:
    loss: List[float] = field(default_factory=list)
    distortion: List[float] = field(default_factory=list)
    rate: List[float] = field(default_factory=list)

    def record(self, loss, distortion=0.0, rate=0.0):
        self.loss.append(float(loss))
        self.distortion.append(float(distortion))
        self.rate.append(float(rate))

    def __len__(self):
        return len(self.loss)
