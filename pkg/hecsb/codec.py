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

"""Range coding of quantized latents under per-dimension CDF tables.

The coder is a 32-bit carry-less range coder working on 16-bit frequencies
(every symbol has frequency >= 1, totals are exactly 2**16). Symbol j of a
vector is coded with table row ``j % dims``. Output bytes are emitted most
significant first, so streams are identical on every platform.
"""
import bisect
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from hecsb import constants
from hecsb.errors import ArgumentError, CheckpointError, DecodeError, \
    SupportRangeError

PRECISION = constants.CDF_PRECISION
TOTAL = 1 << PRECISION
MAGIC = b'HECSCDF1'

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = 0xFFFFFFFF
_TABLE_HEADER = struct.Struct('>IiI')
_STREAM_HEADER = struct.Struct('>II')
# the decoder may read up to three implicit zero bytes past the end
_MAX_PADDING = 3


def quantize_pmf(pmf):
    """16-bit frequencies summing to 2**16 with every symbol at least 1."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or pmf.size < 2:
        raise ArgumentError('a pmf needs at least two symbols')
    if np.any(pmf < 0) or not np.sum(pmf) > 0:
        raise ArgumentError('pmf must be non-negative with positive mass')
    freq = np.maximum(1, np.rint(pmf / np.sum(pmf) * TOTAL)).astype(np.int64)
    deficit = TOTAL - int(np.sum(freq))
    while deficit != 0:
        j = int(np.argmax(freq))
        if deficit > 0:
            freq[j] += deficit
            deficit = 0
        else:
            take = min(-deficit, int(freq[j]) - 1)
            freq[j] -= take
            deficit += take
    return freq


class CdfTable(object):
    """Cumulative frequencies, one row per latent dimension.

    ``cdf[i, s]`` is the total frequency of symbols below ``offset + s`` in
    dimension i; ``cdf[i, 0] == 0`` and ``cdf[i, -1] == 2**16``.
    """

    def __init__(self, cdf, offset):
        cdf = np.asarray(cdf, dtype=np.int64)
        if cdf.ndim != 2 or cdf.shape[1] < 3:
            raise ArgumentError(f'cdf must be (dims, symbols + 1),'
                                f' got {cdf.shape}')
        if np.any(cdf[:, 0] != 0) or np.any(cdf[:, -1] != TOTAL):
            raise ArgumentError(f'every cdf row must run from 0 to {TOTAL}')
        if np.any(np.diff(cdf, axis=1) < 1):
            raise ArgumentError('cdf rows must be strictly increasing')
        self.cdf = cdf
        self.offset = int(offset)
        self._rows = [row.tolist() for row in cdf]

    @property
    def dims(self):
        return self.cdf.shape[0]

    @property
    def symbol_count(self):
        return self.cdf.shape[1] - 1

    @property
    def min_symbol(self):
        return self.offset

    @property
    def max_symbol(self):
        return self.offset + self.symbol_count - 1

    def frequencies(self):
        return np.diff(self.cdf, axis=1)

    def to_bytes(self):
        freq = self.frequencies().astype('>u2')
        return MAGIC + _TABLE_HEADER.pack(self.dims, self.offset,
                                          self.symbol_count) + freq.tobytes()

    @classmethod
    def from_bytes(cls, data, source='<bytes>'):
        head = len(MAGIC) + _TABLE_HEADER.size
        if data[:len(MAGIC)] != MAGIC or len(data) < head:
            raise CheckpointError(f'{source}: not a HECSCDF1 table')
        dims, offset, count = _TABLE_HEADER.unpack(data[len(MAGIC):head])
        if len(data) != head + 2 * dims * count:
            raise CheckpointError(f'{source}: table size does not match its'
                                  f' header')
        freq = np.frombuffer(data[head:], dtype='>u2').astype(np.int64)
        freq = freq.reshape(dims, count)
        cdf = np.concatenate([np.zeros((dims, 1), dtype=np.int64),
                              np.cumsum(freq, axis=1)], axis=1)
        try:
            return cls(cdf, offset)
        except ArgumentError as e:
            raise CheckpointError(f'{source}: {e}') from e

    def save(self, path):
        try:
            with open(path, 'wb') as f:
                f.write(self.to_bytes())
        except OSError as e:
            raise CheckpointError(f'{path}: {e.strerror}') from e

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'rb') as f:
                data = f.read()
        except OSError as e:
            raise CheckpointError(f'{path}: {e.strerror}') from e
        return cls.from_bytes(data, source=str(path))

    def digest(self):
        return hashlib.sha256(self.to_bytes()).digest()

    def __eq__(self, other):
        return isinstance(other, CdfTable) and self.offset == other.offset \
            and np.array_equal(self.cdf, other.cdf)


def build_cdf_from_pmf(pmf, offset):
    pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    freq = np.stack([quantize_pmf(row) for row in pmf])
    cdf = np.concatenate([np.zeros((freq.shape[0], 1), dtype=np.int64),
                          np.cumsum(freq, axis=1)], axis=1)
    return CdfTable(cdf, offset)


def build_cdf(prior):
    return build_cdf_from_pmf(prior.pmf_table(), -prior.support_bound)


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    bit_length: int
    count: int

    def to_bytes(self):
        return _STREAM_HEADER.pack(self.count, self.bit_length) + self.data

    @classmethod
    def from_bytes(cls, payload):
        if len(payload) < _STREAM_HEADER.size:
            raise DecodeError('bitstream header truncated')
        count, bit_length = _STREAM_HEADER.unpack(
            payload[:_STREAM_HEADER.size])
        data = bytes(payload[_STREAM_HEADER.size:])
        if (bit_length + 7) // 8 != len(data):
            raise DecodeError(f'bitstream declares {bit_length} bits but'
                              f' carries {len(data)} bytes')
        return cls(data, bit_length, count)


class _RangeEncoder(object):
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def encode(self, cum, freq):
        r = self.range >> PRECISION
        self.low += r * cum
        self.range = r * freq
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = -self.low & (_BOT - 1)
            else:
                break
            self.out.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def finish(self):
        # shortest prefix of a value inside [low, low + range); the decoder
        # reads the missing trailing bytes as zeros
        for nbytes in range(1, 5):
            shift = 32 - 8 * nbytes
            value = ((self.low + (1 << shift) - 1) >> shift) << shift
            if value < self.low + self.range:
                for i in range(nbytes):
                    self.out.append((value >> (24 - 8 * i)) & 0xFF)
                break
        return bytes(self.out)


class _RangeDecoder(object):
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        self._r = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self):
        pos = self.pos
        self.pos += 1
        if pos < len(self.data):
            return self.data[pos]
        if pos < len(self.data) + _MAX_PADDING:
            return 0
        raise DecodeError('bitstream truncated')

    def target(self):
        self._r = self.range >> PRECISION
        value = (self.code - self.low) // self._r
        if not 0 <= value < TOTAL:
            raise DecodeError('bitstream corrupted')
        return value

    def update(self, cum, freq):
        self.low += self._r * cum
        self.range = self._r * freq
        while True:
            if (self.low ^ (self.low + self.range)) < _TOP:
                pass
            elif self.range < _BOT:
                self.range = -self.low & (_BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._next_byte()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def finish(self):
        if self.pos < len(self.data):
            raise DecodeError(f'{len(self.data) - self.pos} trailing bytes'
                              f' after the last symbol')


def encode(symbols, table: CdfTable):
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    index = symbols - table.offset
    if np.any(index < 0) or np.any(index >= table.symbol_count):
        bad = symbols[(index < 0) | (index >= table.symbol_count)][0]
        raise SupportRangeError(f'symbol {bad} outside the table support'
                                f' [{table.min_symbol}, {table.max_symbol}]')
    encoder = _RangeEncoder()
    rows = table._rows
    dims = table.dims
    for j, s in enumerate(index.tolist()):
        row = rows[j % dims]
        encoder.encode(row[s], row[s + 1] - row[s])
    data = encoder.finish()
    return Bitstream(data, 8 * len(data), len(symbols))


def decode(bs: Bitstream, table: CdfTable, count):
    if bs.count != count:
        raise DecodeError(f'bitstream holds {bs.count} symbols,'
                          f' {count} requested')
    if (bs.bit_length + 7) // 8 != len(bs.data):
        raise DecodeError('bitstream length does not match its bit length')
    decoder = _RangeDecoder(bs.data)
    rows = table._rows
    dims = table.dims
    out = np.empty(count, dtype=np.int32)
    for j in range(count):
        row = rows[j % dims]
        value = decoder.target()
        s = bisect.bisect_right(row, value) - 1
        decoder.update(row[s], row[s + 1] - row[s])
        out[j] = s + table.offset
    decoder.finish()
    return out


def ideal_bits(symbols, table: CdfTable):
    """Sum over symbols of ceil(-log2 p), with p read from the table."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    freq = table.frequencies()
    total = 0
    for j, s in enumerate(symbols - table.offset):
        total += int(np.ceil(PRECISION - np.log2(freq[j % table.dims, s])))
    return total
