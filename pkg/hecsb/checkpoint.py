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

"""HECSB1 tensor container.

Layout: the magic ``HECSB1`` followed by one record per tensor until end of
file. A record is the name length, the UTF-8 name, the rank and the extents
(all 32-bit little-endian unsigned) and then the raw float32 little-endian
values in row-major order.
"""
import struct

import numpy as np

from hecsb.errors import CheckpointError

MAGIC = b'HECSB1'
_U32 = struct.Struct('<I')


def dumps(tensors):
    out = bytearray(MAGIC)
    for name, value in tensors.items():
        array = np.ascontiguousarray(value, dtype='<f4')
        encoded = name.encode('utf-8')
        out += _U32.pack(len(encoded))
        out += encoded
        out += _U32.pack(array.ndim)
        out += struct.pack(f'<{array.ndim}I', *array.shape)
        out += array.tobytes()
    return bytes(out)


def loads(data, source='<bytes>'):
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f'{source}: not a HECSB1 checkpoint')
    tensors = {}
    pos = len(MAGIC)

    def take(count):
        nonlocal pos
        if pos + count > len(data):
            raise CheckpointError(f'{source}: truncated at byte {pos}')
        chunk = data[pos:pos + count]
        pos += count
        return chunk

    while pos < len(data):
        (name_len,) = _U32.unpack(take(4))
        name = take(name_len).decode('utf-8')
        (rank,) = _U32.unpack(take(4))
        shape = struct.unpack(f'<{rank}I', take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(take(4 * count), dtype='<f4')
        tensors[name] = values.astype(np.float32).reshape(shape)
    return tensors


def save(path, tensors):
    data = dumps(tensors)
    try:
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise CheckpointError(f'{path}: {e.strerror}') from e


def load(path):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f'{path}: {e.strerror}') from e
    return loads(data, source=str(path))
