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

"""SplitFrame wire format.

All integers are big-endian::

    'HSB1' | version u8 | codec u8 | rank u32 | extents u32 * rank
           | payload length u32 | payload | crc32 u32

The CRC-32 covers every byte before it.
"""
import struct
import zlib
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from hecsb import constants
from hecsb.errors import BadMagicError, BadVersionError, ChecksumError, \
    MalformedFrameError, TruncatedFrameError
from hecsb.models import Codec

MAGIC = b'HSB1'

_PREFIX = struct.Struct('>4sBBI')
_U32 = struct.Struct('>I')
_RESYNC_CHUNK = 4096


@dataclass(frozen=True)
class SplitFrame:
    codec: Codec
    shape: Tuple[int, ...]
    payload: bytes
    version: int = constants.PROTOCOL_VERSION

    @property
    def size(self):
        return _PREFIX.size + 4 * len(self.shape) + 8 + len(self.payload)


def frame_encode(codec, shape, payload, version=constants.PROTOCOL_VERSION):
    shape = tuple(int(s) for s in shape)
    if len(shape) > constants.MAX_FRAME_RANK:
        raise MalformedFrameError(f'rank {len(shape)} exceeds'
                                  f' {constants.MAX_FRAME_RANK}')
    if any(s < 0 for s in shape):
        raise MalformedFrameError(f'negative extent in {shape}')
    if len(payload) > constants.MAX_FRAME_PAYLOAD:
        raise MalformedFrameError(f'payload of {len(payload)} bytes exceeds'
                                  f' {constants.MAX_FRAME_PAYLOAD}')
    head = _PREFIX.pack(MAGIC, version, int(codec), len(shape))
    head += struct.pack(f'>{len(shape)}I', *shape)
    body = head + _U32.pack(len(payload)) + bytes(payload)
    return body + _U32.pack(zlib.crc32(body))


def _check_prefix(data):
    if len(data) < len(MAGIC):
        raise TruncatedFrameError(f'frame truncated at {len(data)} bytes')
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f'bad frame magic {bytes(data[:4])!r}')
    if len(data) < _PREFIX.size:
        raise TruncatedFrameError(f'frame truncated at {len(data)} bytes')
    _, version, codec, rank = _PREFIX.unpack(data[:_PREFIX.size])
    if version != constants.PROTOCOL_VERSION:
        raise BadVersionError(f'unsupported protocol version {version}')
    if rank > constants.MAX_FRAME_RANK:
        raise MalformedFrameError(f'rank {rank} exceeds'
                                  f' {constants.MAX_FRAME_RANK}')
    return version, codec, rank


def _check_length(length):
    if length > constants.MAX_FRAME_PAYLOAD:
        raise MalformedFrameError(f'payload length {length} exceeds'
                                  f' {constants.MAX_FRAME_PAYLOAD}')


def frame_decode(data):
    data = bytes(data)
    version, codec, rank = _check_prefix(data)
    pos = _PREFIX.size
    if len(data) < pos + 4 * rank + 4:
        raise TruncatedFrameError(f'frame truncated at {len(data)} bytes')
    shape = struct.unpack(f'>{rank}I', data[pos:pos + 4 * rank])
    pos += 4 * rank
    (length,) = _U32.unpack(data[pos:pos + 4])
    _check_length(length)
    pos += 4
    end = pos + length + 4
    if len(data) < end:
        raise TruncatedFrameError(f'frame needs {end} bytes, got {len(data)}')
    if len(data) > end:
        raise MalformedFrameError(f'{len(data) - end} trailing bytes after'
                                  f' the frame')
    (crc,) = _U32.unpack(data[end - 4:end])
    if zlib.crc32(data[:end - 4]) != crc:
        raise ChecksumError('frame checksum mismatch')
    try:
        codec = Codec(codec)
    except ValueError as e:
        raise MalformedFrameError(f'unknown codec id {codec}') from e
    return SplitFrame(codec, tuple(shape), data[pos:pos + length], version)


class FrameReader(object):
    """Reads frames off a stream socket and resynchronises after garbage.

    Header errors leave the rejected bytes buffered and ``aligned`` false;
    :meth:`resync` then skips ahead to the next frame magic. Errors found
    after a whole frame was read leave the reader on a frame boundary.
    """

    def __init__(self, sock):
        self._sock = sock
        self._buffer = bytearray()
        self.aligned = True

    def _fill(self, count):
        while len(self._buffer) < count:
            chunk = self._sock.recv(count - len(self._buffer))
            if not chunk:
                return False
            self._buffer += chunk
        return True

    def _misaligned(self, exc):
        self.aligned = False
        return exc

    def read_frame(self):
        """One frame; ``None`` on a clean end of stream between frames."""
        buffer = self._buffer
        if not self._fill(len(MAGIC)):
            if not buffer:
                return None
            raise TruncatedFrameError('connection closed inside a frame'
                                      ' header')
        # reject garbage before blocking on the rest of the header
        if buffer[:len(MAGIC)] != MAGIC:
            raise self._misaligned(BadMagicError(
                f'bad frame magic {bytes(buffer[:len(MAGIC)])!r}'))
        if not self._fill(_PREFIX.size):
            raise TruncatedFrameError('connection closed inside a frame'
                                      ' header')
        try:
            _, _, rank = _check_prefix(buffer)
            header = _PREFIX.size + 4 * rank + 4
            if not self._fill(header):
                raise TruncatedFrameError('connection closed inside a frame'
                                          ' header')
            (length,) = _U32.unpack(buffer[header - 4:header])
            _check_length(length)
        except (BadVersionError, MalformedFrameError) as e:
            raise self._misaligned(e)
        end = header + length + 4
        if not self._fill(end):
            raise TruncatedFrameError('connection closed inside a frame')
        data = bytes(buffer[:end])
        del buffer[:end]
        return frame_decode(data)

    def resync(self):
        """Skips to the next frame magic; ``False`` if the stream ends first."""
        if self.aligned:
            return True
        buffer = self._buffer
        del buffer[:1]
        while True:
            found = buffer.find(MAGIC)
            if found >= 0:
                del buffer[:found]
                self.aligned = True
                return True
            # keep a tail that may be the start of a split magic
            del buffer[:max(0, len(buffer) - (len(MAGIC) - 1))]
            chunk = self._sock.recv(_RESYNC_CHUNK)
            if not chunk:
                buffer.clear()
                return False
            buffer += chunk


def recv_frame(sock):
    """Reads one frame; ``None`` on a clean end of stream between frames."""
    return FrameReader(sock).read_frame()


def send_frame(sock, frame: SplitFrame):
    data = frame_encode(frame.codec, frame.shape, frame.payload,
                        frame.version)
    sock.sendall(data)
    return len(data)


def encode_tensor(array):
    """Big-endian float32 bytes of ``array`` and its shape."""
    array = np.ascontiguousarray(array, dtype='>f4')
    return array.tobytes(), array.shape


def decode_tensor(frame: SplitFrame):
    count = int(np.prod(frame.shape, dtype=np.int64))
    if len(frame.payload) != 4 * count:
        raise MalformedFrameError(f'{len(frame.payload)} payload bytes for a'
                                  f' float32 tensor of shape {frame.shape}')
    values = np.frombuffer(frame.payload, dtype='>f4')
    return values.astype(np.float32).reshape(frame.shape)


def tensor_frame(codec, array):
    payload, shape = encode_tensor(array)
    return SplitFrame(Codec(codec), shape, payload)


def error_frame(exc):
    message = f'{type(exc).__name__}: {exc}'.encode('utf-8')
    return SplitFrame(Codec.ERROR, (), message)


def parse_error(frame: SplitFrame):
    """``(error class name, message)`` carried by an error frame."""
    text = frame.payload.decode('utf-8', errors='replace')
    name, _, message = text.partition(': ')
    return name, message
