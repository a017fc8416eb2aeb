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

import socket
import threading

from hecsb import constants, log
from hecsb.bottleneck import SplitTail, tail_infer, tail_infer_features
from hecsb.codec import Bitstream
from hecsb.errors import HecsbError, MalformedFrameError, ProtocolError, \
    StartupError, TruncatedFrameError
from hecsb.models import Codec
from hecsb.protocol import FrameReader, SplitFrame, decode_tensor, \
    error_frame, send_frame, tensor_frame
from hecsb.utils import now_ms

_BACKLOG = 16


class TailServer(object):
    """Serves a split tail over SplitFrames, one thread per connection."""

    def __init__(self, tail: SplitTail, host=constants.DEFAULT_HOST,
                 port=constants.DEFAULT_PORT):
        self._tail = tail
        self._digest = tail.digest()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, int(port)))
            self._sock.listen(_BACKLOG)
        except OSError as e:
            self._sock.close()
            raise StartupError(f'cannot listen on {host}:{port}:'
                               f' {e.strerror}') from e
        self._closed = threading.Event()
        self._thread = None
        self._connections = set()
        self._lock = threading.Lock()
        log.info('tail server listening', address=self.address)

    @property
    def address(self):
        return self._sock.getsockname()[:2]

    def start(self):
        self._thread = threading.Thread(target=self.serve_forever,
                                        name='hecsb-accept', daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        while not self._closed.is_set():
            try:
                conn, peer = self._sock.accept()
            except OSError:
                if self._closed.is_set():
                    break
                raise
            worker = threading.Thread(target=self._handle, args=(conn, peer),
                                      daemon=True)
            worker.start()

    def close(self):
        self._closed.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        with self._lock:
            for conn in list(self._connections):
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if self._thread is not None:
            self._thread.join(timeout=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _handle(self, conn, peer):
        with self._lock:
            self._connections.add(conn)
        log.info('connection opened', peer=peer)
        served = 0
        reader = FrameReader(conn)
        try:
            while not self._closed.is_set():
                try:
                    frame = reader.read_frame()
                except TruncatedFrameError as e:
                    log.warn('protocol error', peer=peer, error=e)
                    break
                except ProtocolError as e:
                    log.warn('protocol error', peer=peer,
                             error=type(e).__name__)
                    send_frame(conn, error_frame(e))
                    if not reader.resync():
                        break
                    continue
                if frame is None:
                    break
                send_frame(conn, self._reply(frame, peer))
                served += 1
        except OSError as e:
            log.warn('connection lost', peer=peer, error=e)
        finally:
            with self._lock:
                self._connections.discard(conn)
            conn.close()
            log.info('connection closed', peer=peer, frames=served)

    def _reply(self, frame: SplitFrame, peer):
        start = now_ms()
        try:
            if frame.codec == Codec.HANDSHAKE:
                return SplitFrame(Codec.HANDSHAKE, (), self._digest)
            if frame.codec == Codec.ENTROPY:
                bs = Bitstream.from_bytes(frame.payload)
                _, logits = tail_infer(self._tail, bs, frame.shape)
            elif frame.codec == Codec.RAW:
                _, logits = tail_infer_features(self._tail,
                                                decode_tensor(frame))
            else:
                raise MalformedFrameError(f'unexpected {frame.codec.name}'
                                          f' frame')
        except HecsbError as e:
            log.warn('request failed', peer=peer, error=type(e).__name__)
            return error_frame(e)
        log.debug('request served', peer=peer, codec=frame.codec.name,
                  duration_ms=now_ms() - start)
        return tensor_frame(Codec.LOGITS, logits)


def serve_tail(tail: SplitTail, host=constants.DEFAULT_HOST,
               port=constants.DEFAULT_PORT):
    """Binds and starts a :class:`TailServer` in the background."""
    return TailServer(tail, host, port).start()
