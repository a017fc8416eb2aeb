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

import os
import socket
import time

import numpy as np

from hecsb import log
from hecsb.bottleneck import SplitHead, head_features, head_infer
from hecsb.constants import DEFAULT_HOST, DEFAULT_PORT, DEFAULT_TIMEOUT_MS
from hecsb.errors import HandshakeError, RemoteError, \
    StateError, TransportError
from hecsb.models import Codec, LinkProfile, TimingReport
from hecsb.protocol import SplitFrame, decode_tensor, encode_tensor, \
    frame_encode, parse_error, recv_frame
from hecsb.throttle import paced_send
from hecsb.utils import now_ms


# Split Client
class SplitClient(object):
    def __init__(self, host=None, port=None, timeout_ms=None):
        self._host = host or os.environ.get('HECSB_HOST', DEFAULT_HOST)
        self._port = int(port or os.environ.get('HECSB_PORT', DEFAULT_PORT))
        self._timeout = self._to_seconds(timeout_ms or os.environ.get(
            'HECSB_TIMEOUT_MS', DEFAULT_TIMEOUT_MS)
        )
        self._sock = None

        log.debug(f'{self._host}:{self._port}')

    @property
    def address(self):
        return self._host, self._port

    def connect(self):
        try:
            self._sock = socket.create_connection(self.address,
                                                  timeout=self._timeout)
        except OSError as e:
            raise TransportError(f'cannot connect to {self._host}:'
                                 f'{self._port}: {e}') from e
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return self

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self.connect()

    def __exit__(self, *exc):
        self.close()

    # Handshake
    def handshake(self, digest):
        """Checks that the server decodes with the same prior tables."""
        reply = self._exchange(
            frame_encode(Codec.HANDSHAKE, (), digest), Codec.HANDSHAKE)
        if reply.payload != digest:
            raise HandshakeError(f'server model {reply.payload.hex()[:16]}'
                                 f' does not match local model'
                                 f' {digest.hex()[:16]}')
        log.info('handshake ok', digest=digest.hex()[:16])

    # Inference
    def infer(self, head: SplitHead, x, link: LinkProfile = None):
        """Runs the head locally and the tail remotely.

        Returns ``(label, logits, TimingReport)``.
        """
        t0 = now_ms()
        z, bs = head_infer(head, x)
        data = frame_encode(Codec.ENTROPY, z.shape, bs.to_bytes())
        return self._infer(data, t0, link)

    def infer_raw(self, head: SplitHead, x, link: LinkProfile = None):
        """Split without the bottleneck: sends the float32 teacher feature."""
        t0 = now_ms()
        h = head_features(head, x)
        payload, shape = encode_tensor(h)
        data = frame_encode(Codec.RAW, shape, payload)
        return self._infer(data, t0, link)

    def _infer(self, data, t0, link):
        t1 = now_ms()
        half_rtt = link.rtt_ms / 2000.0 if link else 0.0
        if half_rtt:
            time.sleep(half_rtt)
        self._send(data, link)
        t2 = now_ms()
        reply = self._receive(Codec.LOGITS)
        t3 = now_ms()
        if half_rtt:
            time.sleep(half_rtt)
        t4 = now_ms()

        logits = decode_tensor(reply)
        labels = np.argmax(logits, axis=-1)
        label = int(labels) if np.ndim(labels) == 0 else labels
        report = TimingReport(head_ms=t1 - t0,
                              transfer_ms=(t2 - t1) + (t4 - t3),
                              tail_ms=t3 - t2, total_ms=t4 - t0,
                              payload_bytes=len(data))
        log.info(f'{self._host}:{self._port}', method='INFER',
                 payload_bytes=len(data), duration_ms=report.total_ms)
        return label, logits, report

    # Common
    def _exchange(self, data, expected):
        self._send(data, None)
        return self._receive(expected)

    def _send(self, data, link):
        if self._sock is None:
            raise StateError('client is not connected')
        try:
            if link is None:
                self._sock.sendall(data)
            else:
                paced_send(self._sock, data, link.rate_bps)
        except OSError as e:
            raise TransportError(f'send failed: {e}') from e

    def _receive(self, expected):
        try:
            reply = recv_frame(self._sock)
        except socket.timeout as e:
            raise TransportError(f'no reply within {self._timeout}s') from e
        except OSError as e:
            raise TransportError(f'receive failed: {e}') from e
        if reply is None:
            raise TransportError('server closed the connection')
        if reply.codec == Codec.ERROR:
            self._raise_remote_error(reply)
        if reply.codec != expected:
            raise TransportError(f'expected a {expected.name} frame, got'
                                 f' {reply.codec.name}')
        return reply

    @staticmethod
    def _raise_remote_error(reply: SplitFrame):
        name, message = parse_error(reply)
        raise RemoteError(f'{name}: {message}')

    @staticmethod
    def _to_seconds(timeout_ms):
        return float(timeout_ms) / 1000.0


def infer_remote(head: SplitHead, address, x, link: LinkProfile = None,
                 timeout_ms=None):
    """One-shot remote inference: connect, handshake, infer, close.

    Returns ``(label, TimingReport)``.
    """
    host, port = address
    with SplitClient(host, port, timeout_ms) as client:
        client.handshake(head.digest())
        label, _, report = client.infer(head, x, link)
    return label, report
