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

import time

from hecsb import constants
from hecsb.errors import ArgumentError
from hecsb.models import LinkProfile
from hecsb.utils import check_non_negative, check_positive

# below this much remaining wait the pacer spins instead of sleeping
_SPIN_S = 0.002


class TokenBucket(object):
    """Paces a byte stream to ``rate_bps``.

    The bucket starts empty and is refilled continuously, so sending n bytes
    through it takes ``8 n / rate_bps`` seconds from the first call to
    :meth:`consume` onwards.
    """

    def __init__(self, rate_bps, clock=time.perf_counter, sleep=time.sleep):
        check_positive(rate_bps, 'rate_bps')
        self._rate = float(rate_bps)
        self._clock = clock
        self._sleep = sleep
        self._start = None
        self._consumed_bits = 0.0

    @property
    def rate_bps(self):
        return self._rate

    def consume(self, nbytes):
        """Blocks until ``nbytes`` more bytes fit the configured rate."""
        check_non_negative(nbytes, 'nbytes')
        if self._start is None:
            self._start = self._clock()
        self._consumed_bits += 8.0 * nbytes
        self._wait_until(self._start + self._consumed_bits / self._rate)

    def _wait_until(self, deadline):
        remaining = deadline - self._clock()
        if remaining > _SPIN_S:
            self._sleep(remaining - _SPIN_S / 2)
        while self._clock() < deadline:
            pass


def chunk_size(rate_bps, granularity_ms=constants.THROTTLE_GRANULARITY_MS):
    """Bytes the link carries in one pacing interval, at least one."""
    check_positive(granularity_ms, 'granularity_ms')
    return max(1, int(rate_bps * granularity_ms / 1000.0 / 8.0))


def paced_send(sock, data, rate_bps,
               granularity_ms=constants.THROTTLE_GRANULARITY_MS,
               bucket=None):
    """Sends ``data`` at ``rate_bps``; returns the elapsed milliseconds."""
    bucket = bucket or TokenBucket(rate_bps)
    step = chunk_size(rate_bps, granularity_ms)
    view = memoryview(data)
    start = time.perf_counter()
    for pos in range(0, len(view), step):
        chunk = view[pos:pos + step]
        bucket.consume(len(chunk))
        sock.sendall(chunk)
    return (time.perf_counter() - start) * 1000.0


def latency_model(payload_bytes, link: LinkProfile):
    """Predicted transfer time in ms: serialization delay plus round trip."""
    check_non_negative(payload_bytes, 'payload_bytes')
    return payload_bytes * 8.0 / link.rate_bps * 1000.0 + link.rtt_ms


def link_profiles(profiles=None):
    """``LinkProfile`` objects keyed by name, from ``name -> (rate, rtt)``."""
    profiles = constants.LINK_PROFILES if profiles is None else profiles
    links = {}
    for name, (rate_bps, rtt_ms) in profiles.items():
        try:
            links[name] = LinkProfile(name, float(rate_bps), float(rtt_ms))
        except ValueError as e:
            raise ArgumentError(str(e)) from e
    return links


def get_link(name, profiles=None):
    links = link_profiles(profiles)
    if name not in links:
        raise ArgumentError(f'unknown link {name!r}, known:'
                            f' {", ".join(sorted(links))}')
    return links[name]
