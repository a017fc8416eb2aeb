import csv
import math
import os
import socket
import threading
import unittest

from hecsb import constants
from hecsb.errors import ArgumentError
from hecsb.models import LinkProfile
from hecsb.throttle import TokenBucket, chunk_size, get_link, \
    latency_model, link_profiles, paced_send

FIXTURE = os.path.join(os.path.dirname(__file__), 'fixtures',
                       'table2_baseline_payloads.csv')


class FakeClock(object):
    """Advances a little on every reading and by the full amount on sleep."""

    def __init__(self, tick=1e-5):
        self.now = 0.0
        self.tick = tick
        self.sleeps = []

    def __call__(self):
        self.now += self.tick
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds


class TestLatencyModel(unittest.TestCase):
    def test_empty_payload_is_round_trip(self):
        assert latency_model(0, LinkProfile('x', 12e6, 5.0)) == 5.0

    def test_proportional_to_payload(self):
        link = LinkProfile('x', 12e6)
        assert math.isclose(latency_model(3000, link), 2.0)
        assert math.isclose(latency_model(6000, link),
                            2 * latency_model(3000, link))

    def test_negative_payload(self):
        with self.assertRaises(ArgumentError):
            latency_model(-1, LinkProfile('x', 1e6))

    def test_baseline_ordering_on_every_link(self):
        with open(FIXTURE, newline='') as f:
            rows = [(r['codec'], int(r['payload_bytes']))
                    for r in csv.DictReader(f)]
        # 10.90 ms at 12 Mbps
        rows.insert(0, ('hecs-b', 16350))
        for link in link_profiles().values():
            times = [latency_model(size, link) for _, size in rows]
            assert times == sorted(times), link.name
            assert len(set(times)) == len(times)

    def test_faster_links_transfer_sooner(self):
        rates = sorted(rate for rate, _ in constants.LINK_PROFILES.values())
        rates += [2 * rates[-1], 10 * rates[-1]]
        for size in (4096, 16350, 1 << 20):
            times = [latency_model(size, LinkProfile('x', rate, 1.0))
                     for rate in rates]
            assert all(later < earlier
                       for earlier, later in zip(times, times[1:])), size

    def test_four_g_reference_time(self):
        assert abs(latency_model(16350, get_link('4g')) - 10.90) < 1e-9


class TestLinks(unittest.TestCase):
    def test_defaults(self):
        links = link_profiles()
        assert set(links) == {'4g', 'wifi', '5g'}
        assert links['5g'].rate_bps == 66.9e6

    def test_unknown_link(self):
        with self.assertRaises(ArgumentError):
            get_link('dialup')

    def test_bad_profile(self):
        with self.assertRaises(ArgumentError):
            link_profiles({'broken': (0.0, 1.0)})


class TestTokenBucket(unittest.TestCase):
    def test_starts_empty(self):
        clock = FakeClock()
        bucket = TokenBucket(8e3, clock=clock, sleep=clock.sleep)
        clock.sleep(5.0)
        start = clock.now
        bucket.consume(100)
        assert clock.now - start >= 0.1

    def test_paces_to_rate(self):
        clock = FakeClock()
        bucket = TokenBucket(8e3, clock=clock, sleep=clock.sleep)
        start = clock.now
        for _ in range(10):
            bucket.consume(10)
        # 100 bytes at 1000 bytes per second
        assert clock.now - start >= 0.1
        assert clock.now - start < 0.1 + 1e-3
        assert clock.sleeps

    def test_short_waits_spin(self):
        clock = FakeClock()
        bucket = TokenBucket(8e6, clock=clock, sleep=clock.sleep)
        bucket.consume(1)
        assert clock.sleeps == []

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ArgumentError):
            TokenBucket(0)
        with self.assertRaises(ArgumentError):
            TokenBucket(1e6).consume(-1)

    def test_chunk_size(self):
        assert chunk_size(12e6) == 1500
        assert chunk_size(1.0) == 1


class TestPacedSend(unittest.TestCase):
    def _measure(self, rate_bps, size):
        left, right = socket.socketpair()
        self.addCleanup(left.close)
        self.addCleanup(right.close)
        received = []

        def drain():
            total = 0
            while total < size:
                chunk = right.recv(65536)
                if not chunk:
                    break
                total += len(chunk)
            received.append(total)

        reader = threading.Thread(target=drain)
        reader.start()
        elapsed = paced_send(left, b'\x00' * size, rate_bps)
        reader.join(5)
        assert received == [size]
        return elapsed

    def test_fidelity(self):
        for rate in (2e6, constants.LINK_PROFILES['4g'][0]):
            expected = latency_model(16350, LinkProfile('x', rate))
            elapsed = self._measure(rate, 16350)
            assert abs(elapsed - expected) <= 0.1 * expected, (rate, elapsed)

    def test_measured_transfer_falls_with_rate(self):
        elapsed = [self._measure(rate, 8192) for rate in (1e6, 2e6, 4e6)]
        assert elapsed[0] > elapsed[1] > elapsed[2], elapsed
