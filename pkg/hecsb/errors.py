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


class HecsbError(Exception):
    pass


class ArgumentError(HecsbError, ValueError):
    pass


class DimensionError(ArgumentError):
    pass


class StateError(HecsbError):
    pass


class TrainingError(HecsbError):
    pass


class SupportRangeError(HecsbError):
    pass


class SolverError(HecsbError):
    pass


class DecodeError(HecsbError):
    pass


class IngestError(HecsbError):
    pass


class ConfigError(HecsbError):
    pass


class CheckpointError(HecsbError):
    pass


class ProtocolError(HecsbError):
    pass


class BadMagicError(ProtocolError):
    pass


class BadVersionError(ProtocolError):
    pass


class ChecksumError(ProtocolError):
    pass


class TruncatedFrameError(ProtocolError):
    pass


class MalformedFrameError(ProtocolError):
    pass


class TransportError(HecsbError):
    pass


class HandshakeError(TransportError):
    pass


class RemoteError(TransportError):
    pass


class StartupError(HecsbError):
    pass
