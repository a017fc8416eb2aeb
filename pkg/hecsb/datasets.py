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

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import requests

from hecsb import constants, log
from hecsb.errors import ArgumentError, IngestError
from hecsb.utils import make_rng, now_ms

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


@dataclass
class ImageDataset:
    """Flattened images scaled to [0, 1] and optional integer labels."""
    images: np.ndarray
    labels: Optional[np.ndarray] = None
    source: str = ''

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 2:
            raise ArgumentError(f'images must be (count, pixels), got'
                                f' {self.images.shape}')
        if self.images.size and (self.images.min() < 0.0
                                 or self.images.max() > 1.0):
            raise ArgumentError('pixels must lie in [0, 1]')
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.images.shape[0],):
                raise ArgumentError(f'{len(self.labels)} labels for'
                                    f' {len(self.images)} images')

    def __len__(self):
        return self.images.shape[0]

    @property
    def dim(self):
        return self.images.shape[1]

    def subset(self, count, seed=None):
        """The first ``count`` samples, or a random draw when seeded."""
        count = min(int(count), len(self))
        if seed is None:
            idx = np.arange(count)
        else:
            idx = np.sort(make_rng(seed).choice(len(self), count,
                                                replace=False))
        labels = None if self.labels is None else self.labels[idx]
        return ImageDataset(self.images[idx], labels, self.source)


def _read(path):
    opener = gzip.open if str(path).endswith('.gz') else open
    try:
        with opener(path, 'rb') as f:
            return f.read()
    except (OSError, EOFError) as e:
        raise IngestError(f'{path}: {e}') from e


def _read_images(path):
    data = _read(path)
    if len(data) < 16:
        raise IngestError(f'{path}: truncated IDX header')
    magic, count, rows, cols = struct.unpack('>IIII', data[:16])
    if magic != IMAGES_MAGIC:
        raise IngestError(f'{path}: bad images magic {magic},'
                          f' expected {IMAGES_MAGIC}')
    size = count * rows * cols
    if len(data) - 16 < size:
        raise IngestError(f'{path}: truncated, {len(data) - 16} of {size}'
                          f' pixel bytes present')
    pixels = np.frombuffer(data, dtype=np.uint8, count=size, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float32) / 255.0


def _read_labels(path):
    data = _read(path)
    if len(data) < 8:
        raise IngestError(f'{path}: truncated IDX header')
    magic, count = struct.unpack('>II', data[:8])
    if magic != LABELS_MAGIC:
        raise IngestError(f'{path}: bad labels magic {magic},'
                          f' expected {LABELS_MAGIC}')
    if len(data) - 8 < count:
        raise IngestError(f'{path}: truncated, {len(data) - 8} of {count}'
                          f' labels present')
    return np.frombuffer(data, dtype=np.uint8, count=count,
                         offset=8).astype(np.int64)


def load_idx(images_path, labels_path=None):
    images = _read_images(images_path)
    labels = None
    if labels_path is not None:
        labels = _read_labels(labels_path)
        if len(labels) != len(images):
            raise IngestError(f'{labels_path}: {len(labels)} labels for'
                              f' {len(images)} images in {images_path}')
    log.debug('idx loaded', path=images_path, count=len(images))
    return ImageDataset(images, labels, str(images_path))


def _locate(directory, name):
    for candidate in (name, f'{name}.gz', name.replace('-idx', '.idx'),
                      name.replace('-idx', '.idx') + '.gz'):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    raise IngestError(f'{os.path.join(directory, name)}: not found'
                      f' (plain or .gz)')


def dataset_dir(directory=None):
    return directory or os.environ.get('HECSB_DATASET_DIR',
                                       constants.DEFAULT_DATASET_DIR)


def load_mnist(directory=None, split='train'):
    if split not in MNIST_FILES:
        raise ArgumentError(f'split must be one of {sorted(MNIST_FILES)},'
                            f' got {split!r}')
    directory = dataset_dir(directory)
    images_name, labels_name = MNIST_FILES[split]
    return load_idx(_locate(directory, images_name),
                    _locate(directory, labels_name))


def fetch_mnist(directory=None, base_url=constants.DEFAULT_MNIST_URL,
                timeout_ms=constants.DEFAULT_TIMEOUT_MS):
    """Downloads the four gzipped MNIST files that are not present yet."""
    directory = dataset_dir(directory)
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise IngestError(f'{directory}: {e.strerror}') from e
    paths = []
    for names in MNIST_FILES.values():
        for name in names:
            path = os.path.join(directory, f'{name}.gz')
            paths.append(path)
            if os.path.exists(path):
                continue
            url = f'{base_url.rstrip("/")}/{name}.gz'
            start = now_ms()
            try:
                response = requests.get(url, timeout=timeout_ms / 1000.0)
                response.raise_for_status()
            except requests.exceptions.RequestException as e:
                raise IngestError(f'{url}: download failed: {e}') from e
            tmp = f'{path}.part'
            try:
                with open(tmp, 'wb') as f:
                    f.write(response.content)
                os.replace(tmp, path)
            except OSError as e:
                raise IngestError(f'{path}: {e.strerror}') from e
            log.info(url, method='GET', bytes=len(response.content),
                     duration_ms=now_ms() - start)
    return paths
