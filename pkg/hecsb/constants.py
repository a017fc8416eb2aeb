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

DEFAULT_HOST = 'localhost'
DEFAULT_PORT = 7461
DEFAULT_TIMEOUT_MS = 10000
DEFAULT_DATASET_DIR = 'data/mnist'
DEFAULT_OUT_DIR = 'out'
DEFAULT_SEED = 0
DEFAULT_MNIST_URL = 'https://ossci-datasets.s3.amazonaws.com/mnist/'

# Optimizer
LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
BATCH_SIZE = 128

# Floor applied inside the log terms of the distillation KL.
EPSILON_PROB = 1e-9

# Compressed sensing
IMAGE_SIDE = 28
IMAGE_DIM = IMAGE_SIDE * IMAGE_SIDE
NOISE_SIGMA = 0.1
MEASUREMENT_COUNTS = (2, 5, 10, 25, 50, 100)
RECON_SUBSET = 200
RECON_TRAIN_SUBSET = 10000
LAMBDA_VALIDATION_SUBSET = 100
LAMBDA_GRID = (1e-4, 3.1623e-4, 1e-3, 3.1623e-3, 1e-2, 3.1623e-2, 1e-1)
ISTA_MAX_ITERS = 2000
ISTA_TOLERANCE = 1e-7
POWER_ITERATIONS = 100
DECODER_HIDDEN = (600, 600)
HECSA_EPOCHS = 30
VAE_LATENT_DIM = 20
VAE_EPOCHS = 30
VAE_DECODER_STD = 0.1
VAE_RESTARTS = 10
VAE_STEPS = 200
VAE_STEP_SIZE = 0.1

# Bottleneck distillation
TEACHER_HIDDEN = (256, 128)
TEACHER_EPOCHS = 8
TEACHER_ACCURACY_GATE = 0.95
LATENT_DIM = 32
ENCODER_HIDDEN = 256
SUPPORT_BOUND = 32
BETAS = (0.001, 0.01, 0.1)
BETA = 0.01
ALPHA = 0.5
TEMPERATURE = 4.0
STAGE1_EPOCHS = 10
STAGE2_EPOCHS = 5

# Entropy coding
CDF_PRECISION = 16

# Split runtime
PROTOCOL_VERSION = 1
MAX_FRAME_RANK = 8
MAX_FRAME_PAYLOAD = 64 * 1024 * 1024
THROTTLE_GRANULARITY_MS = 1.0
LATENCY_REPEATS = 100

# name -> (rate in bits/second, round-trip time in ms)
LINK_PROFILES = {
    '4g': (12.0e6, 0.0),
    'wifi': (54.0e6, 0.0),
    '5g': (66.9e6, 0.0),
}
