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

import argparse
import os
import sys

from hecsb import bottleneck, constants, experiments, log
from hecsb.client import SplitClient
from hecsb.config import load_config
from hecsb.datasets import fetch_mnist, load_mnist
from hecsb.errors import HecsbError
from hecsb.server import TailServer
from hecsb.throttle import get_link
from hecsb.version import VERSION


def _model_dir(config):
    return config.model_dir or os.path.join(config.out_dir, 'model')


def cmd_recon(config, args):
    print(experiments.run_recon_experiment(config))


def cmd_rd(config, args):
    print(experiments.run_rd_experiment(config))


def cmd_latency(config, args):
    config.model_dir = _model_dir(config)
    address = (config.host, config.port) if args.connect else None
    print(experiments.run_latency_experiment(config, address=address))


def cmd_train_teacher(config, args):
    train, test = experiments.load_datasets(config)
    teacher = bottleneck.train_teacher(train, config.teacher_hidden,
                                       config.teacher_epochs, config.seed,
                                       test=test, gate=config.teacher_gate,
                                       batch_size=config.batch_size,
                                       lr=config.learning_rate)
    path = os.path.join(_model_dir(config), bottleneck.TEACHER_FILE)
    bottleneck.save_teacher(teacher, path)
    print(path)


def cmd_train_bottleneck(config, args):
    config.model_dir = _model_dir(config)
    train, test = experiments.load_datasets(config)
    teacher = experiments.teacher_for(config, train, test)
    split = experiments.train_split(config, teacher, train)
    bottleneck.save_split(split, config.model_dir)
    payload, top1 = experiments.evaluate_split(split, test)
    print(f'model_dir={config.model_dir} beta={config.beta}'
          f' payload_bytes={payload:.2f} top1={top1:.4f}')


def cmd_serve(config, args):
    tail = bottleneck.load_tail(_model_dir(config))
    server = TailServer(tail, config.host, config.port)
    print(f'serving on {server.address[0]}:{server.address[1]}', flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()


def cmd_infer(config, args):
    head = bottleneck.load_head(_model_dir(config))
    test = load_mnist(config.dataset_dir, 'test')
    link = get_link(args.link, {name: (p.rate_bps, p.rtt_ms) for name, p
                                in config.links.items()}) \
        if args.link else None
    print('index,label,transfer_ms,total_ms,payload_bytes')
    with SplitClient(config.host, config.port, config.timeout_ms) as client:
        client.handshake(head.digest())
        for i, x in enumerate(test.images[:args.count]):
            label, _, report = client.infer(head, x, link)
            print(f'{i},{label},{report.transfer_ms:.3f},'
                  f'{report.total_ms:.3f},{report.payload_bytes}')


def cmd_fetch_mnist(config, args):
    for path in fetch_mnist(config.dataset_dir, args.url):
        print(path)


def _common(parser):
    parser.add_argument('--config', help='key = value experiment config')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--out', dest='out_dir')
    parser.add_argument('--dataset', dest='dataset_dir',
                        help='directory holding the MNIST IDX files')
    parser.add_argument('--log-level',
                        choices=['DEBUG', 'INFO', 'WARN', 'ERROR'])


def build_parser():
    parser = argparse.ArgumentParser(
        prog='hecsb', description='Split computing with compressed'
                                  ' bottlenecks: experiments and runtime.')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {VERSION}')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    def command(name, handler, help):
        sub = commands.add_parser(name, help=help)
        _common(sub)
        sub.set_defaults(handler=handler)
        return sub

    recon = command('recon', cmd_recon, 'reconstruction error curves')
    recon.add_argument('--methods', help='comma list of lasso,vae,hecsa')
    recon.add_argument('--m', dest='measurement_counts',
                       help='comma list of measurement counts')
    recon.add_argument('--images', help='IDX image file used instead of'
                                        ' MNIST')
    recon.add_argument('--subset', dest='recon_subset', type=int)

    rd = command('rd', cmd_rd, 'rate-distortion curve over beta')
    rd.add_argument('--betas', help='comma list of beta values')
    rd.add_argument('--model-dir', help='directory with teacher.ckpt')

    latency = command('latency', cmd_latency, 'transfer and total latency'
                                              ' per link profile')
    latency.add_argument('--model-dir')
    latency.add_argument('--baseline-csv',
                         help='codec,payload_bytes rows for analytic rows')
    latency.add_argument('--repeats', dest='latency_repeats', type=int)
    latency.add_argument('--connect', action='store_true',
                         help='use the server at --host/--port instead of a'
                              ' loopback one')
    latency.add_argument('--host')
    latency.add_argument('--port', type=int)

    teacher = command('train-teacher', cmd_train_teacher,
                      'train and save the teacher classifier')
    teacher.add_argument('--model-dir')
    teacher.add_argument('--epochs', dest='teacher_epochs', type=int)

    split = command('train-bottleneck', cmd_train_bottleneck,
                    'train and save a split model')
    split.add_argument('--model-dir')
    split.add_argument('--beta', type=float)

    serve = command('serve', cmd_serve, 'serve a split tail')
    serve.add_argument('--model-dir')
    serve.add_argument('--host')
    serve.add_argument('--port', type=int)

    infer = command('infer', cmd_infer, 'classify test images remotely')
    infer.add_argument('--model-dir')
    infer.add_argument('--host')
    infer.add_argument('--port', type=int)
    infer.add_argument('--link', help='throttle to a named link profile')
    infer.add_argument('--count', type=int, default=10)

    fetch = command('fetch-mnist', cmd_fetch_mnist,
                    'download the MNIST IDX files')
    fetch.add_argument('--url', default=constants.DEFAULT_MNIST_URL)
    return parser


_NOT_CONFIG = {'command', 'handler', 'config', 'log_level', 'connect',
               'link', 'count', 'url'}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    if args.log_level:
        log.set_level(args.log_level)
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    try:
        config = load_config(args.config, overrides)
        args.handler(config, args)
    except HecsbError as e:
        message = str(e).replace('\n', ' ')
        print(f'error={type(e).__name__} message={message}', file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
