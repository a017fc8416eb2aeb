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

# coding: utf-8

"""
    HECS-B

    Split computing with compressed-sensing bottlenecks, learned entropy
    coding and a throttled head/tail inference runtime.
"""
import codecs
import os

from setuptools import find_packages, setup


def read(rel_path):
    here = os.path.abspath(os.path.dirname(__file__))
    with codecs.open(os.path.join(here, rel_path), 'r') as fp:
        return fp.read()


def get_version(rel_path):
    for line in read(rel_path).splitlines():
        if line.startswith('VERSION'):
            delim = '"' if '"' in line else "'"
            return line.split(delim)[1]
    else:
        raise RuntimeError("Unable to find version string.")


NAME = "hecsb-python"

setup(
    name=NAME,
    python_requires='>=3.7',
    version=get_version('hecsb/version.py'),
    description="HECS-B split computing pipeline",
    author_email="",
    url="",
    keywords=["split computing", "compressed sensing", "entropy coding"],
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.17",
        "scipy>=1.4",
        "requests"
    ],
    entry_points={
        "console_scripts": ["hecsb=hecsb.cli:main"]
    },
    include_package_data=True,
    long_description="""\
    HECS-B trains compressed-sensing reconstructors and bottlenecked split
    classifiers, entropy-codes their latents and serves the split tail over
    a framed socket protocol with bandwidth-throttled benchmarking.
    """
)
