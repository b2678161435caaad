#!/usr/bin/env python

from os.path import join, dirname, abspath, isfile
from setuptools import setup

this_directory = abspath(dirname(__file__))
with open(join(this_directory, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

install_requires = []
if isfile(join(this_directory, "requirements.txt")):
    with open(join(this_directory, "requirements.txt"), encoding='utf-8') as f:
        install_requires = [line.strip() for line in f if line.strip()]

__version__ = "0.0.0"

exec(open(join(dirname(__file__), 'blip', 'version.py')).read())

setup(name='blip-toolkit',
    version=__version__,
    description='Quantitative MRI parameter mapping from undersampled fingerprinting data',
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=['blip', 'blip.bloch', 'blip.dictionary', 'blip.sampling', 'blip.recon', 'blip.phantom',
        'blip.experiment', 'blip.stack', 'blip.utilities'],
    package_data={'blip.stack': ['*.yaml']},
    install_requires=install_requires,
    include_package_data=True,
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
    ],
    python_requires='>=3.9',
    entry_points={
        'console_scripts': ['blip=blip.utilities.cli:main'],
    },
)
