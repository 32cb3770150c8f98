#!/usr/bin/env python
# -*- coding: utf-8 -*-

'''The setup script.'''

from setuptools import setup


def readme():
    with open('README.md', 'r') as f:
        return f.read()


requirements = ['numpy', 'networkx']

test_requirements = ['pytest', 'pyflakes', 'pycodestyle']


setup(name='phase_tuner',
      version='0.1.0',
      description='phase-ordering autotuner driving an external IR optimizer',
      long_description=readme(),
      long_description_content_type='text/markdown',
      keywords='compiler phase-ordering autotuning llvm',
      license='GPL',
      entry_points={
          'console_scripts': ['phase-tuner=phase_tuner.cli:main']},
      packages=['phase_tuner'],
      package_data={
          'phase_tuner': [
              'data/*.lib', 'data/*.tsv'
          ]
      },
      classifiers=[
          'Programming Language :: Python :: 3',
          'License :: OSI Approved :: GNU General Public License v2 or later (GPLv2+)',
          'Operating System :: OS Independent',
          'Topic :: Software Development :: Compilers'
      ],
      python_requires='>=3.8',
      install_requires=requirements,
      extras_require={'test': test_requirements},
      zip_safe=False)
