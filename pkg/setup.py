"""A setuptools based setup module.
See:
https://packaging.python.org/en/latest/distributing.html
https://github.com/pypa/sampleproject
"""

# Always prefer setuptools over distutils
from setuptools import setup
# To use a consistent encoding
from codecs import open
from os import path

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

setup(
  name='medanon',

  # Versions should comply with PEP440.
  version='0.1.0',

  description='Adversarially trained anonymization of tabular medical records',
  long_description=long_description,
  long_description_content_type='text/x-rst',

  license='MIT',

  classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
  ],

  keywords='anonymization privacy differential-privacy adversarial',

  packages=['medanon',
            'medanon.tools'
            ],

  # cox keeps its run tables in HDF5 (tables) and logs scalars through
  # tensorboardX; gitpython stamps runs with the commit they came from.
  install_requires=['tqdm', 'gitpython', 'cox', 'scikit-learn', 'torch',
                    'pandas', 'numpy', 'scipy', 'dill', 'tensorboardX',
                    'tables'],
  extras_require={
      'test': ['pytest', 'hypothesis'],
  },
  entry_points={
      'console_scripts': ['medanon=medanon.main:run'],
  },
)
