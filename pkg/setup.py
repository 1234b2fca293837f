from setuptools import setup

setup(
   name='pyfwdrates',
   version='0.1.0',
   author='pyfwdrates developers',
   packages=['pyfwdrates', 'pyfwdrates.test'],
   package_data={'pyfwdrates': ['configs/*.yml']},
   entry_points={'console_scripts': ['pyfwdrates = pyfwdrates.cli:main']},
   license='LICENSE.txt',
   description='Forward and backward transition rates for non-Markov multi-state life insurance models',
   long_description=open('README.rst').read(),
   install_requires=[
       "numpy",
       "pandas",
       "pyyaml",
       "requests",
       "jsonschema",
       "joblib",
       "pytest",
   ],
)
