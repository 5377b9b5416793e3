import re
import setuptools

with open('README.md', 'r') as rmd:
    long_description = rmd.read()

version = ''
with open('ebsdcs/__init__.py') as f:
    version = re.search(r'^__version__\s*=\s*[\'"]([^\'"]*)[\'"]', f.read(), re.MULTILINE).group(1)

if not version:
    raise RuntimeError('Version is not set.')

with open('requirements.txt') as f:
    requirements = f.read().splitlines()

extras_require = {
    'tests': [
        'pytest',
    ],
}

setuptools.setup(
    name='ebsdcs',
    version=version,
    author='ebsdcs contributors',
    description='Compressive EBSD simulation: subsampled, noisy pattern acquisition with BPFA map inpainting.',
    long_description=long_description,
    long_description_content_type='text/markdown',
    classifiers=[
        'Programming Language :: Python :: 3.11',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Natural Language :: English',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Image Processing',
    ],
    packages=[
        'ebsdcs',
        'ebsdcs.types',
    ],
    license='MIT',
    python_requires='>=3.10',
    install_requires=requirements,
    extras_require=extras_require,
    entry_points={
        'console_scripts': [
            'ebsdcs=ebsdcs.cli:main',
        ],
    },
)
