from setuptools import setup, find_packages
import version

setup(
    name='onestep-sr',
    version=version.__version__,
    packages=find_packages(include=['onestep_sr', 'onestep_sr.*']),
    py_modules=['version'],
    include_package_data=True,
    package_data={
        '': ['../version.py'],
        'onestep_sr': ['resources/*.txt'],
    },
    install_requires=[
        'numpy',
        'scipy',
        'chardet',
        'psutil'
    ],
    extras_require={
        'test': ['pytest'],
    },
    entry_points={
        'console_scripts': [
            'onestep-sr=onestep_sr.main:main',
        ],
    },
    description='One-step latent super-resolution with a linear-attention transformer, '
                'low-rank adapters and prompt-aware block pruning',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
    license='MIT',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Image Processing',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
    ],
    keywords='super-resolution linear-attention lora pruning',
)
