__version__ = '0.1.0'
__comparability_version__ = '0.1.0'
