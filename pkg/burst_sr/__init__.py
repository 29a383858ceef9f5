# Burst super-resolution toolkit
__version__ = "1.0.0"
