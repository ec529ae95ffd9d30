"""insertkit: instruction-guided object insertion toolkit.

Subpackages:
    core       image/mask/box primitives
    backends   vision-model interfaces, HTTP clients and a mock suite
    datagen    erase-to-insert dataset factory
    diffusion  conditional latent diffusion trainer and sampler
    compose    iterative insertion and beam-search composition
    evalsuite  benchmark metrics and reports
    service    HTTP session service for interactive editing
"""

__version__ = "0.1.0"
