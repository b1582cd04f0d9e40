"""Temporally consistent diffusion video restoration at desk scale.

Submodules: ``scheduler``, ``attention``, ``codec``, ``prompts``,
``denoiser``, ``synth``, ``metrics``, ``pipeline`` and ``cli``.
"""

__version__ = "0.1.0"
