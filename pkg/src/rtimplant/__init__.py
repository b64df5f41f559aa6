"""Run-time backdoor implantation for inpainting models."""
