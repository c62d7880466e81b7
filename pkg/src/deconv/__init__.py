"""NPMLE deconvolution and linear-functional inference under exponential/Laplace noise."""
