"""Shape generation by diffusion over the weights of per-shape implicit
occupancy MLPs: fit one small MLP per mesh, train a transformer denoiser on
the flattened weight vectors, sample new weights, and extract surfaces with
marching cubes."""

__version__ = "0.1.0"
