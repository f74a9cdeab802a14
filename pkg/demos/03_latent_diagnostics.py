"""Scatter matrices, Fisher score and an LDA projection of a feature set."""
import numpy as np

from ndalab.data import BlobSpec, gen_blobs
from ndalab.discriminant import (diagnose_latents, fisher_score, jacobi_eigen_symmetric, lda_projection,
                                 scatter_matrices, total_scatter)

data = gen_blobs(BlobSpec(num_classes=3, dim=4, per_class=200, spread=2.0, seed=5))

# %% within + between equals the total scatter
stats = scatter_matrices(data.features, data.labels)
gap = np.abs(stats.s_within + stats.s_between - total_scatter(data.features)).max()
print(f"S_W + S_B - S_T max entry: {gap:.1e}")

# %% separability score with a small ridge on S_W
print("fisher score:", fisher_score(stats, ridge=1e-6))
print(diagnose_latents(data.features, data.labels))

# %% the eigensolver behind the projection
res = jacobi_eigen_symmetric(stats.s_within)
print("S_W eigenvalues:", np.round(res.eigenvalues, 4), f"({res.sweeps} sweeps)")

# %% 2-D LDA projection: at most K - 1 = 2 useful directions
proj = lda_projection(stats, 2)
print("generalised eigenvalues:", np.round(proj.eigenvalues, 4))
z = data.features @ proj.matrix
print("projected fisher score:", fisher_score(scatter_matrices(z, data.labels)))
