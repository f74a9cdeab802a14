"""Two-phase semi-supervised training with ensemble pseudo-labels."""
import numpy as np

from ndalab.data import BlobSpec, gen_blobs
from ndalab.ssl import SslConfig, run_ssl

data = gen_blobs(BlobSpec(num_classes=4, dim=8, per_class=500, spread=1.0, sigma=1.0, seed=2024))

# %% 10 % of the training pool keeps its labels
cfg = SslConfig(labeled_fraction=0.1, nda_phase2=True, seed=0)
report, models = run_ssl(data, cfg)
print(f"labeled {report.labeled_count}, unlabeled {report.unlabeled_count}")

# %% phase 1: supervised cross-entropy plus weak/strong consistency
print("phase-1 member val acc:", np.round(report.phase1_member_val, 4))
print("phase-1 ensemble test acc:", round(report.phase1_ensemble_test, 4))

# %% pseudo-labels: only samples whose averaged confidence is above the threshold
pl = report.pseudo
print(f"admitted {len(pl)} samples, min confidence {pl.confidence.min():.4f}, "
      f"accuracy {report.pseudo_accuracy:.4f}")

# %% phase 2: members overwrite their predecessors only on strict val improvement
print("update epochs per member:", report.phase2.updates)
print("phase-2 ensemble test acc:", round(report.phase2_ensemble_test, 4))
