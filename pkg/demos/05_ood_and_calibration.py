"""Confidence-based OOD scores and calibration of a trained model."""
from ndalab.data import BlobSpec, gen_blobs, gen_ood_set
from ndalab.losses import NdaConfig
from ndalab.models import build_model
from ndalab.ood import ece, ood_report, reliability_table, score_predictions, ensemble_probs
from ndalab.training import TrainConfig, split_dataset, train

spec = BlobSpec(num_classes=4, dim=8, per_class=500, spread=1.0, sigma=1.0, seed=2024)
train_set, val, test = split_dataset(gen_blobs(spec), (0.16, 0.04, 0.8), seed=spec.seed)
model = build_model(spec.dim, [32], 16, spec.num_classes, seed=1)
train(model, (train_set, val, test), TrainConfig(epochs=30, learning_rate=0.02, nda=NdaConfig(beta=0.3, margin=10.0)))

# %% in-distribution test set vs the same blobs shifted by 10 sigma
for shift in (0.0, 10.0, 20.0):
    metrics = ood_report(model, test, gen_ood_set(spec, shift * spec.sigma))
    print(f"shift {shift:4.1f}: " + ", ".join(f"{k} {v:.3f}" for k, v in metrics.as_dict().items()))

# %% a ReLU network extrapolates linearly, so far-away inputs can look *more*
# confident than the training data; maximum class probability alone does not
# flag them

# %% calibration on the test split
preds = score_predictions(ensemble_probs(model, test.features), test.labels)
print(f"ece (15 bins): {ece(preds):.4f}")
for b, n, acc, conf in reliability_table(preds, 10):
    if n:
        print(f"  bin {b}: n={n:4d} acc={acc:.3f} conf={conf:.3f}")
