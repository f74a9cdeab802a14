"""Build a tiny loss by hand, backpropagate, and compare with finite differences."""
import numpy as np

from ndalab import autodiff as ad
from ndalab.autodiff import Graph, Tensor, backward, gradient_check

# %% a two-parameter expression
w = Tensor(np.array([[0.5, -1.0], [2.0, 0.3]]), requires_grad=True, name="w")
x = Tensor(np.array([[1.0, 2.0], [-1.0, 0.5], [0.0, 1.0]]))
logits = ad.matmul(x, w)
loss = ad.scale(ad.mean(ad.log(ad.pick(ad.softmax_rows(logits), [0, 1, 1]))), -1.0)
print("loss", loss.item())

# %% the graph is recorded in topological order
graph = Graph(loss)
for node_id, op, shape in graph.records():
    print(f"  node {node_id:3d} {op or 'leaf':16s} {shape}")

# %% reverse mode gives every gradient in one pass
(grad,) = backward(loss, [w])
print("analytic grad\n", grad)

# %% central differences agree; relu kinks would be skipped
check = gradient_check(lambda: ad.scale(ad.mean(ad.log(ad.pick(ad.softmax_rows(ad.matmul(x, w)), [0, 1, 1]))), -1.0),
                       [w], step=1e-6)
print(f"max relative error {check.max_error:.2e} over {check.checked} coordinates")

# %% a relu sitting exactly on its kink is reported, not compared
v = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
kinked = gradient_check(lambda: ad.sum(ad.relu(v)), [v])
print("skipped coordinates:", kinked.skipped)
