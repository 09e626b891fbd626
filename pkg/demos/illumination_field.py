"""
The illumination field as a factorised grid
===========================================

A dense 32^3 grid of 24-channel features would hold ~786k numbers. The
vector-matrix factorisation stores three lines and three planes per
component instead, and we can check that it still behaves like a grid.
"""
import numpy as np

from illumsplat.field import FACTOR_NAMES, eval_field, init_field, shrink_resample
from illumsplat.oracles import dense_field_tensor, trilinear_oracle

rng = np.random.default_rng(0)
field = init_field((-1, -1, -1), (1, 1, 1), resolution=32, r_components=16, feature_dim=24,
                   rng=rng, amplitude=1.0, dtype=np.float64)

n_params = sum(getattr(field, name).size for name in FACTOR_NAMES)
print("factor parameters:", n_params, "+ basis", field.basis.size)
print("dense equivalent:", 32 ** 3 * 24)

# querying the factors should equal trilinear lookup in the materialised tensor
pts = rng.uniform(-1, 1, (1000, 3))
fast = eval_field(pts, field)
dense = trilinear_oracle(dense_field_tensor(field), field.bbox_min, field.bbox_max, pts)
print("max |factorised - dense|:", np.abs(fast - dense).max())

# shrinking keeps the voxel count, so the same memory covers a tighter box;
# values at the new grid nodes are copied exactly from the old field
small = shrink_resample(field, (-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
ax = np.linspace(-0.5, 0.5, 32)
nodes = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
print("error at the new nodes:", np.abs(eval_field(nodes, small) - eval_field(nodes, field)).max())

# between nodes the old field is re-interpolated at the new spacing, so a
# random (very rough) field drifts a little; trained fields are much smoother
inner = rng.uniform(-0.5, 0.5, (1000, 3))
drift = np.abs(eval_field(inner, small) - eval_field(inner, field))
print("between nodes: mean %.3f, max %.3f" % (drift.mean(), drift.max()))
print("voxel edge before/after: %.4f / %.4f" % (2 / 31, 1 / 31))
