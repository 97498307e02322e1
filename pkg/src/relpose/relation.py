"""Joint relation extraction: pairwise map similarity drives heatmap refinement.

Each joint's score map is flattened to a vector; row-softmaxed dot products
between the vectors give a [B, K, K] relational weight matrix whose row i
weighs every joint's relevance to joint i.  Refinement mixes the maps with
two bias-free 1x1 projections gated by that matrix, adds the input back,
and batch-normalizes, so the trainable relation path costs exactly 2*K*K
parameters.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor
from .layers import BatchNorm2d


def relation_matrix(pseudo: Tensor) -> Tensor:
    """Row-softmaxed joint-to-joint correlation of [B, K, H, W] score maps.

    Row i of the result weighs every joint's relevance to joint i.  The
    correlation and softmax both use permutation-stable summation, so
    relabeling joints permutes the output exactly.
    """
    if pseudo.data.ndim != 4:
        raise DimensionError(f"expected [B, K, H, W] maps, got {pseudo.shape}")
    b, k, h, w = pseudo.shape
    flat = ad.reshape(pseudo, (b, k, h * w))
    return ad.softmax_rows(ad.pairwise_dot(flat))


class JointRelationExtractor:
    """Relation-refined heatmaps with a residual path and output BN.

    With `use_relations=False` the relation branch is skipped entirely and
    refinement degenerates to batch normalization of the input (the
    ablation baseline).
    """

    def __init__(self, rng: np.random.Generator, joints: int, use_relations: bool = True):
        std = 1.0 / np.sqrt(joints)
        self.mix = Parameter(rng.normal(0.0, std, size=(joints, joints)), "jre.mix")
        self.out = Parameter(rng.normal(0.0, std, size=(joints, joints)), "jre.out")
        self.bn = BatchNorm2d("jre.bn", joints)
        self.joints = joints
        self.use_relations = use_relations

    def refine(self, pseudo: Tensor, training: bool) -> Tensor:
        """[B, K, h, w] pseudo maps -> BN(relation excitation + residual)."""
        b, k, h, w = pseudo.shape
        if k != self.joints:
            raise DimensionError(f"expected {self.joints} joint maps, got {k}")
        if not self.use_relations:
            return self.bn(pseudo, training)
        flat = ad.reshape(pseudo, (b, k, h * w))
        weights = ad.softmax_rows(ad.pairwise_dot(flat))
        mixed = ad.matmul(self.mix.tensor, flat)           # [B, K, h*w]
        activated = ad.matmul(weights, mixed)
        excited = ad.matmul(self.out.tensor, activated)
        z = ad.add(ad.reshape(excited, (b, k, h, w)), pseudo)
        return self.bn(z, training)

    def parameter_count(self) -> int:
        """Trainable relation-path parameters, excluding BN (= 2 * K * K)."""
        return self.mix.tensor.numel() + self.out.tensor.numel()

    def relation_parameters(self) -> list[Parameter]:
        return [self.mix, self.out]

    def parameters(self) -> list[Parameter]:
        return self.relation_parameters() + self.bn.parameters()

    def trainable_parameters(self) -> list[Parameter]:
        if self.use_relations:
            return self.parameters()
        return self.bn.parameters()


def gradient_check_cases(rng: np.random.Generator) -> list:
    """Composite finite-difference cases for the refinement path."""
    u = rng.uniform

    def build(ts):
        pseudo, mix, out, gamma, beta = ts
        b, k, h, w = pseudo.shape
        flat = ad.reshape(pseudo, (b, k, h * w))
        weights = ad.softmax_rows(ad.pairwise_dot(flat))
        excited = ad.matmul(out, ad.matmul(weights, ad.matmul(mix, flat)))
        z = ad.add(ad.reshape(excited, (b, k, h, w)), pseudo)
        z = ad.batchnorm2d(z, gamma, beta, training=True)
        return ad.mse(z, Tensor(np.zeros(z.shape), dtype=np.float64))

    return [("jre.refine",
             build,
             [u(-1, 1, (2, 3, 2, 2)), u(-0.5, 0.5, (3, 3)), u(-0.5, 0.5, (3, 3)),
              u(0.5, 1.5, (3,)), u(-0.5, 0.5, (3,))])]
