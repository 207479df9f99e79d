"""Test-time inference over several squeezed views, top-k error, and font
similarity from penultimate-layer features.
"""
from dataclasses import dataclass

import numpy as np

from deepfont import augment
from deepfont.network import EVAL, FC, RELU, forward, logits_index, network_input
from deepfont.numerics import softmax

N_RATIOS = 3
N_PATCHES = 5
TEST_RATIO_RANGE = (1.5, 3.5)
MULTI, SINGLE = "multi", "single"


@dataclass
class Prediction:
    class_probs: np.ndarray
    n_views: int

    def top_k(self, k):
        """Class ids by decreasing probability; ties go to the lower id."""
        order = np.lexsort((np.arange(len(self.class_probs)), -self.class_probs))
        return order[:k]


def view_patches(img, rng, views=MULTI):
    """Test patches of one image, as network input.

    multi: three squeeze ratios drawn from U(1.5, 3.5), five random crops each.
    single: one random crop of the stored image.
    """
    if views == SINGLE:
        patches = [augment.sample_patch(img, rng).pixels]
    elif views == MULTI:
        patches = []
        for r in rng.uniform(*TEST_RATIO_RANGE, size=N_RATIOS):
            sq = augment.squeeze_to_ratio(img, r)
            patches += [augment.sample_patch(sq, rng).pixels for _ in range(N_PATCHES)]
    else:
        raise ValueError(f"views must be {MULTI!r} or {SINGLE!r}, got {views!r}")
    return np.stack(patches)


def view_logits(model, img, rng, views=MULTI):
    x = network_input(view_patches(img, rng, views), model.dtype)
    return forward(model, x, EVAL, stop=logits_index(model.spec)).acts[-1]


def predict_multiview(model, img, rng, views=MULTI):
    """Average of the softmax vectors over the test views of img."""
    logits = view_logits(model, img, rng, views).astype(np.float64)
    probs = softmax(logits)
    return Prediction(class_probs=probs.mean(axis=0), n_views=len(probs))


def image_rng(seed, i):
    """Per-image generator, so results do not depend on evaluation order."""
    return np.random.default_rng([seed, i])


def predict_manifest(model, manifest, seed=0, views=MULTI):
    return [predict_multiview(model, manifest.image(i), image_rng(seed, i), views)
            for i in range(len(manifest))]


def topk_error(predictions, labels, k):
    """Fraction of samples whose label is not among the top k classes."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("no samples")
    if isinstance(predictions, np.ndarray):
        predictions = [Prediction(p, 1) for p in predictions]
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    miss = [lab not in p.top_k(k) for p, lab in zip(predictions, labels)]
    return float(np.mean(miss))


def feature_index(spec):
    """Position in Trace.acts of the penultimate FC layer's post-ReLU output."""
    fcs = [i for i in spec.weighted if spec.layers[i].kind == FC]
    if len(fcs) < 2:
        raise ValueError("network has no penultimate fully connected layer")
    i = fcs[-2]
    if i + 1 < len(spec.layers) and spec.layers[i + 1].kind == RELU:
        i += 1
    return i + 1


def extract_features(model, img, rng, views=MULTI):
    """Penultimate FC activations (post-ReLU, no dropout) averaged over the test views."""
    x = network_input(view_patches(img, rng, views), model.dtype)
    feats = forward(model, x, EVAL, stop=feature_index(model.spec)).acts[-1]
    return feats.astype(np.float64).mean(axis=0)


@dataclass
class SimilarityIndex:
    classes: np.ndarray          # class ids, ascending
    representatives: np.ndarray  # one mean feature vector per class

    def vector(self, cid):
        pos = np.searchsorted(self.classes, cid)
        if pos >= len(self.classes) or self.classes[pos] != cid:
            raise KeyError(f"class {cid} not in the index")
        return self.representatives[pos]

    def distance(self, a, b):
        return float(np.linalg.norm(self.vector(a) - self.vector(b)))

    def distance_matrix(self):
        r = self.representatives
        diff = r[:, None, :] - r[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_similarity(model, manifest, n_per_class=20, seed=0):
    """Representative vector per class: mean feature of its first n_per_class images."""
    labels = manifest.labels
    if (labels < 0).any():
        raise ValueError("similarity needs a labeled manifest")
    classes = np.unique(labels)
    reps = []
    for cid in classes:
        idx = np.flatnonzero(labels == cid)[:n_per_class]
        feats = [extract_features(model, manifest.image(i), image_rng(seed, i)) for i in idx]
        reps.append(np.mean(feats, axis=0))
    return SimilarityIndex(classes=classes, representatives=np.array(reps))


def most_similar(index, query_class, top_n=5):
    """[(class id, distance)] in ascending distance, excluding the query itself."""
    q = index.vector(query_class)
    dist = np.linalg.norm(index.representatives - q, axis=1)
    order = np.lexsort((index.classes, dist))
    out = [(int(index.classes[i]), float(dist[i])) for i in order if index.classes[i] != query_class]
    return out[:top_n]
