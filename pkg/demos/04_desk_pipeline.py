"""The whole pipeline at a tiny scale: data, autoencoder pretraining, supervised
training, rank-constrained fine-tuning, lossless export and evaluation.

Takes a few minutes on one CPU core. Scale the sizes up for meaningful accuracy.
"""
import logging

import numpy as np

from deepfont import compress, evalsim, glyphgen, network, training

logging.basicConfig(level=logging.INFO, format="%(message)s")
n_classes = 4
cfg = glyphgen.DomainConfig.for_classes(n_classes)
syn = glyphgen.make_domain(cfg, glyphgen.SYN, 40, np.random.default_rng(1))
val = glyphgen.make_domain(cfg, glyphgen.SYN, 10, np.random.default_rng(2))
real = glyphgen.make_domain(cfg, glyphgen.PSEUDO_REAL, 40, np.random.default_rng(3), labeled=False)
test = glyphgen.make_domain(cfg, glyphgen.PSEUDO_REAL, 10, np.random.default_rng(4))

# 1. Autoencoder on synthetic and pseudo-real images together; its first two
#    layers become the frozen feature extractor of the classifier.
spec = network.build_cnn(network.DESK, n_classes, k_split=2)
encoder, scae_log = training.train_scae("FR", syn, real, training.TrainConfig(max_epochs=2), spec,
                                        {"R": test.load_images()})
print("relative reconstruction error on pseudo-real:",
      [round(r.val_metric, 3) for r in scae_log.records])

# 2. Supervised training of the remaining layers on labeled synthetic data.
model = network.import_cu(network.init_model(spec, np.random.default_rng(5)), encoder)
model, _ = training.train_supervised(model, syn, val, training.TrainConfig(max_epochs=8))

# 3. Fine-tune with fc5 projected to rank 16 after every step, then store it
#    as three factors without changing the function.
ranked, _ = training.train_rank_constrained(model, "fc5", 16, syn, val,
                                            training.TrainConfig(max_epochs=1, lr0=0.001))
small, layer = compress.factorize_model(ranked, "fc5", 16, "lossless")
print("fc5 stored as", layer.n_params, "numbers instead of", 256 * 256)

preds = evalsim.predict_manifest(small, test)
print("pseudo-real top-1 error", evalsim.topk_error(preds, test.labels, 1))
index = evalsim.build_similarity(small, val, n_per_class=5)
print("fonts closest to class 0:", evalsim.most_similar(index, 0, 3))
