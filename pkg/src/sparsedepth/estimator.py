"""scikit-learn style wrapper around model construction, training and inference."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datagen import Scene
from .distill import DistillConfig
from .losses import KDWeights
from .metrics import MetricConfig, whdr
from .model import ModelConfig, build_model, predict, strip_heads
from .train import LOSS_SUITES, DepthDataset, TrainConfig, train
from .validation import check_depth_maps, check_images, check_pair_lists


class RelativeDepthEstimator(BaseEstimator):
    """Fit a compact depth network on images; predict closeness maps.

    ``X`` is an ``(N, H, W, 3)`` float array. ``y`` depends on ``loss_suite``:

    * ``ranking`` / ``improved_ranking``: one sequence of
      :class:`~sparsedepth.pairs.OrdinalPair` per image;
    * ``si_composite``: ``(N, H, W)`` positive depth maps;
    * ``distill``: pair lists, or ``None`` for teacher-only training. A
      ``teacher`` keyed by ``image_ids`` must be passed to :meth:`fit`.

    After fitting, ``model_`` is the head-stripped network and
    ``train_log_`` the training log.
    """

    def __init__(
        self,
        encoder_kind="toy",
        encoder_widths=(8, 16, 32, 64, 128),
        decoder_kind="fbnet_like",
        x112_variant=True,
        head_positions=(2, 3),
        loss_suite="ranking",
        epochs=10,
        batch_size=8,
        optimizer="adam",
        learning_rate=1e-3,
        lr_step=4,
        kd_weights=(1.0, 1.0, 1.0),
        rebalance=False,
        val_fraction=0.0,
        random_state=0,
    ):
        self.encoder_kind = encoder_kind
        self.encoder_widths = encoder_widths
        self.decoder_kind = decoder_kind
        self.x112_variant = x112_variant
        self.head_positions = head_positions
        self.loss_suite = loss_suite
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.lr_step = lr_step
        self.kd_weights = kd_weights
        self.rebalance = rebalance
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _model_config(self, input_size):
        cfg = ModelConfig(
            encoder_kind=self.encoder_kind,
            encoder_widths=list(self.encoder_widths),
            decoder_kind=self.decoder_kind,
            x112_variant=self.x112_variant,
            head_positions=list(self.head_positions),
            input_size=input_size,
        )
        cfg.validate()
        return cfg

    def _train_config(self, use_rank):
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            lr=self.learning_rate,
            lr_step=self.lr_step,
            seed=seed,
            loss_suite=self.loss_suite,
            rebalance=self.rebalance,
            distill=DistillConfig(KDWeights(*self.kd_weights), use_ground_truth_rank=use_rank),
            val_fraction=self.val_fraction,
        )
        cfg.validate()
        return cfg

    def fit(self, X, y=None, teacher=None, image_ids=None):
        if self.loss_suite not in LOSS_SUITES:
            raise ValueError(f"loss_suite must be one of {LOSS_SUITES}")
        images = check_images(X)
        n, shape = len(images), images.shape[1:3]
        ids = list(image_ids) if image_ids is not None else [f"img_{i:05d}" for i in range(n)]
        if len(ids) != n or len(set(ids)) != n:
            raise ValueError("image_ids must be unique and one per image")

        depth = pairs = None
        if self.loss_suite == "si_composite":
            depth = check_depth_maps(y, n, shape)
        elif self.loss_suite != "distill" or y is not None:
            pairs = check_pair_lists(y, n, shape)
        if self.loss_suite == "distill" and teacher is None:
            raise ValueError("loss_suite='distill' needs a teacher")

        model_cfg = self._model_config(shape)
        train_cfg = self._train_config(use_rank=pairs is not None)
        scenes = [
            Scene(image=images[i], depth=None if depth is None else depth[i], layer_map=None, id=ids[i])
            for i in range(n)
        ]
        model = build_model(model_cfg, seed=train_cfg.seed)
        model, log = train(model, DepthDataset(scenes, pairs), train_cfg,
                           teacher=teacher if self.loss_suite == "distill" else None)
        self.model_ = strip_heads(model).eval()
        self.train_log_ = log
        self.input_size_ = tuple(shape)
        return self

    def predict(self, X):
        """Closeness maps ``(N, H, W)``; larger means nearer."""
        check_is_fitted(self, "model_")
        return predict(self.model_, check_images(X, self.input_size_))

    def score(self, X, y):
        """``1 - WHDR`` averaged over images (higher is better)."""
        scores = self.predict(X)
        tables = check_pair_lists(y, len(scores), self.input_size_)
        vals = [whdr(z, t, MetricConfig()) for z, t in zip(scores, tables) if len(t)]
        if not vals:
            raise ValueError("no pairs to score against")
        return 1.0 - float(np.mean(vals))
