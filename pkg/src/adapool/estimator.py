"""scikit-learn compatible classifier around the numpy network."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .layers import softmax
from .network import preset
from .trainer import TrainingConfig, predict_logits, train


class AdaptivePoolingClassifier(ClassifierMixin, BaseEstimator):
    """Convolutional classifier with mean, max or adaptive pooling layers.

    Parameters
    ----------
    preset : str
        Architecture name, see ``adapool.network.preset``.
    pooling : {"mean", "max", "adaptive-random", "adaptive-mean-init"}
        Pooling mode for every pooling layer.
    learning_rate, lr_decay, decay_epoch, batch_size, epochs, dropout, pool_lr_scale
        Passed to ``TrainingConfig``.
    image_shape : tuple of int, optional
        ``(H, W)`` used to reshape 2-D ``X``. 3-D ``X`` is taken as
        ``(n_samples, H, W)``.
    random_state : int
        Seed for initialization, shuffling and dropout.

    Attributes
    ----------
    classes_ : ndarray
    network_ : adapool.network.Network
    checkpoint_ : adapool.checkpoint.Checkpoint
    history_ : list of MetricRow
    """

    def __init__(self, preset="svhn-small", pooling="adaptive-random", learning_rate=0.01,
                 lr_decay=0.1, decay_epoch=10, batch_size=32, epochs=20, dropout=0.5,
                 pool_lr_scale=1.0, image_shape=None, random_state=0):
        self.preset = preset
        self.pooling = pooling
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.decay_epoch = decay_epoch
        self.batch_size = batch_size
        self.epochs = epochs
        self.dropout = dropout
        self.pool_lr_scale = pool_lr_scale
        self.image_shape = image_shape
        self.random_state = random_state

    def _images(self, X):
        if X.ndim == 3:
            return X
        if X.ndim == 2:
            if self.image_shape is None:
                side = int(round(np.sqrt(X.shape[1])))
                if side * side != X.shape[1]:
                    raise ValueError("2-D X needs image_shape unless rows are square images")
                shape = (side, side)
            else:
                shape = tuple(self.image_shape)
            return X.reshape(len(X), *shape)
        raise ValueError(f"X must be 2-D or 3-D, got {X.ndim}-D")

    def _config(self):
        return TrainingConfig(
            learning_rate=self.learning_rate, lr_decay=self.lr_decay,
            decay_epoch=self.decay_epoch, batch_size=self.batch_size, epochs=self.epochs,
            dropout=self.dropout, seed=self.random_state, pooling=self.pooling,
            pool_lr_scale=self.pool_lr_scale)

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        images = self._images(X)
        spec = preset(self.preset, n_classes=len(self.classes_), input_shape=(1, *images.shape[1:]))
        result = train(spec, self._config(), (images, encoded))
        self.network_ = result.network
        self.checkpoint_ = result.checkpoint
        self.history_ = result.metrics
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        return predict_logits(self.network_, self._images(X)[:, None])

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    @property
    def pooling_matrices_(self):
        check_is_fitted(self, "network_")
        return self.network_.pooling_matrices()
