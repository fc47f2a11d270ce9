"""scikit-learn style classifier facade over the training engine.

DRegClassifier trains a small dense network on tabular inputs with the
dual-weight layer enabled by default, holds out a slice of the training
data to pick the inference path, and then behaves like any fitted
single-path classifier.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset, epoch_batches
from .dreg import attach_dreg, select_inference_path
from .models import build_network
from .nn import softmax
from .optim import MomentumState, TrainConfig
from .tensor import Tensor
from .training import split_dataset, train_step


class DRegClassifier(BaseEstimator, ClassifierMixin):
    """Dense-network classifier trained with dual-weight regularization.

    Parameters mirror the engine's config keys: lam weights the
    distinctiveness term, position names which hidden layer is
    dual-weight (Block-R1 is the one nearest the output), and
    val_fraction is the held-out slice used for path selection.
    """

    def __init__(self, width=32, depth=1, residual=False, dreg=True, lam=0.1,
                 position="Block-R1", epsilon_init=0.01, eta=0.1, beta=0.9,
                 batch_size=32, epochs=50, devices=1, val_fraction=0.2,
                 random_state=0):
        self.width = width
        self.depth = depth
        self.residual = residual
        self.dreg = dreg
        self.lam = lam
        self.position = position
        self.epsilon_init = epsilon_init
        self.eta = eta
        self.beta = beta
        self.batch_size = batch_size
        self.epochs = epochs
        self.devices = devices
        self.val_fraction = val_fraction
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("classifier needs at least 2 classes")
        self.n_features_in_ = X.shape[1]

        net = build_network("mlp", self.width, self.depth, self.residual,
                            (self.n_features_in_,), len(self.classes_),
                            self.random_state)
        if self.dreg:
            net = attach_dreg(net, self.position, self.epsilon_init,
                              self.random_state + 1)
        dataset = Dataset(Tensor(X), encoded, len(self.classes_))
        train, val = split_dataset(dataset, self.val_fraction, self.random_state)
        tcfg = TrainConfig(eta=self.eta, beta=self.beta,
                           lam=self.lam if self.dreg else 0.0,
                           batch_size=self.batch_size, devices=self.devices,
                           epochs=self.epochs, seed=self.random_state)
        state = MomentumState(tcfg.beta)
        for epoch in range(tcfg.epochs):
            for batch in epoch_batches(train, tcfg.batch_size,
                                       self.random_state, epoch):
                train_step(net, batch, tcfg, state)
        if net.has_dual:
            net = select_inference_path(net, val.inputs, val.labels)
        self.net_ = net
        return self

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected "
                             f"{self.n_features_in_}")
        return self.net_.forward(Tensor(X), cache=False).data

    def predict_proba(self, X):
        return softmax(Tensor(self.decision_function(X))).data

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]
