"""Noise-estimate providers behind a single query interface.

The auditing pipeline only ever asks one question: "what noise does the
model believe sits in this image at level t?".  Built-in analytic
predictors answer it in closed form, which makes the whole attack
verifiable without a trained denoiser; :class:`ExternalPredictor`
forwards the question to a real model over the wire protocol.

Step index 0 denotes the clean level.  There is no noise to estimate
there, so predictors must return a well-defined value: the analytic
forms vanish at t = 0 and the memorizing predictor returns zeros.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass

import numpy as np

from . import protocol
from .diffusion import NoiseSchedule, as_image


class NoisePredictor:
    """Interface for eps_hat(x_t, t) queries.

    Built-in predictors are pure functions and safe to call from any
    number of threads.  ``predict_batch`` exists so transports that
    benefit from batching can override it; the default loops.
    """

    def predict(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, images: list[np.ndarray], t: int,
                      schedule: NoiseSchedule) -> list[np.ndarray]:
        return [self.predict(x, t, schedule) for x in images]


@dataclass(frozen=True)
class ConstantPredictor(NoisePredictor):
    """Always answers the same value; the degenerate no-signal model."""

    value: float = 0.0

    def predict(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        return np.full_like(np.asarray(x_t, dtype=np.float64), self.value)


class GaussianAnalyticPredictor(NoisePredictor):
    """Exact posterior-mean noise for data drawn N(mean_image, data_std^2 I).

    For x_t = sqrt(abar) x0 + sqrt(1-abar) eps the conditional mean of
    eps given x_t is

        sqrt(1-abar) * (x_t - sqrt(abar) * mean) / (abar * std^2 + 1 - abar)

    which is affine in x_t and vanishes at the clean level.
    """

    def __init__(self, mean_image: np.ndarray, data_std: float):
        if data_std <= 0:
            raise ValueError(f"data_std must be positive, got {data_std}")
        self.mean_image = as_image(mean_image)
        self.data_std = float(data_std)

    def predict(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        abar = schedule.alpha_bar(t)
        denom = abar * self.data_std ** 2 + 1.0 - abar
        return np.sqrt(1.0 - abar) * (x_t - np.sqrt(abar) * self.mean_image) / denom


class MemorizingPredictor(NoisePredictor):
    """Desk-scale surrogate for an overfit denoiser.

    The implied clean image x_t / sqrt(abar_t) is matched against a bank
    of memorized images; the predicted noise is whatever residual maps
    the softmin-weighted blend of the bank back onto x_t.  Bank members
    therefore reconstruct almost perfectly while unseen images are
    pulled toward the bank, which is precisely the asymmetry a
    membership audit needs.  ``temperature`` sets the softmin width in
    units of mean squared pixel distance; small values approach the
    hard nearest neighbor.
    """

    def __init__(self, bank: list[np.ndarray] | np.ndarray, temperature: float):
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        images = [as_image(b) for b in bank]
        if not images:
            raise ValueError("memorizing bank must not be empty")
        shape = images[0].shape
        for b in images[1:]:
            if b.shape != shape:
                raise ValueError("bank images must share one shape")
        self.image_shape = shape
        self.temperature = float(temperature)
        self._bank = np.stack([b.ravel() for b in images])          # (n, D)
        self._bank_sq = np.einsum("nd,nd->n", self._bank, self._bank)

    def blend(self, implied_x0: np.ndarray) -> np.ndarray:
        """Softmin-weighted combination of bank images by squared distance."""
        z = np.asarray(implied_x0, dtype=np.float64).ravel()
        # Mean squared distance keeps the temperature scale resolution-free.
        d2 = (self._bank_sq - 2.0 * self._bank @ z + z @ z) / z.size
        logits = -(d2 - d2.min()) / self.temperature
        weights = np.exp(logits)
        weights /= weights.sum()
        return (weights @ self._bank).reshape(self.image_shape)

    def predict(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape != self.image_shape:
            raise ValueError(
                f"input shape {x_t.shape} does not match bank shape {self.image_shape}")
        if t == 0:
            return np.zeros_like(x_t)
        signal = schedule.signal_scale(t)
        x_star = self.blend(x_t / signal)
        return (x_t - signal * x_star) / schedule.noise_scale(t)


class ExternalPredictor(NoisePredictor):
    """Client for a remote predictor speaking the framed tensor protocol.

    One request may be in flight per connection; this client owns a
    single connection and serializes calls with a lock.  Concurrent
    workers should each hold their own instance (see ``clone``).
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.host = host
        self.port = int(port)
        self.timeout = float(timeout)
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    @classmethod
    def from_endpoint(cls, endpoint: str, timeout: float = 30.0) -> "ExternalPredictor":
        host, sep, port = endpoint.rpartition(":")
        if not sep or not host:
            raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
        return cls(host, int(port), timeout)

    def clone(self) -> "ExternalPredictor":
        return ExternalPredictor(self.host, self.port, self.timeout)

    def _connection(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(
                    (self.host, self.port), timeout=self.timeout)
            except OSError as exc:
                raise protocol.TransportError(
                    f"cannot connect to {self.host}:{self.port}: {exc}") from exc
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self) -> "ExternalPredictor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def roundtrip(self, t: int, batch: np.ndarray) -> np.ndarray:
        """Send one (B, C, H, W) batch and return the predicted noise batch."""
        frame = protocol.encode_request(t, batch)
        with self._lock:
            sock = self._connection()
            try:
                protocol.write_frame(sock, frame)
                body = protocol.read_frame(sock)
            except protocol.ProtocolError:
                # The stream may be desynchronized; force a reconnect.
                self.close()
                raise
        return protocol.decode_response(body, batch.shape)

    def predict(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        return self.predict_batch([x_t], t, schedule)[0]

    def predict_batch(self, images: list[np.ndarray], t: int,
                      schedule: NoiseSchedule) -> list[np.ndarray]:
        if not images:
            return []
        shape = images[0].shape
        for img in images[1:]:
            if img.shape != shape:
                raise ValueError("batch images must share one shape")
        # Internal layout is (H, W, C); the wire is channel-major.
        batch = np.stack([np.transpose(as_image(img), (2, 0, 1)) for img in images])
        out = self.roundtrip(t, batch)
        return [np.transpose(out[i], (1, 2, 0)) for i in range(out.shape[0])]
