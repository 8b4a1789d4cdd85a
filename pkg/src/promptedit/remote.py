"""HTTP client for an external label-word scorer.

Wire format: POST a JSON body

    {"rendered_prompt": str, "label_words": [str], "want_features": bool}

and expect

    {"log_probs": [float], "features": [float] (optional)}

Transport failures and 5xx responses are retried up to the configured
count, then surface as ScorerUnavailable.  Malformed payloads raise
ProtocolError immediately (retrying cannot fix them).  Responses whose
log-probs already satisfy the normalization invariant pass through
unchanged (bit-exact); anything else is renormalized with log-softmax.
Missing features fall back to a deterministic text summary so training
remains possible against feature-less servers.
"""
from __future__ import annotations

import numpy as np
import requests

from .errors import ProtocolError, ScorerUnavailable
from .prompts import Exemplar, PromptState, TaskSpec, render
from .scoring import (
    DEFAULT_FEATURE_DIM,
    ScorerObservation,
    fallback_text_features,
    log_softmax,
)


class RemoteScorer:
    """Scores prompts by calling a remote endpoint; drop-in for the synthetic scorer."""

    def __init__(
        self,
        task: TaskSpec,
        pool: tuple[Exemplar, ...] | list[Exemplar],
        endpoint: str,
        timeout: float = 10.0,
        retries: int = 2,
        want_features: bool = True,
        feature_dim: int = DEFAULT_FEATURE_DIM,
        session: requests.Session | None = None,
    ):
        self.task = task
        self.pool = tuple(pool)
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.want_features = want_features
        self.feature_dim = feature_dim
        self.session = session if session is not None else requests.Session()

    def score_state(self, state: PromptState) -> ScorerObservation:
        rendered = render(state, self.task, self.pool)
        template = self.task.verbalizer_pool[state.query_verbalizer]
        words = [template.label_words[label] for label in self.task.label_space]
        return self.score_prompt(rendered, words)

    def score_prompt(self, rendered: str, label_words) -> ScorerObservation:
        payload = {
            "rendered_prompt": rendered,
            "label_words": list(label_words),
            "want_features": self.want_features,
        }
        attempts = self.retries + 1
        last_error: Exception | None = None
        for _ in range(attempts):
            try:
                response = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
            except requests.exceptions.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = ScorerUnavailable(f"server returned {response.status_code}")
                continue
            if response.status_code != 200:
                raise ProtocolError(f"unexpected status {response.status_code}: {response.text[:200]}")
            return self._parse(response, rendered, len(label_words))
        raise ScorerUnavailable(
            f"scorer at {self.endpoint} failed after {attempts} attempts: {last_error}"
        ) from last_error

    def _parse(self, response, rendered: str, num_labels: int) -> ScorerObservation:
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError(f"response body is not JSON: {response.text[:200]}") from exc
        if not isinstance(body, dict) or "log_probs" not in body:
            raise ProtocolError(f"response lacks 'log_probs': {body!r:.200}")
        raw = body["log_probs"]
        if not isinstance(raw, list) or len(raw) != num_labels:
            raise ProtocolError(f"log_probs must be a list of {num_labels} floats, got {raw!r:.200}")
        try:
            log_probs = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"log_probs not numeric: {raw!r:.200}") from exc
        if not np.all(np.isfinite(log_probs)):
            raise ProtocolError(f"log_probs contain non-finite values: {raw!r:.200}")
        # keep already-normalized vectors bit-exact; fix up the rest
        if abs(float(np.exp(log_probs).sum()) - 1.0) > 1e-6:
            log_probs = log_softmax(log_probs)

        features = body.get("features")
        if features is None:
            feats = fallback_text_features(rendered, num_labels, self.feature_dim)
        else:
            if not isinstance(features, list) or len(features) != self.feature_dim:
                raise ProtocolError(
                    f"features must be a list of {self.feature_dim} floats, got length "
                    f"{len(features) if isinstance(features, list) else 'non-list'}"
                )
            feats = np.asarray(features, dtype=np.float64)
            if not np.all(np.isfinite(feats)):
                raise ProtocolError("features contain non-finite values")
        return ScorerObservation(label_log_probs=log_probs, features=feats)
