"""Proposer backends: scripted fixtures, a deterministic heuristic stand-in for
a language model, and a remote OpenAI-compatible chat-completions client with
record/replay support."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import httpx
import numpy as np

from .reasoning import (
    ADVISORY_RANKING,
    ProposerRequest,
    RawProposal,
    format_proposal,
)


class ProposerError(RuntimeError):
    pass


class ProposerTransportError(ProposerError):
    """Network failure, timeout, or non-2xx response from the remote backend."""


class ProposerProtocolError(ProposerError):
    """The remote backend answered but not with a usable chat completion."""


class ScriptedProposer:
    """Replays a fixed sequence of response texts; repeats the last one by default."""

    def __init__(self, texts: list[str], repeat_last: bool = True):
        if not texts:
            raise ValueError("need at least one scripted response")
        self.texts = list(texts)
        self.repeat_last = repeat_last
        self.calls = 0

    def propose(self, request: ProposerRequest) -> RawProposal:
        idx = self.calls
        self.calls += 1
        if idx >= len(self.texts):
            if not self.repeat_last:
                raise ProposerError("script exhausted")
            idx = len(self.texts) - 1
        return RawProposal(self.texts[idx])


class HeuristicProposer:
    """Deterministic language-model stand-in.

    Ranks segments by semantic relevance (sightings of the target label, then
    of associated labels, then free depth). With blend > 0 it imitates the
    evaluator: its internal rank estimate moves toward the last advisory
    ranking by an exponential blend, which reproduces the feedback-driven
    alignment a real model shows. mandatory_flubs > 0 makes the first calls
    violate the mandatory criteria (prose, then a truncated list) the way an
    untrained model does.
    """

    PROSE_FLUB = "I think we should head toward the most promising area first."

    def __init__(
        self,
        target_label: str,
        blend: float = 0.0,
        mandatory_flubs: int = 0,
        label_affinity: dict[str, list[str]] | None = None,
    ):
        if not 0.0 <= blend <= 1.0:
            raise ValueError("blend must lie in [0, 1]")
        self.target_label = target_label
        self.blend = blend
        self.flubs_left = int(mandatory_flubs)
        self.affinity = set((label_affinity or {}).get(target_label, []))
        self._state: np.ndarray | None = None
        self._observation_sig: tuple | None = None

    def _relevance_order(self, request: ProposerRequest) -> list[int]:
        depths = [seg.free_depth_m for seg in request.segments]
        max_depth = max(depths) if max(depths) > 0 else 1.0

        def score(seg) -> float:
            target_hits = seg.labels.get(self.target_label, 0)
            affinity_hits = sum(c for lab, c in seg.labels.items() if lab in self.affinity)
            return 3.0 * target_hits + 1.0 * affinity_hits + seg.free_depth_m / max_depth

        return sorted(
            (seg.index for seg in request.segments),
            key=lambda i: (-score(request.segments[i]), i),
        )

    def _last_advisory_ranks(self, request: ProposerRequest) -> np.ndarray | None:
        for record in reversed(request.feedback):
            if record.kind == ADVISORY_RANKING and record.ranked is not None:
                ranks = np.zeros(len(record.ranked.order))
                for r, seg in enumerate(record.ranked.order):
                    ranks[seg] = r
                return ranks
        return None

    def propose(self, request: ProposerRequest) -> RawProposal:
        if self.flubs_left > 0:
            self.flubs_left -= 1
            if self.flubs_left % 2 == 1:
                return RawProposal(self.PROSE_FLUB)
            upto = max(1, request.n // 2)
            return RawProposal(format_proposal(range(upto)))

        own = self._relevance_order(request)
        own_ranks = np.zeros(request.n)
        for r, seg in enumerate(own):
            own_ranks[seg] = r
        # a new observation resets the learned estimate; the blend only
        # accumulates while the scene stays the same
        sig = tuple(
            (seg.index, tuple(sorted(seg.labels.items())), seg.free_depth_m)
            for seg in request.segments
        )
        if self._state is None or sig != self._observation_sig:
            self._state = own_ranks
            self._observation_sig = sig
        advisory = self._last_advisory_ranks(request)
        if advisory is not None and self.blend > 0.0:
            self._state = (1.0 - self.blend) * self._state + self.blend * advisory
        order = np.argsort(self._state, kind="stable")
        return RawProposal(format_proposal(int(i) for i in order))


class RemoteProposer:
    """Talks to an OpenAI-compatible /chat/completions endpoint.

    Single attempt per call (retrying is the reasoning loop's job). The API
    key comes from an environment variable, never from config files. When
    record_path is set, every request/response pair is appended to a JSON-lines
    fixture that ReplayProposer can play back offline.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = "gpt-4o-mini",
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = 30.0,
        record_path: str | Path | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        key = os.environ.get(api_key_env, "")
        if not key:
            raise ProposerError(
                f"remote proposer needs an API key in ${api_key_env}; export it or "
                "switch proposer_backend to 'heuristic'"
            )
        self._headers = {"Authorization": f"Bearer {key}"}
        self.timeout_s = timeout_s
        self.record_path = Path(record_path) if record_path else None
        self._transport = transport

    def _messages(self, request: ProposerRequest) -> list[dict]:
        lines = [f"Task: {request.task_description}"]
        lines.append("Visible panorama segments (index: labels, free depth):")
        for seg in request.segments:
            labels = ", ".join(f"{k} x{v}" for k, v in sorted(seg.labels.items())) or "nothing"
            lines.append(f"  D{seg.index}: {labels}; free depth {seg.free_depth_m:.1f} m")
        if request.feedback:
            lines.append("Evaluator feedback so far:")
            for record in request.feedback:
                lines.append(f"  [{record.kind}] {record.message}")
        system = (
            "You rank movement directions for a search robot. Reply with exactly "
            f"one list of all {request.n} segment ids, best first, formatted like "
            + format_proposal(range(request.n))
        )
        return [
            {"role": "system", "content": system},
            {"role": "user", "content": "\n".join(lines)},
        ]

    def propose(self, request: ProposerRequest) -> RawProposal:
        payload = {"model": self.model, "messages": self._messages(request)}
        try:
            with httpx.Client(transport=self._transport, timeout=self.timeout_s) as client:
                response = client.post(
                    f"{self.endpoint}/chat/completions", json=payload, headers=self._headers
                )
        except httpx.HTTPError as exc:
            raise ProposerTransportError(f"chat completion request failed: {exc}") from exc
        if response.status_code // 100 != 2:
            raise ProposerTransportError(
                f"chat completion returned HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise ProposerProtocolError(f"malformed chat completion response: {exc}") from exc
        if self.record_path is not None:
            entry = {
                "request": payload,
                "response": body,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            }
            with open(self.record_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return RawProposal(text)


class ReplayProposer:
    """Plays back a JSON-lines fixture recorded by RemoteProposer, in order."""

    def __init__(self, fixture_path: str | Path):
        self.entries = []
        with open(fixture_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self.entries.append(json.loads(line))
        if not self.entries:
            raise ProposerError(f"replay fixture {fixture_path} is empty")
        self.calls = 0

    def propose(self, request: ProposerRequest) -> RawProposal:
        if self.calls >= len(self.entries):
            raise ProposerError("replay fixture exhausted")
        entry = self.entries[self.calls]
        self.calls += 1
        try:
            text = entry["response"]["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProposerProtocolError(f"malformed fixture entry: {exc}") from exc
        return RawProposal(text)
