"""Live harvesting of per-choice answer distributions from chat-completion
endpoints.  Each question is asked ``passes`` times and the parsed letters are
turned into frequencies.  The transport is injectable so nothing here needs the
network under test."""
import difflib
import json
import logging
import os
import random
import re
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import QueryRecord, freqs_from_passes

log = logging.getLogger(__name__)

RETRY_STATUSES = frozenset({408, 409, 425, 429, 500, 502, 503, 504})
BACKOFF_BASE = 0.5
BACKOFF_CAP = 20.0
FUZZY_CUTOFF = 0.6

_PREFIX = re.compile(r"^\s*(?:the\s+)?(?:final\s+)?(?:correct\s+)?(?:answer|option|choice)\s*(?:is)?\s*[:\-]?\s*", re.I)
_WRAP = "*_`\"'([{ \t\n"


class BackendError(RuntimeError):
    """The endpoint kept failing after all retries."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ParseError(ValueError):
    """No pass produced a recognisable choice."""

    def __init__(self, message, transcripts):
        super().__init__(message)
        self.transcripts = transcripts


@dataclass
class BackendSpec:
    name: str
    base_url: str
    model_id: str
    auth_env: str = None
    passes: int = 10
    temperature: float = 0.7
    timeout: float = 30.0
    max_retries: int = 3

    def __post_init__(self):
        if int(self.passes) < 1:
            raise ValueError(f"passes must be >= 1, got {self.passes}")
        if not self.timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if int(self.max_retries) < 0:
            raise ValueError("max_retries must be >= 0")
        self.passes = int(self.passes)
        self.max_retries = int(self.max_retries)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class HarvestResult:
    probs: np.ndarray
    transcripts: list
    parsed: list = field(default_factory=list)  # choice index or None per pass


def urllib_transport(url, payload, headers, timeout):
    """POST JSON and return ``(status, decoded body or None)``."""
    req = urllib.request.Request(url, data=json.dumps(payload).encode(), headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as exc:
        return exc.code, None


def format_prompt(prompt, choices):
    lines = [prompt.rstrip(), ""]
    lines += [f"{chr(65 + i)}. {c}" for i, c in enumerate(choices)]
    lines += ["", "Answer with the letter of the correct option."]
    return "\n".join(lines)


def parse_choice(reply, choices):
    """Map a free-text reply to a choice index, or None to abstain.

    A leading letter wins; otherwise the reply is fuzzily matched against the
    choice texts.
    """
    if reply is None:
        return None
    text = _PREFIX.sub("", reply.strip()).lstrip(_WRAP)
    k = len(choices)
    m = re.match(r"([A-Z])(?![A-Za-z])", text)
    if m:
        idx = ord(m.group(1)) - 65
        return idx if idx < k else None
    body = text.strip(_WRAP + ".)]}").lower()
    if not body:
        return None
    lowered = [c.strip().lower() for c in choices]
    if body in lowered:
        return lowered.index(body)
    hit = difflib.get_close_matches(body, lowered, n=1, cutoff=FUZZY_CUTOFF)
    return lowered.index(hit[0]) if hit else None


def _reply_text(body):
    try:
        return body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        return None


def _request(spec, payload, transport, rng, sleep):
    url = spec.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if spec.auth_env:
        token = os.environ.get(spec.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
    status = None
    for attempt in range(spec.max_retries + 1):
        try:
            status, body = transport(url, payload, headers, spec.timeout)
        except (OSError, TimeoutError) as exc:
            status, body = None, None
            log.warning("%s: transport error %s (attempt %d)", spec.name, exc, attempt + 1)
        if status is not None and 200 <= status < 300 and body is not None:
            return body
        if status is not None and status not in RETRY_STATUSES and not 200 <= status < 300:
            break
        if attempt < spec.max_retries:
            delay = min(BACKOFF_CAP, BACKOFF_BASE * 2**attempt)
            sleep(delay * (0.5 + rng.random()))
    raise BackendError(f"{spec.name}: request failed (last status {status})", status)


def harvest(spec, prompt, choices, transport=None, rng=None, sleep=time.sleep):
    """Ask ``spec.passes`` times and return the per-choice frequency vector.

    Unparseable passes are spread evenly over all choices.
    """
    k = len(choices)
    if k < 2:
        raise ValueError("need at least two choices")
    transport = transport or urllib_transport
    rng = rng or random.Random(0)
    payload = {
        "model": spec.model_id,
        "messages": [{"role": "user", "content": format_prompt(prompt, choices)}],
        "temperature": spec.temperature,
        "n": 1,
    }
    transcripts, parsed = [], []
    for _ in range(spec.passes):
        text = _reply_text(_request(spec, payload, transport, rng, sleep))
        transcripts.append(text)
        parsed.append(parse_choice(text, choices))
    hits = [p for p in parsed if p is not None]
    if not hits:
        raise ParseError(f"{spec.name}: no parseable reply in {spec.passes} passes", transcripts)
    probs = np.full(k, (spec.passes - len(hits)) / (k * spec.passes))
    vocab, freqs = freqs_from_passes(hits)
    probs[vocab] += freqs * len(hits) / spec.passes
    return HarvestResult(probs, transcripts, parsed)


@dataclass
class HarvestSummary:
    complete: int
    quarantined: int
    requested: int

    @property
    def partial(self):
        return self.quarantined > 0


def load_questions(path):
    questions = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            q = json.loads(line)
            missing = {"id", "prompt", "choices", "gold"} - set(q)
            if missing:
                raise ValueError(f"{path}:{lineno}: missing {sorted(missing)}")
            if len(q["choices"]) < 2:
                raise ValueError(f"{path}:{lineno}: need at least two choices")
            questions.append(q)
    return questions


def _read_checkpoint(path):
    done = {}
    if path and os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    entry = json.loads(line)
                    if entry.get("probs") is not None:
                        done[(str(entry["id"]), entry["backend"])] = entry["probs"]
    return done


def harvest_dataset(specs, questions_path, out_path, workers=4, transport=None,
                    checkpoint_path=None, quarantine_path=None, seed=0, sleep=time.sleep):
    """Harvest every (question, backend) pair and write complete records to
    ``out_path``.  Finished pairs are appended to a checkpoint file and skipped
    on reruns; questions with any failed backend go to a quarantine sidecar."""
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("backend names must be unique")
    questions = load_questions(questions_path)
    checkpoint_path = checkpoint_path or out_path + ".ckpt"
    quarantine_path = quarantine_path or out_path + ".quarantine.jsonl"
    done = _read_checkpoint(checkpoint_path)
    errors = {}
    lock = threading.Lock()

    todo = [(q, s) for q in questions for s in specs if (str(q["id"]), s.name) not in done]

    def work(item):
        q, s = item
        rng = random.Random(f"{seed}:{q['id']}:{s.name}")
        try:
            res = harvest(s, q["prompt"], q["choices"], transport, rng, sleep)
            entry = {"id": str(q["id"]), "backend": s.name, "probs": res.probs.tolist()}
        except (BackendError, ParseError) as exc:
            entry = {"id": str(q["id"]), "backend": s.name, "probs": None, "error": str(exc)}
        with lock:
            with open(checkpoint_path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")
            if entry["probs"] is None:
                errors[(entry["id"], s.name)] = entry["error"]
            else:
                done[(entry["id"], s.name)] = entry["probs"]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(work, todo))

    complete = quarantined = 0
    with open(out_path, "w") as out, open(quarantine_path, "w") as quar:
        for q in questions:
            qid = str(q["id"])
            missing = [s.name for s in specs if (qid, s.name) not in done]
            if missing:
                quarantined += 1
                quar.write(json.dumps({"id": qid, "missing": missing,
                                       "errors": {n: errors.get((qid, n)) for n in missing}}) + "\n")
                continue
            outputs = np.array([done[(qid, s.name)] for s in specs])
            rec = QueryRecord(qid, str(q.get("task", "")), len(q["choices"]), int(q["gold"]), outputs)
            out.write(rec.to_json() + "\n")
            complete += 1
    return HarvestSummary(complete, quarantined, len(todo))
