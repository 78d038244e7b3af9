"""
Candidate generation: chat-completion client, offline mock and program extraction.

A generator answers two kinds of request. ``generate`` returns a response
expected to hold one fenced ``dsl`` block with a ``repr:`` and a
``reward:`` section; ``analyze`` returns free-text suggestions for the
feedback step.
"""

import logging
import re
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import httpx
import numpy as np

from app.models.dsl import (
    DEFAULT_MAX_OUTPUTS,
    DslError,
    ReprProgram,
    RewardProgram,
    format_program,
    parse_repr_program,
    parse_reward_program,
)
from app.models.prompts import PromptBundle, format_candidate_source

logger = logging.getLogger(__name__)

_TAGGED_BLOCK_RE = re.compile(r"```[ \t]*dsl[ \t]*\n(.*?)```", re.DOTALL | re.IGNORECASE)
_ANY_BLOCK_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_SECTION_RE = re.compile(r"^\s*(repr|reward)\s*:\s*$", re.IGNORECASE)


class ExtractionError(ValueError):
    """A response does not contain a usable program pair."""


class GeneratorUnavailableError(RuntimeError):
    """The remote endpoint could not be reached within the retry budget."""


class NoValidCandidatesError(RuntimeError):
    """Every sampled response in an iteration was rejected."""


@dataclass(frozen=True)
class Completion:
    text: str
    provenance: str


@dataclass(frozen=True)
class Candidate:
    """One validated (F, G) pair sampled in an iteration."""

    candidate_id: int
    iteration: int
    repr: ReprProgram
    reward: RewardProgram
    provenance: str
    raw_response: str = field(default="", compare=False)

    @property
    def program_text(self) -> str:
        return format_candidate_source(format_program(self.repr), format_program(self.reward))

    @property
    def augmented_dim(self) -> int:
        return self.repr.input_dim + self.repr.output_dim


@dataclass(frozen=True)
class Rejection:
    slot: int
    attempt: int
    reason: str
    raw_response: str
    provenance: str


@dataclass
class GenerationReport:
    candidates: List[Candidate]
    rejections: List[Rejection]


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def find_program_block(response_text: str) -> str:
    """
    Body of the first fenced block tagged ``dsl``, else of the first fenced block.

    Raises:
        ExtractionError: "no program block" if the response has no fenced block
    """
    match = _TAGGED_BLOCK_RE.search(response_text) or _ANY_BLOCK_RE.search(response_text)
    if match is None:
        raise ExtractionError("no program block")
    return match.group(1)


def split_sections(block: str) -> Tuple[Optional[str], Optional[str]]:
    """Split a block into its ``repr:`` and ``reward:`` section texts."""
    sections = {"repr": None, "reward": None}
    current = None
    for line in block.splitlines():
        header = _SECTION_RE.match(line)
        if header:
            current = header.group(1).lower()
            sections[current] = sections[current] or ""
            continue
        if current is not None:
            sections[current] += line + "\n"
    return sections["repr"], sections["reward"]


def parse_program_pair(block: str, state_dim: int,
                       max_outputs: int = DEFAULT_MAX_OUTPUTS) -> Tuple[ReprProgram, RewardProgram]:
    """
    Parse the ``repr:`` and ``reward:`` sections of a program block.

    Raises:
        ExtractionError: If a section is missing
        DslError: If a section fails to parse or validate
    """
    repr_text, reward_text = split_sections(block)
    if repr_text is None or not repr_text.strip():
        raise ExtractionError("missing repr block")
    if reward_text is None or not reward_text.strip():
        raise ExtractionError("missing reward block")
    repr_program = parse_repr_program(repr_text, state_dim, max_outputs=max_outputs)
    reward_program = parse_reward_program(
        reward_text, state_dim + repr_program.output_dim, source_dim=state_dim
    )
    return repr_program, reward_program


def extract_programs(response_text: str, state_dim: int,
                     max_outputs: int = DEFAULT_MAX_OUTPUTS) -> Tuple[ReprProgram, RewardProgram]:
    """
    Locate the program block of a response and parse both programs.

    Args:
        response_text: Raw generator response
        state_dim: Source state dimension |S|
        max_outputs: Upper bound on added dimensions

    Returns:
        (ReprProgram, RewardProgram)

    Raises:
        ExtractionError: No fenced block, or a missing section
        DslError: Parse or validation failure, with line and column
    """
    return parse_program_pair(find_program_block(response_text), state_dim, max_outputs)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

class CandidateGenerator:
    """Interface shared by the mock and remote generators."""

    mode = "abstract"

    def generate(self, prompt: PromptBundle) -> Completion:
        raise NotImplementedError

    def generate_batch(self, prompt: PromptBundle, n: int) -> List[Completion]:
        """``n`` independent responses to the same prompt."""
        return [self.generate(prompt) for _ in range(n)]

    def analyze(self, prompt: PromptBundle) -> str:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"mode": self.mode}


def _pool_response(repr_lines: Sequence[str], reward_line: str, note: str) -> str:
    body = "\n".join(repr_lines)
    return f"{note}\n\n```dsl\nrepr:\n{body}\nreward:\n{reward_line}\n```\n"


DISTANCE = "sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2)"

MOCK_POOL: Tuple[str, ...] = (
    _pool_response(
        [f"out: {DISTANCE}"],
        "out: -s[4]",
        "The distance between the agent and the target is the most task-related quantity.",
    ),
    _pool_response(
        ["out: s[2] - s[0]", "out: s[3] - s[1]"],
        "out: -abs(s[4]) - abs(s[5])",
        "Relative displacement along each axis; the reward penalizes the sum of absolute offsets.",
    ),
    _pool_response(
        [f"out: (s[2] - s[0]) / {DISTANCE}", f"out: (s[3] - s[1]) / {DISTANCE}", f"out: {DISTANCE}"],
        "out: -s[6]",
        "Cosine and sine of the bearing to the target, plus the distance itself.",
    ),
    _pool_response(
        ["out: (s[0] - s[2])^2 + (s[1] - s[3])^2"],
        "out: -0.01 * s[4]",
        "A quadratic energy-like potential of the offset to the target.",
    ),
    _pool_response(
        ["out: max(abs(s[0] - s[2]), abs(s[1] - s[3]))", "out: abs(s[0] - s[2]) + abs(s[1] - s[3])"],
        "out: -0.5 * (s[4] + s[5])",
        "Chebyshev and Manhattan distances to the target.",
    ),
    _pool_response(
        ["out: sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2"],
        "out: -s[4]",
        "This response has an unbalanced parenthesis.",
    ),
    _pool_response(
        ["out: (s[0] + exp(1000)) - exp(1000)"],
        "out: s[4]",
        "This representation overflows and evaluates to NaN.",
    ),
)

MOCK_ANALYSIS = """\
Analysis of the {count} trained candidates:
(a) Candidates whose added dimensions measure how far the agent is from the target perform best, because the reward is a smooth function of that distance.
(b) Large Lipschitz constants on an added dimension mean the reward changes sharply along it; quadratic features grow too quickly far from the target.
(c) Keep the distance feature, prefer features that are linear in the distance, and scale the intrinsic reward so it does not dominate the task reward."""


class MockGenerator(CandidateGenerator):
    """
    Deterministic offline generator cycling through a fixed response pool.

    The visiting order is a permutation of the pool drawn from ``seed`` and
    repeated, so a rerun with the same seed yields the same responses.
    """

    mode = "mock"

    def __init__(self, seed: int = 0, pool: Optional[Sequence[str]] = None):
        self.seed = seed
        self.pool = tuple(pool) if pool is not None else MOCK_POOL
        if not self.pool:
            raise ValueError("mock pool must not be empty")
        self.order = [int(i) for i in np.random.default_rng(seed).permutation(len(self.pool))]
        self.calls = 0

    def generate(self, prompt: PromptBundle) -> Completion:
        index = self.order[self.calls % len(self.order)]
        self.calls += 1
        return Completion(text=self.pool[index], provenance=f"mock:{index}")

    def analyze(self, prompt: PromptBundle) -> str:
        return MOCK_ANALYSIS.format(count=prompt.variables.get("sample_count", "sampled"))

    def skip(self, count: int) -> None:
        """Advance the cursor as if ``count`` responses had been drawn."""
        self.calls += count

    def describe(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "pool_size": len(self.pool)}


class RemoteGenerator(CandidateGenerator):
    """
    Client for any chat-completions compatible endpoint.

    Transport errors, timeouts and non-2xx responses are retried up to
    ``retry_budget`` times before GeneratorUnavailableError is raised.
    """

    mode = "remote"

    def __init__(self, endpoint: str, model: str, api_key: str, temperature: float = 1.0,
                 timeout: float = 60.0, retry_budget: int = 3, backoff: float = 1.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.retry_budget = retry_budget
        self.backoff = backoff
        self.client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"},
        )

    def _chat(self, prompt: PromptBundle, n: int = 1) -> List[str]:
        body = {
            "model": self.model,
            "messages": prompt.messages(),
            "temperature": self.temperature,
        }
        if n > 1:
            body["n"] = n
        last_error = None
        for attempt in range(self.retry_budget + 1):
            try:
                response = self.client.post(self.endpoint, json=body)
                response.raise_for_status()
                choices = response.json()["choices"]
                texts = [choice["message"]["content"] for choice in choices[:n]]
                if not texts:
                    raise ValueError("response has no choices")
                return texts
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
                last_error = e
                logger.warning(f"Chat completion attempt {attempt + 1} failed: {e}")
                if attempt < self.retry_budget and self.backoff > 0:
                    time.sleep(self.backoff * (attempt + 1))
        raise GeneratorUnavailableError(
            f"{self.endpoint} unavailable after {self.retry_budget + 1} attempts: {last_error}"
        )

    def generate(self, prompt: PromptBundle) -> Completion:
        return self.generate_batch(prompt, 1)[0]

    def generate_batch(self, prompt: PromptBundle, n: int) -> List[Completion]:
        """
        One request asking for ``n`` choices. Endpoints that ignore ``n``
        and answer with fewer choices are topped up with single requests.
        """
        texts = self._chat(prompt, n)
        while len(texts) < n:
            logger.debug(f"Endpoint returned {len(texts)} of {n} choices; requesting one more")
            texts.extend(self._chat(prompt))
        return [Completion(text=text, provenance=f"model:{self.model}") for text in texts]

    def analyze(self, prompt: PromptBundle) -> str:
        return self._chat(prompt)[0]

    def close(self) -> None:
        self.client.close()

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "retry_budget": self.retry_budget,
        }


def generate_candidates(generator: CandidateGenerator, prompt: PromptBundle, k: int, state_dim: int,
                        iteration: int = 0, first_id: int = 0, retry_budget: int = 3,
                        max_outputs: int = DEFAULT_MAX_OUTPUTS) -> GenerationReport:
    """
    Sample up to ``k`` validated candidates.

    The first response of every slot comes from a single batched request;
    invalid slots are then retried one response at a time, up to
    ``retry_budget`` times each. A slot that never validates is dropped and
    not backfilled.
    Accepted candidates are numbered consecutively from ``first_id``.

    Raises:
        ValueError: If k < 1
        GeneratorUnavailableError: If the remote endpoint is down
        NoValidCandidatesError: If every slot was dropped
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    candidates: List[Candidate] = []
    rejections: List[Rejection] = []
    first_draws = generator.generate_batch(prompt, k) if k > 0 else []
    for slot in range(k):
        for attempt in range(retry_budget + 1):
            completion = first_draws[slot] if attempt == 0 else generator.generate(prompt)
            try:
                repr_program, reward_program = extract_programs(completion.text, state_dim, max_outputs)
            except (ExtractionError, DslError) as e:
                logger.warning(f"Iteration {iteration}, slot {slot}, attempt {attempt + 1}: rejected response ({e})")
                rejections.append(Rejection(slot, attempt, str(e), completion.text, completion.provenance))
                continue
            candidates.append(Candidate(
                candidate_id=first_id + len(candidates),
                iteration=iteration,
                repr=repr_program,
                reward=reward_program,
                provenance=completion.provenance,
                raw_response=completion.text,
            ))
            break
        else:
            logger.warning(f"Iteration {iteration}, slot {slot}: dropped after {retry_budget + 1} invalid responses")

    if not candidates:
        raise NoValidCandidatesError(f"all {k} candidate slots of iteration {iteration} were invalid")
    logger.info(f"Iteration {iteration}: accepted {len(candidates)}/{k} candidates")
    return GenerationReport(candidates=candidates, rejections=rejections)


def load_program_pair(text: str, state_dim: int,
                      max_outputs: int = DEFAULT_MAX_OUTPUTS) -> Tuple[ReprProgram, RewardProgram]:
    """Parse a program file holding either a fenced block or bare ``repr:``/``reward:`` sections."""
    block = find_program_block(text) if "```" in text else text
    return parse_program_pair(block, state_dim, max_outputs)


def format_program_file(repr_program: ReprProgram, reward_program: RewardProgram) -> str:
    """Text of a ``program.dsl`` file."""
    return f"repr:\n{format_program(repr_program)}\nreward:\n{format_program(reward_program)}\n"
