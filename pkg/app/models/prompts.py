"""
Prompt templates for candidate generation and feedback analysis.

Three templates are used: ``initial`` asks for the first batch of programs,
``feedback`` asks the model to analyze the trained candidates' performance
and Lipschitz constants, and ``subsequent`` asks for improved programs with
the accumulated history of earlier iterations.
"""

import logging
import string
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from app.models.dsl import GRAMMAR
from app.models.lipschitz import LipschitzArray

logger = logging.getLogger(__name__)

TEMPLATE_IDS = ("initial", "feedback", "subsequent")

SYSTEM_MESSAGE = (
    "You are an expert in reinforcement learning and reward design. You write "
    "state representation and intrinsic reward programs in a small expression "
    "language and answer with exactly one fenced code block."
)

SEPARATOR = "========================================================="

OUTPUT_EXAMPLE = """\
```dsl
repr:
out: <expression for the first added dimension>
out: <expression for the second added dimension>
reward:
out: <expression for the intrinsic reward>
```"""

_DESIGN_SECTION = """\
Revise the state representation for a reinforcement learning agent.
{separator}
The agent's task description is:
{task_description}
{separator}

The current state is represented by a {total_dim}-dimensional vector, denoted as `s`.

Details of each dimension in the state `s` are as follows:
{detail_content}

You should design a task-related state representation based on the source {total_dim} dim to better for reinforcement training, using the detailed information mentioned above to do some calculations, and feel free to do complex calculations. Every `out:` line of your representation program adds one dimension, and the added dimensions are concatenated to the source state.
"""

_INSTRUCTIONS_SECTION = """\
That is to say, we will:
1. use your representation program to get an updated state: updated_s = concat(s, repr(s))
2. use your intrinsic reward program to get an intrinsic reward for the task: r = reward(updated_s)
3. to better design the intrinsic reward, we recommend you use some source dim in the updated_s, which is between s[0] and s[{last_source_index}]
4. however, you must use the extra dim in your representation program, which is between s[{total_dim}] and the end of updated_s

Both programs are written in the following expression language. Inside the reward program, `s` refers to updated_s.

{grammar}

The goal is to better for reinforcement training. Lets think step by step. Below is an illustrative example of the expected output:

{output_example}
"""

TEMPLATES: Dict[str, str] = {
    "initial": (
        _DESIGN_SECTION
        + "\nBesides, we want you to design an intrinsic reward program based on the representation program.\n\n"
        + _INSTRUCTIONS_SECTION
    ),
    "feedback": """\
We have successfully trained Reinforcement Learning policy using {sample_count} different state representation programs and intrinsic reward programs sampled by you, and each pair of programs is associated with the training of a policy relatively.

Throughout every state representation program's training process, we monitored:
1. The final policy performance ({score_name}).
{lipschitz_item}
Here are the results:
{iteration_results}

You should analyze the results mentioned above and give suggestions about how to improve the performance of the "state representation program".

Here are some tips for how to analyze the results:
(a) if you find a state representation program's performance is very low, then you should analyze to figure out why it fail
(b) if you find some dims' Lipschitz constant very large, you should analyze to figure out what makes it fail
(c) you should also analyze how to improve the performance of the "state representation program" and "intrinsic reward program" later

Lets think step by step. Your solution should aim to improve the overall performance of the RL policy.
""",
    "subsequent": (
        _DESIGN_SECTION
        + """
For this problem, we have some history experience for you, here are some state representation programs we have tried in the former iterations:
{former_history}

Based on the former suggestions. We are seeking an improved state representation program and an improved intrinsic reward program that can enhance the model's performance on the task. The representation program should incorporate calculations, and the results are concatenated to the original state.

Besides, We are seeking an improved intrinsic reward program.

"""
        + _INSTRUCTIONS_SECTION
    ),
}

LIPSCHITZ_ITEM = (
    "2. Most importantly, every state dim's Lipschitz constant with the reward. That is to say, "
    "you can see which dim is more related to the reward and which dim can contribute to enhancing "
    "the continuity of the reward function mapping. Raw values are listed together with a "
    "min-max normalized companion.\n"
)

SPECTRAL_ITEM = (
    "2. Most importantly, an upper bound on the Lipschitz constant of the learned value function "
    "(product of the critic weight matrices' spectral norms). A smaller bound indicates a smoother "
    "value function.\n"
)

# Filled in by build_prompt rather than by the caller.
_DERIVED_VARIABLES = {"separator", "last_source_index", "grammar", "output_example", "lipschitz_item"}


class PromptError(ValueError):
    """A template is unknown or a required variable is missing."""


@dataclass(frozen=True)
class PromptBundle:
    template_id: str
    system: str
    user: str
    variables: Dict[str, str] = field(default_factory=dict)

    def messages(self) -> List[Dict[str, str]]:
        """Chat-completion message list."""
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": self.user},
        ]

    def render(self) -> str:
        return f"[system]\n{self.system}\n\n[user]\n{self.user}"


def required_variables(template_id: str) -> List[str]:
    """Caller-supplied placeholders of a template, in order of first use."""
    if template_id not in TEMPLATES:
        raise PromptError(f"unknown template {template_id!r}; expected one of {TEMPLATE_IDS}")
    names = []
    for _, name, _, _ in string.Formatter().parse(TEMPLATES[template_id]):
        if name and name not in _DERIVED_VARIABLES and name not in names:
            names.append(name)
    return names


def build_prompt(template_id: str, variables: Dict[str, object]) -> PromptBundle:
    """
    Substitute variables into a template.

    ``total_dim`` also fills the derived index placeholders, and the grammar
    and output example are inserted verbatim. For the feedback template,
    ``variables["lipschitz_item"]`` may override the monitored-signal line.

    Args:
        template_id: One of "initial", "feedback", "subsequent"
        variables: Placeholder values

    Returns:
        PromptBundle with system and user texts

    Raises:
        PromptError: If the template is unknown or a variable is missing
    """
    missing = [name for name in required_variables(template_id) if name not in variables]
    if missing:
        raise PromptError(f"template {template_id!r} is missing variables: {', '.join(missing)}")

    values = {name: str(value) for name, value in variables.items()}
    values.setdefault("lipschitz_item", LIPSCHITZ_ITEM)
    values.update(separator=SEPARATOR, grammar=GRAMMAR, output_example=OUTPUT_EXAMPLE)
    if "total_dim" in values:
        values["last_source_index"] = str(int(values["total_dim"]) - 1)

    user = TEMPLATES[template_id].format(**values)
    substituted = {name: values[name] for name in required_variables(template_id)}
    return PromptBundle(template_id=template_id, system=SYSTEM_MESSAGE, user=user, variables=substituted)


@dataclass
class CandidateFeedback:
    """One trained candidate as reported back to the generator."""

    candidate_id: int
    program_text: str
    score: Optional[float]
    lipschitz: Optional[LipschitzArray] = None
    critic_bound: Optional[float] = None
    disqualified: bool = False
    reason: Optional[str] = None


def _format_values(values: Sequence[float]) -> str:
    return "[" + ", ".join(f"{v:.4f}" for v in values) + "]"


def format_candidate_source(repr_text: str, reward_text: str) -> str:
    """Program pair in the fenced-block layout the generator is asked to produce."""
    return f"```dsl\nrepr:\n{repr_text.strip()}\nreward:\n{reward_text.strip()}\n```"


def format_iteration_results(feedback: Sequence[CandidateFeedback], include_lipschitz: bool = True) -> str:
    """
    Results table for the feedback template.

    Lists program text and score for every candidate, the raw and normalized
    Lipschitz arrays (or the critic bound) unless ``include_lipschitz`` is
    False, and the reason for any disqualification.
    """
    blocks = []
    for i, item in enumerate(feedback, start=1):
        lines = [f"========== State Representation Program -- {i} (candidate {item.candidate_id}) ==========",
                 item.program_text]
        if item.disqualified:
            lines.append(f"Disqualified: {item.reason or 'unknown reason'}")
        else:
            lines.append(f"The final policy performance: {item.score:.4f}")
            if include_lipschitz and item.lipschitz is not None:
                lines.append(f"Lipschitz constant of every dim with the reward: {_format_values(item.lipschitz.values)}")
                lines.append(f"Normalized Lipschitz constants: {_format_values(item.lipschitz.normalized())}")
                if item.lipschitz.approximate:
                    lines.append("(estimated from sampled state pairs)")
            if include_lipschitz and item.critic_bound is not None:
                lines.append(f"Critic spectral-norm Lipschitz bound: {item.critic_bound:.4f}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def format_history_entry(iteration: int, feedback: Sequence[CandidateFeedback], analysis: str,
                         include_lipschitz: bool = True) -> str:
    """One iteration's programs, results and suggestions, appended to the running history."""
    return (
        f"---------- Iteration {iteration} ----------\n"
        f"{format_iteration_results(feedback, include_lipschitz)}\n\n"
        f"Suggestions from the analysis of iteration {iteration}:\n{analysis.strip()}\n"
    )
