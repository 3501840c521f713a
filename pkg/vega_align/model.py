"""
vega-align - Model bundles

``VegaModel`` is the training-time bundle (student encoder, action head,
optional projector). ``strip_projector`` turns it into an
``InferenceModel`` holding only the encoder and head. Both predict
through ``action_path``, so stripping never changes an action.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .alignment import ProjectorParams
from .encoder import EncoderParams, PatchTokenMap, encode, extract_student_tokens
from .params import ParameterSet
from .policy_head import ActionHeadParams, head_forward
from .tensor import Tensor, no_grad


def action_path(images: Any, student: EncoderParams, head: ActionHeadParams) -> Tensor:
    """Encoder final block -> action head. The projector is never on this path."""
    blocks = encode(images, student)
    return head_forward(blocks[-1].tokens, head)


@dataclass
class VegaModel:
    student: EncoderParams
    head: ActionHeadParams
    projector: ProjectorParams | None = None

    def parameter_sets(self) -> list[tuple[str, ParameterSet]]:
        sets: list[tuple[str, ParameterSet]] = [("student", self.student), ("head", self.head)]
        if self.projector is not None:
            sets.append(("projector", self.projector))
        return sets

    def trainable_parameters(self) -> list[Tensor]:
        return [t for _, ps in self.parameter_sets() for t in ps.trainable()]

    def num_parameters(self) -> int:
        return sum(ps.num_parameters() for _, ps in self.parameter_sets())

    def zero_grad(self) -> None:
        for _, ps in self.parameter_sets():
            ps.zero_grad()

    def forward(self, images: Any) -> tuple[Tensor, PatchTokenMap]:
        """Actions from the final block plus the block L-2 tokens used for alignment."""
        blocks = encode(images, self.student)
        return head_forward(blocks[-1].tokens, self.head), extract_student_tokens(blocks)

    def predict(self, images: Any) -> np.ndarray:
        with no_grad():
            return action_path(images, self.student, self.head).numpy()


@dataclass
class InferenceModel:
    student: EncoderParams
    head: ActionHeadParams

    def num_parameters(self) -> int:
        return self.student.num_parameters() + self.head.num_parameters()

    def predict(self, images: Any) -> np.ndarray:
        with no_grad():
            return action_path(images, self.student, self.head).numpy()


def strip_projector(trained: VegaModel) -> InferenceModel:
    """Drop the projector; the encoder and head are copied bit-for-bit and frozen."""
    head = ActionHeadParams.from_state(trained.head.state_dict())
    head.freeze()
    return InferenceModel(student=trained.student.copy(frozen=True), head=head)
