"""Feedback Alignment and Direct Feedback Alignment.

Both replace the transported forward weights with fixed random matrices.
FA still walks the error down layer by layer; DFA sends ``e_f`` to
every hidden layer at once.
"""

import numpy as np

from biobench.credit import (
    ErrorSignal,
    FeedbackMatrices,
    RuleKind,
    carry_error,
    output_error,
    parametric_below,
    transport_dense,
)
from biobench.network import ForwardCache, Network
from biobench.numerics import activation_deriv


def fa_backward(
    net: Network, feedback: FeedbackMatrices, cache: ForwardCache, e_f: np.ndarray
) -> ErrorSignal:
    feedback.check(net, "fa")
    errors: list[np.ndarray | None] = [None] * len(net.specs)
    j, e = output_error(net, cache, e_f)
    errors[j] = e
    while (k := parametric_below(net, j)) is not None:
        b = feedback.matrices[k]
        transport = b if net.specs[j].kind == "conv" else b.T
        j, e = carry_error(net, cache, j, e, transport)
        errors[j] = e
    return ErrorSignal(e_f=e_f, errors=errors)


def dfa_backward(
    net: Network, feedback: FeedbackMatrices, cache: ForwardCache, e_f: np.ndarray
) -> ErrorSignal:
    feedback.check(net, "dfa")
    errors: list[np.ndarray | None] = [None] * len(net.specs)
    top, e_top = output_error(net, cache, e_f)
    errors[top] = e_top
    for i in net.parametric:
        if i == top:
            continue
        a = cache.pre[i]
        projected = transport_dense(e_f, feedback.matrices[i].T).reshape(a.shape)
        errors[i] = projected * activation_deriv(net.specs[i].activation, a)
    return ErrorSignal(e_f=e_f, errors=errors)


class FeedbackAlignmentRule:
    kind: RuleKind = "fa"

    def __init__(self, feedback: FeedbackMatrices):
        self.feedback = feedback

    def backward(self, net: Network, cache: ForwardCache, e_f: np.ndarray) -> ErrorSignal:
        return fa_backward(net, self.feedback, cache, e_f)


class DirectFeedbackAlignmentRule:
    kind: RuleKind = "dfa"

    def __init__(self, feedback: FeedbackMatrices):
        self.feedback = feedback

    def backward(self, net: Network, cache: ForwardCache, e_f: np.ndarray) -> ErrorSignal:
        return dfa_backward(net, self.feedback, cache, e_f)
