import numpy as np

from biobench.credit import ErrorSignal, RuleKind, carry_error, output_error
from biobench.network import ForwardCache, Network


def bp_backward(net: Network, cache: ForwardCache, e_f: np.ndarray) -> ErrorSignal:
    """Chain rule: ``e_i = (w_{i+1}^T e_{i+1}) * sigma'(a_i)``."""
    errors: list[np.ndarray | None] = [None] * len(net.specs)
    j, e = output_error(net, cache, e_f)
    errors[j] = e
    while (step := carry_error(net, cache, j, e, net.params[j].weights)) is not None:
        j, e = step
        errors[j] = e
    return ErrorSignal(e_f=e_f, errors=errors)


class BackpropRule:
    kind: RuleKind = "bp"

    def backward(self, net: Network, cache: ForwardCache, e_f: np.ndarray) -> ErrorSignal:
        return bp_backward(net, cache, e_f)
