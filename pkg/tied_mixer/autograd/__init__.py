"""
Dense float64 tensors with reverse-mode differentiation.

Every primitive in ``ops`` computes its result eagerly with numpy and, when a
``Tape`` is active and one of its inputs requires a gradient, appends a node
to the tape holding the inputs, the output and a vector-Jacobian product
closure. Because nodes are appended in execution order, the tape is already
topologically sorted and ``backward`` only needs to replay it in reverse.

A tensor may feed many nodes. Its gradient buffer is shared by all of them
and every node adds its contribution into it, which is what makes reusing
the same parameters several times in one forward pass (weight tying) work
without any special handling.

Tapes are rebuilt on every forward pass, so the unrolled depth of the
network can change from call to call. The active tape is held in a context
variable: each thread records onto its own tape.

Broadcasting follows numpy rules; gradients flowing into a broadcast operand
are summed back over the broadcast axes (see ``unbroadcast``).
"""

from tied_mixer.autograd.rng import Rng  # noqa: F401
from tied_mixer.autograd.tensor import Tape, Tensor, as_tensor, backward  # noqa: F401
