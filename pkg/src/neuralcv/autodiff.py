"""Hyper-dual forward derivatives with a reverse-mode tape over parameters.

A :class:`HyperDual` carries four arrays ``(val, d1, d2, d12)``: the value,
the first partials along two seeded input directions ``u1`` and ``u2``, and
the mixed second partial. A derivative slot set to ``None`` is structurally
zero and is skipped during arithmetic, so a 1D request never pays for the
``d2``/``d12`` slots and conditioning inputs cost only their value.

When an operand belongs to a :class:`Tape`, each primitive is recorded
together with its vector-Jacobian product over all four slots. The reverse
sweep therefore yields exact parameter gradients of any objective built from
``val``, ``d1``, ``d2`` or ``d12`` -- including losses on mixed partials.

All slots are float64 arrays that broadcast like numpy arrays; a batch of
samples is simply the leading axis.
"""

from __future__ import annotations

import numpy as np

SLOTS = ("val", "d1", "d2", "d12")


def _arr(x):
    return np.asarray(x, dtype=np.float64)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _mul(a, b):
    if a is None or b is None:
        return None
    return a * b


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g is None or g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tape:
    """Append-only record of primitives over hyper-dual quadruples.

    Nodes are stored in creation order, which is a topological order, so the
    reverse sweep just walks the list backwards. Tapes are meant to be
    short-lived: build one per objective evaluation and discard it.
    """

    def __init__(self):
        self.nodes: list[HyperDual] = []
        self._parents: list[tuple] = []
        self._vjp: list = []
        self._fwd: list = []
        self.params: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, out, parents, fwd, vjp):
        out.tape = self
        out.index = len(self.nodes)
        self.nodes.append(out)
        self._parents.append(tuple(p.index for p in parents))
        self._fwd.append(fwd)
        self._vjp.append(vjp)
        return out

    def param(self, name: str, value) -> HyperDual:
        """Register a parameter leaf (no derivatives with respect to u)."""
        if name in self.params:
            return self.nodes[self.params[name]]
        leaf = HyperDual(_arr(value))
        self._record(leaf, (), None, None)
        self.params[name] = leaf.index
        return leaf

    def leaf(self, hd: HyperDual) -> HyperDual:
        """Place an untaped hyper-dual on this tape as a constant leaf."""
        if hd.tape is self:
            return hd
        out = HyperDual(hd.val, hd.d1, hd.d2, hd.d12)
        return self._record(out, (), None, None)

    def replay(self) -> list[tuple]:
        """Recompute every node from the leaves and return the quadruples.

        Leaves keep their stored values; interior nodes are re-evaluated with
        the recorded forward rule, so the result can be compared bit-for-bit
        against ``node.quad()``.
        """
        values: list[tuple] = []
        for i, node in enumerate(self.nodes):
            fwd = self._fwd[i]
            if fwd is None:
                values.append(node.quad())
            else:
                values.append(fwd(*[values[j] for j in self._parents[i]]))
        return values

    def reverse_order(self, objective: HyperDual) -> list[int]:
        """Node indices visited by the reverse sweep from ``objective``."""
        self._check(objective)
        return list(range(objective.index, -1, -1))

    def _check(self, objective):
        if objective.tape is not self or objective.index < 0:
            raise ValueError("objective is not recorded on this tape")

    def backward(self, objective: HyperDual) -> list:
        """Adjoint quadruples for every node (``None`` where unreached)."""
        self._check(objective)
        if objective.val.size != 1:
            raise ValueError("objective must be a scalar")
        adj: list = [None] * (objective.index + 1)
        adj[objective.index] = (np.ones_like(objective.val), None, None, None)
        for i in range(objective.index, -1, -1):
            g = adj[i]
            vjp = self._vjp[i]
            if g is None or vjp is None:
                continue
            if g[0] is None:
                g = (np.zeros_like(self.nodes[i].val),) + tuple(g[1:])
            contributions = vjp(g)
            for j, gj in zip(self._parents[i], contributions):
                if gj is None:
                    continue
                shape = self.nodes[j].val.shape
                gj = tuple(_unbroadcast(s, shape) for s in gj)
                prev = adj[j]
                if prev is None:
                    adj[j] = gj
                else:
                    adj[j] = tuple(_add(p, s) for p, s in zip(prev, gj))
        return adj


def grad_params(tape: Tape, objective: HyperDual) -> dict[str, np.ndarray]:
    """Reverse-mode gradient of a scalar objective for every parameter leaf."""
    adj = tape.backward(objective)
    grads = {}
    for name, idx in tape.params.items():
        node = tape.nodes[idx]
        g = adj[idx][0] if idx < len(adj) and adj[idx] is not None else None
        grads[name] = np.zeros_like(node.val) if g is None else np.array(g, dtype=np.float64).reshape(node.val.shape)
    return grads


class HyperDual:
    """Value with two seeded first partials and their mixed partial."""

    __slots__ = ("val", "d1", "d2", "d12", "tape", "index")
    __array_priority__ = 1000

    def __init__(self, val, d1=None, d2=None, d12=None):
        self.val = _arr(val)
        shape = self.val.shape
        self.d1 = None if d1 is None else np.broadcast_to(_arr(d1), shape)
        self.d2 = None if d2 is None else np.broadcast_to(_arr(d2), shape)
        self.d12 = None if d12 is None else np.broadcast_to(_arr(d12), shape)
        self.tape = None
        self.index = -1

    def quad(self):
        return (self.val, self.d1, self.d2, self.d12)

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self):
        return f"HyperDual(val={self.val!r}, d1={self.d1!r}, d2={self.d2!r}, d12={self.d12!r})"

    def component(self, slot: str) -> HyperDual:
        """The ``slot`` array as a new real-valued node (for building losses)."""
        k = SLOTS.index(slot)
        q = self.quad()
        src = q[k]
        val = np.zeros_like(self.val) if src is None else src

        def fwd(a):
            s = a[k]
            return (np.zeros_like(a[0]) if s is None else s, None, None, None)

        def vjp(g):
            out = [None, None, None, None]
            out[k] = g[0]
            return (tuple(out),)

        return _emit((val, None, None, None), (self,), fwd, vjp)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, reciprocal(_wrap(other)))

    def __rtruediv__(self, other):
        return mul(_wrap(other), reciprocal(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_wrap(other), self)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None):
        return hsum(self, axis)

    def mean(self, axis=None):
        n = self.val.size if axis is None else self.val.shape[axis]
        return hsum(self, axis) * (1.0 / n)


def _wrap(x) -> HyperDual:
    return x if isinstance(x, HyperDual) else HyperDual(x)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("operands live on different tapes")
            tape = x.tape
    return tape


def _emit(quad, parents, fwd, vjp):
    out = HyperDual(*quad)
    tape = _tape_of(*parents)
    if tape is None:
        return out
    parents = tuple(tape.leaf(p) if p.tape is None else p for p in parents)
    return tape._record(out, parents, fwd, vjp)


# --- seeding ------------------------------------------------------------------


def lift_input(value, which: str | None = None) -> HyperDual:
    """Lift a real (or array) as a hyper-dual seeded along ``which``.

    ``which`` is ``"u1"``, ``"u2"`` or ``None``; unseeded inputs such as the
    conditioning vector carry structurally-zero derivatives.
    """
    v = _arr(value)
    if which is None or which == "none":
        return HyperDual(v)
    if which == "u1":
        return HyperDual(v, np.ones_like(v), np.zeros_like(v), np.zeros_like(v))
    if which == "u2":
        return HyperDual(v, np.zeros_like(v), np.ones_like(v), np.zeros_like(v))
    raise ValueError(f"unknown seed direction {which!r}")


def seed_columns(u) -> HyperDual:
    """Lift a ``(batch, d)`` array with column ``i`` seeded along ``u{i+1}``.

    ``d`` must be 1 or 2. For ``d == 1`` only ``d1`` is populated.
    """
    u = _arr(u)
    d = u.shape[-1]
    if d == 1:
        return HyperDual(u, np.ones_like(u))
    if d == 2:
        e1 = np.zeros_like(u)
        e1[..., 0] = 1.0
        e2 = np.zeros_like(u)
        e2[..., 1] = 1.0
        return HyperDual(u, e1, e2, np.zeros_like(u))
    raise ValueError("mixed partials are supported for at most two directions")


# --- primitives ---------------------------------------------------------------


def _add_quad(a, b):
    return (a[0] + b[0], _add(a[1], b[1]), _add(a[2], b[2]), _add(a[3], b[3]))


def add(a, b) -> HyperDual:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return (g, g)

    return _emit(_add_quad(a.quad(), b.quad()), (a, b), _add_quad, vjp)


def _neg_quad(a):
    return tuple(None if s is None else -s for s in a)


def neg(a) -> HyperDual:
    a = _wrap(a)

    def vjp(g):
        return (_neg_quad(g),)

    return _emit(_neg_quad(a.quad()), (a,), _neg_quad, vjp)


def _mul_quad(a, b):
    av, a1, a2, a12 = a
    bv, b1, b2, b12 = b
    cross = _add(_mul(a1, b2), _mul(a2, b1))
    d12 = _add(_add(_mul(a12, bv), _mul(av, b12)), cross)
    return (av * bv, _add(_mul(a1, bv), _mul(av, b1)), _add(_mul(a2, bv), _mul(av, b2)), d12)


def _mul_vjp_side(g, other):
    gv, g1, g2, g12 = g
    ov, o1, o2, o12 = other
    dv = _add(_add(gv * ov, _mul(g1, o1)), _add(_mul(g2, o2), _mul(g12, o12)))
    d1 = _add(_mul(g1, ov), _mul(g12, o2))
    d2 = _add(_mul(g2, ov), _mul(g12, o1))
    d12 = _mul(g12, ov)
    return (dv, d1, d2, d12)


def mul(a, b) -> HyperDual:
    a, b = _wrap(a), _wrap(b)
    qa, qb = a.quad(), b.quad()

    def vjp(g):
        return (_mul_vjp_side(g, qb), _mul_vjp_side(g, qa))

    return _emit(_mul_quad(qa, qb), (a, b), _mul_quad, vjp)


def _unary(a: HyperDual, f, f1, f2, f3=None) -> HyperDual:
    """Chain rule for an elementwise function with derivatives ``f1..f3``.

    ``f3`` is only needed when a tape differentiates through ``d12``.
    """

    def fwd(q):
        v, x1, x2, x12 = q
        fv = f(v)
        need_first = x1 is not None or x2 is not None or x12 is not None
        p1 = f1(v) if need_first else None
        cross = None
        if x1 is not None and x2 is not None:
            cross = f2(v) * (x1 * x2)
        return (fv, _mul(p1, x1), _mul(p1, x2), _add(_mul(p1, x12), cross))

    qa = a.quad()
    out = fwd(qa)

    def vjp(g):
        v, x1, x2, x12 = qa
        gv, g1, g2, g12 = g
        p1 = f1(v)
        if x1 is None and x2 is None and x12 is None:
            return ((gv * p1, None, None, None),)
        p2 = f2(v)
        dv = gv * p1
        dv = _add(dv, _mul(g1, _mul(p2, x1)))
        dv = _add(dv, _mul(g2, _mul(p2, x2)))
        if g12 is not None:
            inner = _mul(p2, x12)
            if x1 is not None and x2 is not None:
                inner = _add(inner, f3(v) * (x1 * x2))
            dv = _add(dv, _mul(g12, inner))
        d1 = _add(_mul(g1, p1), _mul(g12, _mul(p2, x2)))
        d2 = _add(_mul(g2, p1), _mul(g12, _mul(p2, x1)))
        d12 = _mul(g12, p1)
        # seed slots that were structurally zero receive no adjoint
        d1 = d1 if x1 is not None else None
        d2 = d2 if x2 is not None else None
        d12 = d12 if (x12 is not None or (x1 is not None and x2 is not None)) else None
        return ((dv, d1, d2, d12),)

    return _emit(out, (a,), fwd, vjp)


def sin(a) -> HyperDual:
    return _unary(_wrap(a), np.sin, np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v))


def cos(a) -> HyperDual:
    return _unary(_wrap(a), np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v), np.sin)


def exp(a) -> HyperDual:
    return _unary(_wrap(a), np.exp, np.exp, np.exp, np.exp)


def _zeros(v):
    return np.zeros_like(v)


def relu(a) -> HyperDual:
    """max(a, 0); the kink takes derivative 0."""
    return _unary(_wrap(a), lambda v: np.maximum(v, 0.0), lambda v: (v > 0).astype(np.float64), _zeros, _zeros)


def square(a) -> HyperDual:
    return _unary(_wrap(a), np.square, lambda v: 2.0 * v, lambda v: np.full_like(v, 2.0), _zeros)


def reciprocal(a) -> HyperDual:
    return _unary(
        _wrap(a),
        lambda v: 1.0 / v,
        lambda v: -1.0 / (v * v),
        lambda v: 2.0 / (v * v * v),
        lambda v: -6.0 / (v * v * v * v),
    )


def maximum(a, b) -> HyperDual:
    """Elementwise max; ties resolve to ``b`` (subgradient 0 for relu-like use)."""
    a, b = _wrap(a), _wrap(b)
    qa, qb = a.quad(), b.quad()

    def fwd(x, y):
        pick = x[0] > y[0]

        def sel(s, t):
            if s is None and t is None:
                return None
            s = np.zeros_like(x[0]) if s is None else s
            t = np.zeros_like(y[0]) if t is None else t
            return np.where(pick, s, t)

        return tuple(sel(s, t) for s, t in zip(x, y))

    out = fwd(qa, qb)
    pick = qa[0] > qb[0]

    def vjp(g):
        ga = tuple(None if s is None else np.where(pick, s, 0.0) for s in g)
        gb = tuple(None if s is None else np.where(pick, 0.0, s) for s in g)
        return (ga, gb)

    return _emit(out, (a, b), fwd, vjp)


def _mm(a, b):
    if a is None or b is None:
        return None
    return a @ b


def _matmul_quad(a, b):
    av, a1, a2, a12 = a
    bv, b1, b2, b12 = b
    cross = _add(_mm(a1, b2), _mm(a2, b1))
    return (
        av @ bv,
        _add(_mm(a1, bv), _mm(av, b1)),
        _add(_mm(a2, bv), _mm(av, b2)),
        _add(_add(_mm(a12, bv), _mm(av, b12)), cross),
    )


def _t(x):
    return None if x is None else np.swapaxes(x, -1, -2)


def matmul(a, b) -> HyperDual:
    """Matrix product of 2D hyper-duals (affine layers use ``x @ W.T + b``)."""
    a, b = _wrap(a), _wrap(b)
    qa, qb = a.quad(), b.quad()

    def vjp(g):
        gv, g1, g2, g12 = g
        av, a1, a2, a12 = qa
        bv, b1, b2, b12 = qb
        bvT, b1T, b2T, b12T = _t(bv), _t(b1), _t(b2), _t(b12)
        avT, a1T, a2T, a12T = _t(av), _t(a1), _t(a2), _t(a12)
        da = (
            _add(_add(gv @ bvT, _mm(g1, b1T)), _add(_mm(g2, b2T), _mm(g12, b12T))),
            _add(_mm(g1, bvT), _mm(g12, b2T)),
            _add(_mm(g2, bvT), _mm(g12, b1T)),
            _mm(g12, bvT),
        )
        db = (
            _add(_add(avT @ gv, _mm(a1T, g1)), _add(_mm(a2T, g2), _mm(a12T, g12))),
            _add(_mm(avT, g1), _mm(a2T, g12)),
            _add(_mm(avT, g2), _mm(a1T, g12)),
            _mm(avT, g12),
        )
        # only propagate into slots the operand actually has
        da = tuple(s if (k == 0 or qa[k] is not None) else None for k, s in enumerate(da))
        db = tuple(s if (k == 0 or qb[k] is not None) else None for k, s in enumerate(db))
        return (da, db)

    return _emit(_matmul_quad(qa, qb), (a, b), _matmul_quad, vjp)


def linear(x, weight, bias) -> HyperDual:
    """``x @ weight.T + bias`` for row-batched inputs."""
    w = _wrap(weight)
    return add(matmul(_wrap(x), transpose(w)), bias)


def transpose(a) -> HyperDual:
    a = _wrap(a)

    def fwd(q):
        return tuple(_t(s) for s in q)

    def vjp(g):
        return (tuple(_t(s) for s in g),)

    return _emit(fwd(a.quad()), (a,), fwd, vjp)


def hsum(a, axis=None) -> HyperDual:
    a = _wrap(a)
    shape = a.val.shape

    def fwd(q):
        return tuple(None if s is None else np.sum(s, axis=axis) for s in q)

    def vjp(g):
        def back(s):
            if s is None:
                return None
            if axis is None:
                return np.broadcast_to(s, shape)
            return np.broadcast_to(np.expand_dims(s, axis), shape)

        return (tuple(back(s) for s in g),)

    return _emit(fwd(a.quad()), (a,), fwd, vjp)


def take(a, key) -> HyperDual:
    """Numpy indexing (slices or integer arrays) with scatter-add adjoint."""
    a = _wrap(a)
    shape = a.val.shape

    def fwd(q):
        return tuple(None if s is None else s[key] for s in q)

    def vjp(g):
        def back(s):
            if s is None:
                return None
            z = np.zeros(shape)
            np.add.at(z, key, s)
            return z

        return (tuple(back(s) for s in g),)

    return _emit(fwd(a.quad()), (a,), fwd, vjp)


def reshape(a, shape) -> HyperDual:
    a = _wrap(a)
    old = a.val.shape

    def fwd(q):
        return tuple(None if s is None else np.reshape(s, shape) for s in q)

    def vjp(g):
        return (tuple(None if s is None else np.reshape(s, old) for s in g),)

    return _emit(fwd(a.quad()), (a,), fwd, vjp)


def concat(parts, axis=-1) -> HyperDual:
    parts = [_wrap(p) for p in parts]
    sizes = [p.val.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def fwd(*qs):
        out = []
        for k in range(4):
            slots = [q[k] for q in qs]
            if all(s is None for s in slots):
                out.append(None)
                continue
            full = [np.zeros_like(q[0]) if s is None else s for q, s in zip(qs, slots)]
            out.append(np.concatenate(full, axis=axis))
        return tuple(out)

    quads = [p.quad() for p in parts]

    def vjp(g):
        pieces = [None if s is None else np.split(s, splits, axis=axis) for s in g]
        res = []
        for i, q in enumerate(quads):
            res.append(
                tuple(
                    None if (pieces[k] is None or (k > 0 and q[k] is None)) else pieces[k][i]
                    for k in range(4)
                )
            )
        return tuple(res)

    return _emit(fwd(*quads), tuple(parts), fwd, vjp)
