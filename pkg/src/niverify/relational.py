"""Pair-of-traces symbolic execution over relational stores.

A relational store maps each variable either to one expression shared by
both executions (``Single``) or to one expression per execution
(``Pair``).  While the two traces follow the same control path the engine
steps them together; when a condition splits them, it runs the left trace
to completion with the single-trace engine, then the right, re-pairing the
store after every step, and finally resumes the shared continuation.

Loop budget exhaustion havocs the loop's write set on both sides and
asserts the negated (post-havoc) guards, which soundly restricts attention
to terminated pairs.  How aggressively the havoc keeps variables shared is
pluggable: the plain engine pairs every written variable, the dependence
product (driver) keeps provably-agreeing ones single.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from niverify.absint import AbstractState, a_assign, a_guard, analyze
from niverify.lang import Assign, BExpr, Command, If, Program, SKIP, Seq, Skip, While, assigned_vars
from niverify.redsoundse import ProductState, REDUCE_AT, product_step
from niverify.solver import Solver
from niverify.soundse import (
    Counter,
    LoopEvent,
    PathCapExceeded,
    SEState,
    W0,
    bounded_step,
    counter_apply,
)
from niverify.symcore import (
    PreciseStore,
    SVal,
    SymExpr,
    SymbolFactory,
    SymPath,
    SymStore,
    TRUE,
    Valuation,
    eval_sym,
    eval_path,
    pand,
    pnot,
    sym_eval_bool,
    sym_eval_expr,
)


@dataclass(frozen=True)
class Single:
    expr: SymExpr

    def __str__(self) -> str:
        return f"<{self.expr}>"


@dataclass(frozen=True)
class Pair:
    left: SymExpr
    right: SymExpr

    def __str__(self) -> str:
        return f"<{self.left} | {self.right}>"


RelSymExpr = Single | Pair

RelSymStore = dict[str, RelSymExpr]


@dataclass(frozen=True)
class RelPreciseStore:
    rho2: tuple[tuple[str, RelSymExpr], ...]
    path: SymPath

    @staticmethod
    def of(rho2: RelSymStore, path: SymPath) -> RelPreciseStore:
        return RelPreciseStore(tuple(sorted(rho2.items())), path)

    def store(self) -> RelSymStore:
        return dict(self.rho2)

    def __str__(self) -> str:
        bindings = ", ".join(f"{x} -> {e}" for x, e in self.rho2)
        return f"[{bindings}] | {self.path}"


def proj_expr(i: int, expr: RelSymExpr) -> SymExpr:
    if isinstance(expr, Single):
        return expr.expr
    return expr.left if i == 0 else expr.right


def proj(i: int, rho2: RelSymStore) -> SymStore:
    return {x: proj_expr(i, e) for x, e in rho2.items()}


def pairing(rho0: SymStore, rho1: SymStore, path: SymPath, solver: Solver) -> RelSymStore:
    """Merge two stores, keeping a variable Single when both sides are
    syntactically identical or provably equal under the path."""
    out: RelSymStore = {}
    for x in sorted(rho0):
        e0, e1 = rho0[x], rho1[x]
        if e0 == e1 or solver.prove_equal(e0, e1, path):
            out[x] = Single(e0)
        else:
            out[x] = Pair(e0, e1)
    return out


@dataclass(frozen=True)
class RelGuard:
    left: SymPath
    right: SymPath

    @property
    def single(self) -> bool:
        return self.left == self.right


def rel_eval_expr(expr, rho2: RelSymStore) -> RelSymExpr:
    e0 = sym_eval_expr(expr, proj(0, rho2))
    e1 = sym_eval_expr(expr, proj(1, rho2))
    return Single(e0) if e0 == e1 else Pair(e0, e1)


def rel_eval_bool(bexpr: BExpr, rho2: RelSymStore) -> RelGuard:
    return RelGuard(
        sym_eval_bool(bexpr, proj(0, rho2)), sym_eval_bool(bexpr, proj(1, rho2))
    )


def modif2(rho2: RelSymStore, cmd: Command, factory: SymbolFactory) -> RelSymStore:
    """Plain relational havoc: every written variable becomes an unrelated pair."""
    written = assigned_vars(cmd)
    out: RelSymStore = {}
    for x in sorted(rho2):
        if x in written:
            out[x] = Pair(SVal(factory.fresh(x)), SVal(factory.fresh(x)))
        else:
            out[x] = rho2[x]
    return out


def in_gamma_k2(kappa2: RelPreciseStore, store0, store1, valuation: Valuation) -> bool:
    """Concretization membership for a pair of stores (test oracle)."""
    rho2 = kappa2.store()
    for x, e in rho2.items():
        if store0[x] != eval_sym(proj_expr(0, e), valuation):
            return False
        if store1[x] != eval_sym(proj_expr(1, e), valuation):
            return False
    return eval_path(kappa2.path, valuation)


# ---------------------------------------------------------------------------
# Control and states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Unified:
    cmd: Command


@dataclass(frozen=True)
class Diverged:
    left: Command
    right: Command
    cont: Command


@dataclass(frozen=True)
class RelState:
    control: Unified | Diverged
    kappa2: RelPreciseStore
    a0: AbstractState | None
    a1: AbstractState | None
    counter: Counter
    precise: bool

    @property
    def final(self) -> bool:
        return isinstance(self.control, Unified) and isinstance(self.control.cmd, Skip)


# The havoc hook decides, per written variable, whether both traces can be
# given one shared fresh symbol or must get independent ones.
HavocFn = Callable[
    [RelSymStore, While, SymPath, AbstractState | None, AbstractState | None], RelSymStore
]


@dataclass
class RelEngine:
    """Everything a relational step needs besides the state itself."""

    solver: Solver
    factory: SymbolFactory
    bound: int
    use_intervals: bool
    havoc: HavocFn | None = None
    reduce_at: frozenset[str] = REDUCE_AT

    def havoc_store(self, rho2, loop, path, a0, a1) -> RelSymStore:
        if self.havoc is None:
            return modif2(rho2, loop, self.factory)
        return self.havoc(rho2, loop, path, a0, a1)


def _signed(path: SymPath, guard: RelGuard, s0: bool, s1: bool) -> SymPath:
    b0 = guard.left if s0 else pnot(guard.left)
    b1 = guard.right if s1 else pnot(guard.right)
    path = pand(path, b0)
    if b1 != b0:
        path = pand(path, b1)
    return path


def srse_step(state: RelState, engine: RelEngine) -> list[RelState]:
    if isinstance(state.control, Diverged):
        return _diverged_step(state, engine)
    return _unified_step(state, engine)


def _unified_step(state: RelState, engine: RelEngine) -> list[RelState]:
    solver = engine.solver
    out: list[RelState] = []
    rho2 = state.kappa2.store()
    path = state.kappa2.path

    def guards(bguard: BExpr, s0: bool, s1: bool):
        if not engine.use_intervals:
            return state.a0, state.a1
        g0 = bguard if s0 else bguard.negate()
        g1 = bguard if s1 else bguard.negate()
        return a_guard(g0, state.a0), a_guard(g1, state.a1)

    def alive(a0, a1) -> bool:
        if not engine.use_intervals:
            return True
        return not a0.is_bottom and not a1.is_bottom

    def reduced(kappa2: RelPreciseStore, a0, a1, site: str) -> RelPreciseStore:
        if not engine.use_intervals or site not in engine.reduce_at:
            return kappa2
        path2 = _reduce_path2(kappa2, a0, a1)
        return RelPreciseStore.of(kappa2.store(), path2)

    def walk(cmd: Command, wrap) -> None:
        match cmd:
            case Skip():
                raise ValueError("skip has no successor")
            case Assign(var, expr):
                store = dict(rho2)
                store[var] = rel_eval_expr(expr, rho2)
                a0, a1 = state.a0, state.a1
                if engine.use_intervals:
                    a0, a1 = a_assign(var, expr, a0), a_assign(var, expr, a1)
                out.append(
                    RelState(
                        Unified(wrap(SKIP)),
                        RelPreciseStore.of(store, path),
                        a0,
                        a1,
                        state.counter,
                        state.precise,
                    )
                )
            case If(bguard, then_branch, else_branch):
                beta = rel_eval_bool(bguard, rho2)
                for s0, s1 in ((True, True), (True, False), (False, True), (False, False)):
                    path2 = _signed(path, beta, s0, s1)
                    a0, a1 = guards(bguard, s0, s1)
                    if not alive(a0, a1) or not solver.may_sat(path2):
                        continue
                    kappa2 = reduced(RelPreciseStore.of(rho2, path2), a0, a1, "branch")
                    if s0 == s1:
                        branch = then_branch if s0 else else_branch
                        control = Unified(wrap(branch))
                    else:
                        mine = then_branch if s0 else else_branch
                        other = else_branch if s0 else then_branch
                        control = Diverged(mine, other, wrap(SKIP))
                    out.append(RelState(control, kappa2, a0, a1, state.counter, state.precise))
            case While(bguard, body, active):
                beta = rel_eval_bool(bguard, rho2)
                unrolled = Seq(body, While(bguard, body, active=True))
                continue_ok, continue_counter = counter_apply(
                    LoopEvent("continue", active, cmd, SKIP), state.counter, engine.bound
                )
                continue_combos = ((True, True), (True, False), (False, True)) if continue_ok else ()
                for s0, s1 in continue_combos:
                    path2 = _signed(path, beta, s0, s1)
                    a0, a1 = guards(bguard, s0, s1)
                    if not alive(a0, a1) or not solver.may_sat(path2):
                        continue
                    kappa2 = reduced(RelPreciseStore.of(rho2, path2), a0, a1, "branch")
                    if s0 and s1:
                        control = Unified(wrap(unrolled))
                    elif s0:
                        control = Diverged(unrolled, SKIP, wrap(SKIP))
                    else:
                        control = Diverged(SKIP, unrolled, wrap(SKIP))
                    out.append(RelState(control, kappa2, a0, a1, continue_counter, state.precise))
                if not continue_ok and (
                    solver.may_sat(pand(path, beta.left)) or solver.may_sat(pand(path, beta.right))
                ):
                    # Budget spent and some trace could still iterate:
                    # summarize the rest of the loop on both sides.
                    rho2h = engine.havoc_store(rho2, cmd, path, state.a0, state.a1)
                    betah = rel_eval_bool(bguard, rho2h)
                    path2 = _signed(path, betah, False, False)
                    a0, a1 = state.a0, state.a1
                    if engine.use_intervals:
                        a0, a1 = analyze(cmd, a0), analyze(cmd, a1)
                    if alive(a0, a1) and solver.may_sat(path2):
                        kappa2 = reduced(RelPreciseStore.of(rho2h, path2), a0, a1, "approx")
                        out.append(RelState(Unified(wrap(SKIP)), kappa2, a0, a1, continue_counter, False))
                # Normal exit stays available regardless of the budget.
                exit_ok, exit_counter = counter_apply(
                    LoopEvent("exit", active, cmd, SKIP), state.counter, engine.bound
                )
                path2 = _signed(path, beta, False, False)
                a0, a1 = guards(bguard, False, False)
                if alive(a0, a1) and solver.may_sat(path2):
                    kappa2 = reduced(RelPreciseStore.of(rho2, path2), a0, a1, "branch")
                    out.append(
                        RelState(Unified(wrap(SKIP)), kappa2, a0, a1, exit_counter, state.precise)
                    )
            case Seq(first, second):
                if isinstance(first, Skip):
                    out.append(
                        RelState(
                            Unified(wrap(second)),
                            state.kappa2,
                            state.a0,
                            state.a1,
                            state.counter,
                            state.precise,
                        )
                    )
                else:
                    walk(first, lambda c, _wrap=wrap, _second=second: _wrap(Seq(c, _second)))
            case _:
                raise ValueError(f"unknown command {cmd!r}")

    walk(state.control.cmd, lambda c: c)
    return out


def _reduce_path2(kappa2: RelPreciseStore, a0: AbstractState, a1: AbstractState) -> SymPath:
    """Reduction over both projections of a relational store."""
    from niverify.redsoundse import reduction

    rho2 = kappa2.store()
    step0, _ = reduction(PreciseStore.of(proj(0, rho2), kappa2.path), a0)
    step1, _ = reduction(PreciseStore.of(proj(1, rho2), step0.path), a1)
    return step1.path


def _diverged_step(state: RelState, engine: RelEngine) -> list[RelState]:
    control = state.control
    assert isinstance(control, Diverged)
    if isinstance(control.left, Skip) and isinstance(control.right, Skip):
        return [
            RelState(
                Unified(control.cont), state.kappa2, state.a0, state.a1, state.counter, state.precise
            )
        ]
    side = 0 if not isinstance(control.left, Skip) else 1
    rho2 = state.kappa2.store()
    own = proj(side, rho2)
    other = proj(1 - side, rho2)
    cmd = control.left if side == 0 else control.right
    astate = state.a0 if side == 0 else state.a1

    successors: list[tuple[Command, PreciseStore, Counter, bool, AbstractState | None]] = []
    if engine.use_intervals:
        sub = ProductState(cmd, PreciseStore.of(own, state.kappa2.path), astate, state.counter, state.precise)
        for nxt in product_step(sub, engine.bound, engine.solver, engine.factory, engine.reduce_at):
            successors.append((nxt.cmd, nxt.kappa, nxt.counter, nxt.precise, nxt.astate))
    else:
        sub = SEState(cmd, PreciseStore.of(own, state.kappa2.path), state.counter, state.precise)
        for nxt in bounded_step(sub, engine.bound, engine.solver, engine.factory):
            successors.append((nxt.cmd, nxt.kappa, nxt.counter, nxt.precise, None))

    out: list[RelState] = []
    for cmd2, kappa2, counter2, precise2, astate2 in successors:
        own2 = kappa2.store()
        if side == 0:
            paired = pairing(own2, other, kappa2.path, engine.solver)
            control2 = Diverged(cmd2, control.right, control.cont)
            a0, a1 = astate2, state.a1
        else:
            paired = pairing(other, own2, kappa2.path, engine.solver)
            control2 = Diverged(control.left, cmd2, control.cont)
            a0, a1 = state.a0, astate2
        out.append(
            RelState(
                control2,
                RelPreciseStore.of(paired, kappa2.path),
                a0,
                a1,
                counter2,
                precise2,
            )
        )
    return out


def srse_explore(
    program: Program,
    rho2_0: RelSymStore,
    engine: RelEngine,
    path_cap: int,
) -> list[tuple[RelPreciseStore, bool]]:
    """All final relational precise stores with their precision flags."""
    a_top = AbstractState.top(program.all_vars) if engine.use_intervals else None
    start = RelState(
        Unified(program.body),
        RelPreciseStore.of(rho2_0, TRUE),
        a_top,
        a_top,
        W0,
        True,
    )
    finals: list[tuple[RelPreciseStore, bool]] = []
    stack = [start]
    expanded = 0
    while stack:
        state = stack.pop()
        if state.final:
            finals.append((state.kappa2, state.precise))
            continue
        expanded += 1
        if expanded > path_cap:
            raise PathCapExceeded(f"more than {path_cap} states expanded")
        stack.extend(reversed(srse_step(state, engine)))
    return finals
