"""Reduced product of bounded symbolic execution with the interval domain.

A product state carries both a precise store and an abstract state; a step
advances them in lockstep along the same syntactic branch, and a branch
survives only if both sides allow it (path may-satisfiable and guarded
abstract state non-bottom).  The reduction operator injects the abstract
constraints into the symbolic path, substituting each program variable by
its current symbolic expression; by default it runs lazily, at branch
points and at loop-summarization steps.
"""

from __future__ import annotations

from dataclasses import dataclass

from niverify.absint import AbstractState, a_assign, a_guard, analyze, constr
from niverify.lang import Assign, Command, If, Program, SKIP, Seq, Skip, While
from niverify.solver import Solver
from niverify.soundse import (
    Counter,
    LoopEvent,
    PathCapExceeded,
    W0,
    counter_apply,
    modif,
)
from niverify.symcore import (
    PAnd,
    PreciseStore,
    SymbolFactory,
    SymPath,
    pand,
    pnot,
    sym_eval_bool,
    sym_eval_expr,
)

REDUCE_AT = frozenset({"branch", "approx"})


@dataclass(frozen=True)
class ProductState:
    cmd: Command
    kappa: PreciseStore
    astate: AbstractState
    counter: Counter
    precise: bool


def _conjuncts(path: SymPath) -> set[SymPath]:
    out: set[SymPath] = set()
    stack = [path]
    while stack:
        node = stack.pop()
        if isinstance(node, PAnd):
            stack.extend((node.left, node.right))
        else:
            out.add(node)
    return out


def reduction(kappa: PreciseStore, astate: AbstractState) -> tuple[PreciseStore, AbstractState]:
    """Strengthen the path with the abstract constraints; same concretization.

    Each bound constraint over a program variable is rephrased over that
    variable's current symbolic expression.  Conjuncts already present are
    not repeated, keeping paths small and runs deterministic.
    """
    rho = kappa.store()
    path = kappa.path
    present = _conjuncts(path)
    for cmp in constr(astate):
        conjunct = sym_eval_bool(cmp, rho)
        if conjunct not in present:
            path = pand(path, conjunct)
            present.add(conjunct)
    return PreciseStore.of(rho, path), astate


def _maybe_reduce(kappa: PreciseStore, astate: AbstractState, site: str, policy) -> PreciseStore:
    if site in policy and not astate.is_bottom:
        kappa, _ = reduction(kappa, astate)
    return kappa


def product_step(
    state: ProductState,
    k: int,
    solver: Solver,
    factory: SymbolFactory,
    reduce_at: frozenset[str] = REDUCE_AT,
) -> list[ProductState]:
    """Lockstep successors; dead on either side means pruned."""
    out: list[ProductState] = []
    rho = state.kappa.store()

    def emit(cmd: Command, kappa: PreciseStore, astate: AbstractState, counter, precise):
        if not astate.is_bottom:
            out.append(ProductState(cmd, kappa, astate, counter, precise))

    def walk(cmd: Command, wrap) -> None:
        match cmd:
            case Skip():
                raise ValueError("skip has no successor")
            case Assign(var, expr):
                store = dict(rho)
                store[var] = sym_eval_expr(expr, rho)
                kappa2 = PreciseStore.of(store, state.kappa.path)
                emit(wrap(SKIP), kappa2, a_assign(var, expr, state.astate), state.counter, state.precise)
            case If(guard, then_branch, else_branch):
                beta = sym_eval_bool(guard, rho)
                cases = (
                    (then_branch, beta, guard),
                    (else_branch, pnot(beta), guard.negate()),
                )
                for branch, sign, bguard in cases:
                    path2 = pand(state.kappa.path, sign)
                    astate2 = a_guard(bguard, state.astate)
                    if astate2.is_bottom or not solver.may_sat(path2):
                        continue
                    kappa2 = PreciseStore.of(rho, path2)
                    kappa2 = _maybe_reduce(kappa2, astate2, "branch", reduce_at)
                    emit(wrap(branch), kappa2, astate2, state.counter, state.precise)
            case While(guard, body, active):
                beta = sym_eval_bool(guard, rho)
                unrolled = Seq(body, While(guard, body, active=True))
                path_t = pand(state.kappa.path, beta)
                astate_t = a_guard(guard, state.astate)
                if not astate_t.is_bottom and solver.may_sat(path_t):
                    ok, counter2 = counter_apply(
                        LoopEvent("continue", active, cmd, SKIP), state.counter, k
                    )
                    if ok:
                        kappa2 = PreciseStore.of(rho, path_t)
                        kappa2 = _maybe_reduce(kappa2, astate_t, "branch", reduce_at)
                        emit(wrap(unrolled), kappa2, astate_t, counter2, state.precise)
                    else:
                        # Summarize the remaining iterations: havoc the write
                        # set, analyze the loop abstractly, then reduce.
                        rho2 = modif(rho, cmd, factory)
                        astate2 = analyze(cmd, state.astate)
                        if not astate2.is_bottom:
                            kappa2 = PreciseStore.of(rho2, state.kappa.path)
                            kappa2 = _maybe_reduce(kappa2, astate2, "approx", reduce_at)
                            emit(wrap(SKIP), kappa2, astate2, counter2, False)
                path_f = pand(state.kappa.path, pnot(beta))
                astate_f = a_guard(guard.negate(), state.astate)
                if not astate_f.is_bottom and solver.may_sat(path_f):
                    ok, counter2 = counter_apply(
                        LoopEvent("exit", active, cmd, SKIP), state.counter, k
                    )
                    kappa2 = PreciseStore.of(rho, path_f)
                    kappa2 = _maybe_reduce(kappa2, astate_f, "branch", reduce_at)
                    emit(wrap(SKIP), kappa2, astate_f, counter2, state.precise)
            case Seq(first, second):
                if isinstance(first, Skip):
                    emit(wrap(second), state.kappa, state.astate, state.counter, state.precise)
                else:
                    walk(first, lambda c, _wrap=wrap, _second=second: _wrap(Seq(c, _second)))
            case _:
                raise ValueError(f"unknown command {cmd!r}")

    walk(state.cmd, lambda c: c)
    return out


def product_explore(
    program: Program,
    kappa0: PreciseStore,
    astate0: AbstractState,
    k: int,
    path_cap: int,
    solver: Solver,
    factory: SymbolFactory,
    reduce_at: frozenset[str] = REDUCE_AT,
) -> list[tuple[PreciseStore, AbstractState, bool]]:
    """All final product states, depth first, true branch first."""
    if astate0.is_bottom:
        return []
    finals: list[tuple[PreciseStore, AbstractState, bool]] = []
    stack = [ProductState(program.body, kappa0, astate0, W0, True)]
    expanded = 0
    while stack:
        state = stack.pop()
        if isinstance(state.cmd, Skip):
            finals.append((state.kappa, state.astate, state.precise))
            continue
        expanded += 1
        if expanded > path_cap:
            raise PathCapExceeded(f"more than {path_cap} states expanded")
        stack.extend(reversed(product_step(state, k, solver, factory, reduce_at)))
    return finals
