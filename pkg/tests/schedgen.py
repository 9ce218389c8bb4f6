"""Reference schedule writers shared by the tests.

Schedules are built op by op so they are valid by construction: writes take
the next version, reads pick the newest version (usually) or any older one,
and a transaction stops issuing operations once it has terminated.
"""
import random

from hypothesis import strategies as st

from popcheck.pops import build_graph
from popcheck.schedule import Operation, OpKind, Schedule

OBJECTS = "xyz"


def random_schedule(rng: random.Random, max_txns=5, max_objs=3, max_ops=14,
                    terminal_p=0.15, abort_p=0.25, stale_read_p=0.2) -> Schedule:
    n_txn = rng.randint(1, max_txns)
    objs = OBJECTS[:rng.randint(1, max_objs)]
    latest = {o: 0 for o in objs}
    live = list(range(1, n_txn + 1))
    ops = []
    while live and len(ops) < max_ops:
        t = rng.choice(live)
        if ops and rng.random() < terminal_p:
            kind = OpKind.ABORT if rng.random() < abort_p else OpKind.COMMIT
            ops.append(Operation(kind, t))
            live.remove(t)
            continue
        o = rng.choice(objs)
        if rng.random() < 0.5:
            latest[o] += 1
            ops.append(Operation(OpKind.WRITE, t, o, latest[o]))
        else:
            v = rng.randint(0, latest[o]) if rng.random() < stale_read_p else latest[o]
            ops.append(Operation(OpKind.READ, t, o, v))
    return Schedule(tuple(ops))


def random_cyclic(rng: random.Random, count: int, **kw):
    """Yield ``count`` schedules whose POP graph has a cycle."""
    from popcheck.cycles import find_cycle

    made = 0
    while made < count:
        s = random_schedule(rng, **kw)
        c = find_cycle(build_graph(s))
        if c is not None:
            made += 1
            yield s, c


@st.composite
def schedules(draw, max_txns=4, max_objs=3, max_ops=10, aborts=True):
    n_txn = draw(st.integers(1, max_txns))
    objs = OBJECTS[:draw(st.integers(1, max_objs))]
    latest = {o: 0 for o in objs}
    live = list(range(1, n_txn + 1))
    ops = []
    n = draw(st.integers(0, max_ops))
    while live and len(ops) < n:
        t = draw(st.sampled_from(live))
        choice = draw(st.sampled_from("RRWWWT"))
        if choice == "T":
            kind = draw(st.sampled_from([OpKind.COMMIT, OpKind.ABORT] if aborts else [OpKind.COMMIT]))
            ops.append(Operation(kind, t))
            live.remove(t)
        elif choice == "W":
            o = draw(st.sampled_from(objs))
            latest[o] += 1
            ops.append(Operation(OpKind.WRITE, t, o, latest[o]))
        else:
            o = draw(st.sampled_from(objs))
            ops.append(Operation(OpKind.READ, t, o, draw(st.integers(0, latest[o]))))
    return Schedule(tuple(ops))


def has_cycle_closure(edges, vertices) -> bool:
    """Cycle oracle: Warshall transitive closure, cyclic iff some v reaches v."""
    vs = sorted(vertices)
    idx = {v: i for i, v in enumerate(vs)}
    n = len(vs)
    reach = [[False] * n for _ in range(n)]
    for a, b in edges:
        reach[idx[a]][idx[b]] = True
    for k in range(n):
        rk = reach[k]
        for i in range(n):
            if reach[i][k]:
                ri = reach[i]
                for j in range(n):
                    if rk[j]:
                        ri[j] = True
    return any(reach[i][i] for i in range(n))
