# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled search kernels: exact top-N selection and brute force.

Same contract as the pure-Python twins in ``_kernels`` — see that module
for the ranking and bounding rules. These versions run on fixed-width
64-bit integers; the solver front end verifies value bounds before
dispatching here and falls back to the pure kernels otherwise.
"""

from libc.stdlib cimport free, malloc
from libc.string cimport memcpy

ctypedef long long i64

OP_PUSH = 0
OP_SUM = 1
OP_MAX = 2

BRUTE_FORCE_LIMIT = 1_000_000


cdef struct Tables:
    int k                 # number of functions
    int maxv              # widest variant row
    int n_ops
    int cap               # result capacity (n)
    int* op
    int* opa
    i64* opb
    int* sizes
    i64* lat              # k * maxv
    i64* area             # k * maxv
    i64* min_lat
    i64* suffix_area      # k + 1
    i64* stack            # program stack scratch
    int* choice
    # bounded best list, sorted ascending by (value, area, choice lex)
    int best_len
    i64* best_v
    i64* best_a
    int* best_c           # cap * k


cdef i64 _evaluate(Tables* t, int assigned) nogil:
    cdef int i, j, sp = 0
    cdef int a
    cdef i64 acc
    for i in range(t.n_ops):
        if t.op[i] == 0:  # PUSH
            a = t.opa[i]
            if a < assigned:
                t.stack[sp] = t.opb[i] * t.lat[a * t.maxv + t.choice[a]]
            else:
                t.stack[sp] = t.opb[i] * t.min_lat[a]
            sp += 1
        elif t.op[i] == 1:  # SUM
            a = t.opa[i]
            acc = 0
            for j in range(sp - a, sp):
                acc += t.stack[j]
            sp -= a
            t.stack[sp] = acc
            sp += 1
        else:  # MAX
            a = t.opa[i]
            acc = t.stack[sp - a]
            for j in range(sp - a + 1, sp):
                if t.stack[j] > acc:
                    acc = t.stack[j]
            sp -= a
            t.stack[sp] = acc
            sp += 1
    if sp == 0:
        return 0
    return t.stack[0]


cdef int _entry_less(Tables* t, i64 v, i64 a, int* choice, int idx) nogil:
    """Is (v, a, choice) < best[idx] in the (value, area, lex) order?"""
    cdef int j
    if v != t.best_v[idx]:
        return v < t.best_v[idx]
    if a != t.best_a[idx]:
        return a < t.best_a[idx]
    for j in range(t.k):
        if choice[j] != t.best_c[idx * t.k + j]:
            return choice[j] < t.best_c[idx * t.k + j]
    return 0


cdef void _insert(Tables* t, i64 v, i64 a, int* choice) nogil:
    cdef int lo = 0, hi = t.best_len, mid, j
    while lo < hi:
        mid = (lo + hi) / 2
        if _entry_less(t, v, a, choice, mid):
            hi = mid
        else:
            lo = mid + 1
    if lo >= t.cap:
        return
    cdef int last = t.best_len if t.best_len < t.cap else t.cap - 1
    for j in range(last, lo, -1):
        t.best_v[j] = t.best_v[j - 1]
        t.best_a[j] = t.best_a[j - 1]
        memcpy(t.best_c + j * t.k, t.best_c + (j - 1) * t.k, t.k * sizeof(int))
    t.best_v[lo] = v
    t.best_a[lo] = a
    for j in range(t.k):
        t.best_c[lo * t.k + j] = choice[j]
    if t.best_len < t.cap:
        t.best_len += 1


cdef Tables* _build(ops, lats, areas, int n) except NULL:
    cdef int k = len(lats)
    cdef int maxv = 1
    cdef int i, v
    for row in lats:
        if len(row) > maxv:
            maxv = len(row)
    cdef int n_ops = len(ops)
    cdef Tables* t = <Tables*> malloc(sizeof(Tables))
    if t == NULL:
        raise MemoryError()
    t.k = k
    t.maxv = maxv
    t.n_ops = n_ops
    t.cap = n
    t.best_len = 0
    t.op = <int*> malloc(max(n_ops, 1) * sizeof(int))
    t.opa = <int*> malloc(max(n_ops, 1) * sizeof(int))
    t.opb = <i64*> malloc(max(n_ops, 1) * sizeof(i64))
    t.sizes = <int*> malloc(max(k, 1) * sizeof(int))
    t.lat = <i64*> malloc(max(k * maxv, 1) * sizeof(i64))
    t.area = <i64*> malloc(max(k * maxv, 1) * sizeof(i64))
    t.min_lat = <i64*> malloc(max(k, 1) * sizeof(i64))
    t.suffix_area = <i64*> malloc((k + 1) * sizeof(i64))
    t.stack = <i64*> malloc(max(n_ops, 1) * sizeof(i64))
    t.choice = <int*> malloc(max(k, 1) * sizeof(int))
    t.best_v = <i64*> malloc(max(n, 1) * sizeof(i64))
    t.best_a = <i64*> malloc(max(n, 1) * sizeof(i64))
    t.best_c = <int*> malloc(max(n * k, 1) * sizeof(int))
    for i in range(n_ops):
        t.op[i] = ops[i][0]
        t.opa[i] = ops[i][1]
        t.opb[i] = ops[i][2]
    cdef i64 lo
    for i in range(k):
        t.sizes[i] = len(lats[i])
        lo = lats[i][0]
        for v in range(len(lats[i])):
            t.lat[i * maxv + v] = lats[i][v]
            t.area[i * maxv + v] = areas[i][v]
            if lats[i][v] < lo:
                lo = lats[i][v]
        t.min_lat[i] = lo
    t.suffix_area[k] = 0
    for i in range(k - 1, -1, -1):
        lo = t.area[i * maxv]
        for v in range(1, t.sizes[i]):
            if t.area[i * maxv + v] < lo:
                lo = t.area[i * maxv + v]
        t.suffix_area[i] = t.suffix_area[i + 1] + lo
    return t


cdef void _free_tables(Tables* t) nogil:
    free(t.op); free(t.opa); free(t.opb); free(t.sizes)
    free(t.lat); free(t.area); free(t.min_lat); free(t.suffix_area)
    free(t.stack); free(t.choice)
    free(t.best_v); free(t.best_a); free(t.best_c)
    free(t)


cdef list _results(Tables* t):
    out = []
    cdef int i, j
    for i in range(t.best_len):
        out.append(
            (
                t.best_v[i],
                t.best_a[i],
                tuple(t.best_c[i * t.k + j] for j in range(t.k)),
            )
        )
    return out


def solve_top_n(ops, lats, areas, budget, int n):
    """Exact top-``n`` feasible choices by (objective, area, choice)."""
    if n <= 0:
        return []
    cdef Tables* t = _build(ops, lats, areas, n)
    cdef i64 bud = budget
    cdef int k = t.k
    cdef int depth
    cdef i64 a
    cdef int* cursor = <int*> malloc(max(k, 1) * sizeof(int))
    cdef i64* area_acc = <i64*> malloc((k + 1) * sizeof(i64))
    if cursor == NULL or area_acc == NULL:
        _free_tables(t)
        raise MemoryError()
    try:
        if k == 0:
            if 0 <= bud:
                _insert(t, _evaluate(t, 0), 0, t.choice)
            return _results(t)
        depth = 0
        cursor[0] = -1
        area_acc[0] = 0
        while True:
            cursor[depth] += 1
            if cursor[depth] >= t.sizes[depth]:
                depth -= 1
                if depth < 0:
                    break
                continue
            t.choice[depth] = cursor[depth]
            a = area_acc[depth] + t.area[depth * t.maxv + cursor[depth]]
            if a + t.suffix_area[depth + 1] > bud:
                continue
            if t.best_len == t.cap:
                if _evaluate(t, depth + 1) > t.best_v[t.best_len - 1]:
                    continue
            if depth == k - 1:
                _insert(t, _evaluate(t, k), a, t.choice)
                continue
            depth += 1
            area_acc[depth] = a
            cursor[depth] = -1
        return _results(t)
    finally:
        free(cursor)
        free(area_acc)
        _free_tables(t)


def brute_force(ops, lats, areas, budget, int n):
    """Full enumeration via the same bounded result list."""
    if n <= 0:
        return []
    space = 1
    for row in lats:
        space *= len(row)
        if space > BRUTE_FORCE_LIMIT:
            raise ValueError(
                f"search space exceeds brute-force limit ({BRUTE_FORCE_LIMIT})"
            )
    cdef Tables* t = _build(ops, lats, areas, n)
    cdef i64 bud = budget
    cdef int k = t.k
    cdef int depth
    cdef i64 a
    try:
        if k == 0:
            if 0 <= bud:
                _insert(t, _evaluate(t, 0), 0, t.choice)
            return _results(t)
        for i in range(k):
            t.choice[i] = 0
        while True:
            a = 0
            for i in range(k):
                a += t.area[i * t.maxv + t.choice[i]]
            if a <= bud:
                _insert(t, _evaluate(t, k), a, t.choice)
            depth = k - 1
            while depth >= 0:
                t.choice[depth] += 1
                if t.choice[depth] < t.sizes[depth]:
                    break
                t.choice[depth] = 0
                depth -= 1
            if depth < 0:
                break
        return _results(t)
    finally:
        _free_tables(t)
