# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled planning kernels. Mirrors ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef int DX[4]
cdef int DY[4]
DX[:] = [0, 0, 1, -1]
DY[:] = [1, -1, 0, 0]

ctypedef long long i64


cdef inline void _push(i64* heap, Py_ssize_t* size, i64 key) nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if heap[parent] <= key:
            break
        heap[i] = heap[parent]
        i = parent
    heap[i] = key


cdef inline i64 _pop(i64* heap, Py_ssize_t* size) nogil:
    cdef i64 top = heap[0]
    cdef Py_ssize_t n, i, child
    cdef i64 last
    size[0] -= 1
    n = size[0]
    if n == 0:
        return top
    last = heap[n]
    i = 0
    while True:
        child = 2 * i + 1
        if child >= n:
            break
        if child + 1 < n and heap[child + 1] < heap[child]:
            child += 1
        if heap[child] >= last:
            break
        heap[i] = heap[child]
        i = child
    heap[i] = last
    return top


def cost_to_go(const unsigned char[::1] mask, int width, int height, int goal, int penalty):
    """Backward Dijkstra from ``goal``; heap ties pop the lowest cell index first."""
    cdef Py_ssize_t n = width * height
    cdef cnp.ndarray[i64, ndim=1] dist_arr = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    cdef i64[::1] dist = dist_arr
    cdef i64* heap = <i64*> malloc(sizeof(i64) * (4 * n + 4))
    cdef unsigned char* done = <unsigned char*> malloc(n)
    cdef Py_ssize_t size = 0
    cdef i64 key, d, nd
    cdef int v, u, vx, vy, ux, uy, k, ev
    if heap == NULL or done == NULL:
        free(heap)
        free(done)
        raise MemoryError()
    with nogil:
        for v in range(n):
            done[v] = 0
        dist[goal] = 0
        _push(heap, &size, goal)
        while size > 0:
            key = _pop(heap, &size)
            d = key // n
            v = <int>(key % n)
            if done[v]:
                continue
            done[v] = 1
            if v == goal:
                ev = 0
            elif mask[v]:
                ev = penalty
            else:
                ev = 1
            nd = d + ev
            vx = v % width
            vy = v // width
            for k in range(4):
                ux = vx + DX[k]
                uy = vy + DY[k]
                if 0 <= ux < width and 0 <= uy < height:
                    u = uy * width + ux
                    if not done[u] and nd < dist[u]:
                        dist[u] = nd
                        _push(heap, &size, nd * n + u)
    free(heap)
    free(done)
    return dist_arr


cdef inline int _greedy(const i64[::1] ctg, const unsigned char[::1] mask, int width, int height,
                        int goal, int penalty, int s, int* nxt_out) nogil:
    cdef int sx = s % width
    cdef int sy = s // width
    cdef int k, nx, ny, nxt, enter
    for k in range(4):
        nx = sx + DX[k]
        ny = sy + DY[k]
        if 0 <= nx < width and 0 <= ny < height:
            nxt = ny * width + nx
            if nxt == goal:
                enter = 0
            elif mask[nxt]:
                enter = penalty
            else:
                enter = 1
            if enter + ctg[nxt] == ctg[s]:
                nxt_out[0] = nxt
                return k
    return -1


def rollout(const unsigned char[::1] mask, int width, int height, int start, int goal,
            const i64[::1] novice_ctg, const i64[::1] expert_ctg, int penalty, int mode,
            int trigger_run=2):
    """Follow a cost-to-go table; see ``_kernels_py.rollout``."""
    cdef list states = [start]
    cdef list actions = []
    cdef bint expert = mode == 0
    cdef int t_star = -1
    cdef int run = 1 if mask[start] else 0
    cdef int s = start
    cdef int k, nxt = 0
    while s != goal:
        if expert:
            k = _greedy(expert_ctg, mask, width, height, goal, penalty, s, &nxt)
        else:
            k = _greedy(novice_ctg, mask, width, height, goal, 1, s, &nxt)
        if k < 0:
            raise RuntimeError("cost-to-go table is inconsistent")
        s = nxt
        actions.append(k)
        states.append(s)
        if mask[s]:
            run += 1
        else:
            run = 0
        if mode == 2 and not expert and run >= trigger_run:
            expert = True
            t_star = len(states) - 1
    return states, actions, t_star
