# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Stack-machine evaluator for compiled expression tapes.

Semantics must match killingflag._tape._py_eval_tape exactly, including
the domain-error codes: 1 division by zero (or 0 to a negative power),
2 log domain, 3 sqrt domain.
"""

from libc.math cimport sin, cos, exp, log, sqrt, pow


def eval_tape(int[::1] ops, int[::1] args, double[::1] consts,
              double[::1] point, double[::1] stack):
    cdef Py_ssize_t n = ops.shape[0]
    cdef Py_ssize_t i, sp = 0
    cdef int op, a
    cdef double x
    for i in range(n):
        op = ops[i]
        a = args[i]
        if op == 0:      # CONST
            stack[sp] = consts[a]
            sp += 1
        elif op == 1:    # VAR
            stack[sp] = point[a]
            sp += 1
        elif op == 2:    # ADD
            sp -= 1
            stack[sp - 1] += stack[sp]
        elif op == 3:    # SUB
            sp -= 1
            stack[sp - 1] -= stack[sp]
        elif op == 4:    # MUL
            sp -= 1
            stack[sp - 1] *= stack[sp]
        elif op == 5:    # DIV
            sp -= 1
            if stack[sp] == 0.0:
                return 0.0, 1
            stack[sp - 1] /= stack[sp]
        elif op == 6:    # NEG
            stack[sp - 1] = -stack[sp - 1]
        elif op == 7:    # POW (integer exponent in args)
            x = stack[sp - 1]
            if x == 0.0 and a < 0:
                return 0.0, 1
            stack[sp - 1] = pow(x, <double> a)
        elif op == 8:    # SIN
            stack[sp - 1] = sin(stack[sp - 1])
        elif op == 9:    # COS
            stack[sp - 1] = cos(stack[sp - 1])
        elif op == 10:   # EXP
            stack[sp - 1] = exp(stack[sp - 1])
        elif op == 11:   # LOG
            x = stack[sp - 1]
            if x <= 0.0:
                return 0.0, 2
            stack[sp - 1] = log(x)
        elif op == 12:   # SQRT
            x = stack[sp - 1]
            if x < 0.0:
                return 0.0, 3
            stack[sp - 1] = sqrt(x)
    return stack[0], 0
