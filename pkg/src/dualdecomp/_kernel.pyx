# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot path: one dual-oracle sweep over a flattened instance.

Supports instances whose objectives are all diagonal quadratics, optionally
with one log term (the closed-form inner solves).  Semantics mirror
``dualdecomp.oracle.dual_value_grad`` with the same accumulation order
(ascending block id per agent, ascending agent id per block); tiny
floating-point deviations from the numpy path are possible because scalar
loops group additions differently than BLAS matvecs.
"""

from libc.math cimport log, sqrt


cdef class KernelOracle:
    cdef public long M, Mbar, n, p, q
    cdef long[::1] z_off, nu_off, mu_off
    cdef long[::1] a_ptr, a_blk, a_aoff, a_coff
    cdef long[::1] b_ptr, b_agt, b_aoff, b_coff
    cdef long[::1] logpos
    cdef int[::1] kind
    cdef double[::1] qdiag, zref, lo, hi, gamma, beta
    cdef double[::1] adata, cdata, b, c
    cdef unsigned char[::1] cfinite
    cdef double[::1] pricebuf

    def __init__(self, arrays):
        self.M = arrays["M"]
        self.Mbar = arrays["Mbar"]
        self.n = arrays["n"]
        self.p = arrays["p"]
        self.q = arrays["q"]
        self.z_off = arrays["z_off"]
        self.nu_off = arrays["nu_off"]
        self.mu_off = arrays["mu_off"]
        self.a_ptr = arrays["a_ptr"]
        self.a_blk = arrays["a_blk"]
        self.a_aoff = arrays["a_aoff"]
        self.a_coff = arrays["a_coff"]
        self.b_ptr = arrays["b_ptr"]
        self.b_agt = arrays["b_agt"]
        self.b_aoff = arrays["b_aoff"]
        self.b_coff = arrays["b_coff"]
        self.logpos = arrays["logpos"]
        self.kind = arrays["kind"]
        self.qdiag = arrays["qdiag"]
        self.zref = arrays["zref"]
        self.lo = arrays["lo"]
        self.hi = arrays["hi"]
        self.gamma = arrays["gamma"]
        self.beta = arrays["beta"]
        self.adata = arrays["adata"]
        self.cdata = arrays["cdata"]
        self.b = arrays["b"]
        self.c = arrays["c"]
        self.cfinite = arrays["cfinite"]
        self.pricebuf = arrays["pricebuf"]

    cpdef double fvalue(self, double[::1] z):
        """Total objective value at z."""
        cdef long i, t, n0, n1
        cdef double acc = 0.0, dz
        for i in range(self.M):
            n0 = self.z_off[i]
            n1 = self.z_off[i + 1]
            for t in range(n0, n1):
                dz = z[t] - self.zref[t]
                acc += 0.5 * self.qdiag[t] * dz * dz
            if self.kind[i] == 1:
                acc -= self.gamma[i] * log(self.beta[i] + z[self.logpos[i]])
        return acc

    cdef double _quadlog_root(self, double pcoef, double pref,
                              double gam, double bet, double a) except? -1e308:
        cdef double B = pcoef * (bet - pref) + a
        cdef double C = a * bet - pcoef * pref * bet - gam
        cdef double disc = B * B - 4.0 * pcoef * C
        cdef double root
        if disc < 0.0:
            raise ValueError("no root in domain: negative discriminant")
        if B <= 0.0:
            root = (-B + sqrt(disc)) / (2.0 * pcoef)
        else:
            root = (2.0 * C) / (-B - sqrt(disc))
        if not root > -bet:
            raise ValueError("no root in domain: root below -beta")
        return root

    cpdef double eval(self, double[::1] nu, double[::1] mu,
                      double[::1] z, double[::1] gnu, double[::1] gmu) except? -1e308:
        """One oracle sweep: fills z and the gradient, returns the dual value.

        Assumes nu/mu already lie in the effective dual domain (mu >= 0 and
        zero on vacuous rows); the caller projects.
        """
        cdef long i, j, e, r, t, n0, ni, p0, pj, q0, qj, ao, co, gi
        cdef double coef, x, dz, fval = 0.0, d

        # Primal sweep: price, inner solve, objective value.
        for i in range(self.M):
            n0 = self.z_off[i]
            ni = self.z_off[i + 1] - n0
            for t in range(ni):
                self.pricebuf[t] = 0.0
            for e in range(self.a_ptr[i], self.a_ptr[i + 1]):
                j = self.a_blk[e]
                p0 = self.nu_off[j]
                pj = self.nu_off[j + 1] - p0
                q0 = self.mu_off[j]
                qj = self.mu_off[j + 1] - q0
                ao = self.a_aoff[e]
                co = self.a_coff[e]
                for r in range(pj):
                    coef = nu[p0 + r]
                    for t in range(ni):
                        self.pricebuf[t] += self.adata[ao + r * ni + t] * coef
                for r in range(qj):
                    coef = mu[q0 + r]
                    for t in range(ni):
                        self.pricebuf[t] += self.cdata[co + r * ni + t] * coef
            gi = self.logpos[i]
            for t in range(ni):
                x = self.zref[n0 + t] - self.pricebuf[t] / self.qdiag[n0 + t]
                if self.kind[i] == 1 and n0 + t == gi:
                    x = self._quadlog_root(
                        self.qdiag[n0 + t], self.zref[n0 + t],
                        self.gamma[i], self.beta[i], self.pricebuf[t])
                if x < self.lo[n0 + t]:
                    x = self.lo[n0 + t]
                elif x > self.hi[n0 + t]:
                    x = self.hi[n0 + t]
                z[n0 + t] = x
                dz = x - self.zref[n0 + t]
                fval += 0.5 * self.qdiag[n0 + t] * dz * dz
            if self.kind[i] == 1:
                fval -= self.gamma[i] * log(self.beta[i] + z[gi])

        # Dual sweep: residuals per block, ascending agent id.
        for t in range(self.p):
            gnu[t] = 0.0
        for t in range(self.q):
            gmu[t] = 0.0
        for j in range(self.Mbar):
            p0 = self.nu_off[j]
            pj = self.nu_off[j + 1] - p0
            q0 = self.mu_off[j]
            qj = self.mu_off[j + 1] - q0
            for e in range(self.b_ptr[j], self.b_ptr[j + 1]):
                i = self.b_agt[e]
                n0 = self.z_off[i]
                ni = self.z_off[i + 1] - n0
                ao = self.b_aoff[e]
                co = self.b_coff[e]
                for r in range(pj):
                    coef = 0.0
                    for t in range(ni):
                        coef += self.adata[ao + r * ni + t] * z[n0 + t]
                    gnu[p0 + r] += coef
                for r in range(qj):
                    coef = 0.0
                    for t in range(ni):
                        coef += self.cdata[co + r * ni + t] * z[n0 + t]
                    gmu[q0 + r] += coef

        d = fval
        for t in range(self.p):
            gnu[t] -= self.b[t]
            d += nu[t] * gnu[t]
        for t in range(self.q):
            if self.cfinite[t]:
                gmu[t] -= self.c[t]
                d += mu[t] * gmu[t]
            else:
                gmu[t] = 0.0
        return d
