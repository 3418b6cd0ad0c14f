import math

import numpy as np
import pytest


def expm_series(a, terms=30):
    """Truncated power series, the independent oracle for matrix exponentials."""
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def ssp_matrix(lam):
    return np.array([[0.0, 1.0], [lam * lam, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_argmin(objective, constraints, lo, hi, n=201, boundary=True, refine=1):
    """Brute force over an ``n x n`` grid of the box ``[lo, hi]``.

    With ``boundary`` the candidate set also holds ``20 n`` samples along every
    constraint line inside the box, every pairwise line intersection and
    every point where a line crosses a box edge, plus the same fine sampling of
    the box edges, so the search resolves optima that sit on a constraint.
    Each ``refine`` pass repeats the search on a box two cells around the
    best candidate.  Returns ``(x, f, spacing)`` with the coarse spacing;
    ``x`` is None when no candidate is feasible.
    """
    lo = np.broadcast_to(np.asarray(lo, float), (2,))
    hi = np.broadcast_to(np.asarray(hi, float), (2,))
    gx = np.linspace(lo[0], hi[0], n)
    gy = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    cands = [np.stack([X.ravel(), Y.ravel()], axis=1)]
    rows = [(np.asarray(a, float), float(b)) for a, b in constraints]
    if boundary:
        fine = np.linspace(0.0, 1.0, 20 * n)
        for axis in (0, 1):
            for edge in (lo[axis], hi[axis]):
                pts = np.empty((fine.size, 2))
                pts[:, axis] = edge
                pts[:, 1 - axis] = lo[1 - axis] + fine * (hi[1 - axis] - lo[1 - axis])
                cands.append(pts)
        for a, b in rows:
            # parameterize a @ x = b across the box along its longer extent
            k = int(np.argmax(np.abs(a)))
            j = 1 - k
            t = lo[j] + fine * (hi[j] - lo[j])
            pts = np.empty((t.size, 2))
            pts[:, j] = t
            pts[:, k] = (b - a[j] * t) / a[k]
            cands.append(pts)
            for axis in (0, 1):
                if abs(a[1 - axis]) > 1e-12:
                    for edge in (lo[axis], hi[axis]):
                        x = np.empty(2)
                        x[axis] = edge
                        x[1 - axis] = (b - a[axis] * edge) / a[1 - axis]
                        cands.append(x[None])
        for i in range(len(rows)):
            for k in range(i + 1, len(rows)):
                m = np.array([rows[i][0], rows[k][0]])
                if abs(np.linalg.det(m)) > 1e-12:
                    cands.append(np.linalg.solve(m, [rows[i][1], rows[k][1]])[None])
    pts = np.concatenate(cands)
    ok = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
    for a, b in rows:
        ok &= pts @ a >= b - 1e-9
    spacing = (gx[1] - gx[0], gy[1] - gy[0])
    if not ok.any():
        return None, math.inf, spacing
    f = np.where(ok, objective(pts), np.inf)
    i = int(np.argmin(f))
    x, fx = pts[i], float(f[i])
    if refine > 0:
        h = 2.0 * np.array(spacing)
        xr, fr, _ = grid_argmin(objective, rows, np.maximum(lo, x - h),
                                np.minimum(hi, x + h), n, boundary, refine - 1)
        if xr is not None and fr < fx:
            x, fx = xr, fr
    return x, fx, spacing


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Criterion number -> (passed, detail); printed after the run."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    report = config.stash.get(ACCEPTANCE, {})
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(report):
        ok, title, detail = report[key]
        terminalreporter.write_line(f"criterion {key} {title}: {'PASS' if ok else 'FAIL'}  {detail}")
