#!/usr/bin/env python3
"""Smoke test for the trimc_py extension module.

Build and stage the module first:

    cargo build --release -p trimc-py
    mkdir -p python/_build
    cp target/release/libtrimc_py.so python/_build/trimc_py.so

then run `python3 python/smoke_test.py`.
"""

import math
import pathlib
import sys

HERE = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(HERE / "_build"))

import trimc_py  # noqa: E402

SQRT2 = math.sqrt(2.0)


def close(a, b, tol, what):
    assert abs(a - b) <= tol * max(abs(a), abs(b), 1e-300), f"{what}: {a} vs {b}"


def main():
    print(f"trimc_py {trimc_py.__version__}")

    # hyperradius closed form: coincident-pair arrangement gives 2d/sqrt(3)
    d = 1.7
    h = trimc_py.hyperradius((d, 0.0, 0.0), (d, 0.0, 0.0))
    close(h, 2.0 * d / math.sqrt(3.0), 1e-14, "hyperradius")

    # hard core boundary is inclusive on an equilateral triangle of side a
    a = 1.0
    x, y = (0.0, 0.0, 0.0), (a, 0.0, 0.0)
    z = (a / 2.0, a * math.sqrt(3.0) / 2.0, 0.0)
    assert trimc_py.hard_core_violated(x, y, z, a)
    assert not trimc_py.hard_core_violated(x, y, (5.0, 5.0, 5.0), a)

    # scattering values: f = 0 on the core edge, 15/16 at twice the edge
    p = trimc_py.ScatteringProfile(1.0, 40.0)
    assert p.f_radial(SQRT2) == 0.0
    close(p.f_radial(2.0 * SQRT2), 15.0 / 16.0, 1e-12, "f at 2 sqrt2 a")
    f_ell, omega, u = p.truncated_radial(2.0 * SQRT2)
    close(f_ell, 15.0 / 16.0, 1e-12, "f_ell in the plateau")
    close(u, 1.0 - f_ell**2, 1e-12, "u = 1 - f^2")
    assert omega > 0.0

    # energy integral approaches det(M) * pi^3 * 16 a^4 at large ell
    det6 = (math.sqrt(3.0) / 2.0) ** 3
    limit = det6 * math.pi**3 * 16.0
    close(p.energy_integral("pi3"), limit, 2e-3, "energy integral (pi3)")

    # the alternate 5-sphere convention scales the same integral
    ratio = p.energy_integral("8pi2_3") / p.energy_integral("pi3")
    close(ratio, (8.0 * math.pi**2 / 3.0) / math.pi**3, 1e-12, "s5 ratio")

    # v integral closed form
    close(p.v_integral(), 4.0 * math.pi / 3.0 * (1.5 * 40.0**2) ** 1.5, 1e-10, "v integral")

    # a small periodic system: lattice is admissible, log psi finite
    prof = trimc_py.ScatteringProfile(1.0, 4.0)
    box_l = 8.0 * prof.ell_tilde
    cfg = trimc_py.Configuration(8, box_l, prof)
    assert cfg.n == 8
    assert cfg.log_psi() <= 0.0
    assert isinstance(cfg.active_triples(), list)

    # Metropolis and the quasi-random oracle see the same physics
    est = trimc_py.run_energy(cfg, sweeps=40_000, burn_in=2_000, step=box_l / 2.0, seed=3)
    oracle_e, oracle_se = trimc_py.oracle_energy(3, box_l, prof, points=40_000, seed=3)
    assert est["e"] >= 0.0
    assert oracle_e > 0.0 and oracle_se < 0.01 * oracle_e
    print(f"metropolis N=8: e = {est['e']:.3e} +- {est['stderr']:.1e}")
    print(f"oracle     N=3: e = {oracle_e:.3e} +- {oracle_se:.1e}")

    # truncation rule
    close(trimc_py.ell_rule(1.0, 1e-4), 10.0 ** (4.0 / 7.0), 1e-12, "ell rule")

    print("smoke test passed")


if __name__ == "__main__":
    main()
