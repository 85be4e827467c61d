"""Compare short-time vacuum witnesses with their leading-order expansions.

From the vacuum, |<abc>| ~ x, I_i ~ x - x^2 and G ~ x - 3 x^2 with x = g0 t / 2.
Prints the relative error of each quantity for a few couplings at g0 t = 0.02.
"""
import argparse

from trispdc.evolution import EvolutionConfig, evolve_static
from trispdc.fock import ModeSystem
from trispdc.model import HamiltonianSpec, Variant, rwa_hamiltonian, vacuum_state
from trispdc.witness import evaluate


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--cutoff", type=int, default=8)
    parser.add_argument("--s", type=float, default=0.02, help="value of g0 t")
    args = parser.parse_args()

    sys = ModeSystem(cutoff=args.cutoff)
    x = args.s / 2
    print(f"{'g0':>8} {'t':>8} {'err |abc|':>11} {'err I':>11} {'err G':>11}")
    for g0 in (0.001, 0.01, 0.05, 0.1):
        t = args.s / g0
        H = rwa_hamiltonian(HamiltonianSpec(Variant.RWA, g0), sys)
        m = evolve_static(H, vacuum_state(sys), EvolutionConfig(t_max=t, sample_times=(t,)), sys, False).moments[0]
        r = evaluate(m)
        e_abc = abs(abs(m.abc) - x) / x
        e_I = max(abs(i - (x - x * x)) / (x - x * x) for i in r.I)
        e_G = abs(r.G - (x - 3 * x * x)) / (x - 3 * x * x)
        print(f"{g0:8.3g} {t:8.3g} {e_abc:11.3e} {e_I:11.3e} {e_G:11.3e}")


if __name__ == "__main__":
    main()
