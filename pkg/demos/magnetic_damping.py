"""Compare bubble rise with and without a horizontal magnetic field.

A coarse, short version of the ``damping_sweep`` case: the same bubble rises
under B = 0, 3, 7 applied horizontally.  Stronger fields slow the bubble and
push the flow towards the field direction.

    python demos/magnetic_damping.py [out_dir]
"""

import sys

from phasemhd import cli

COARSE = ["mesh.cells = 32, 64", "physics.epsilon = 0.01", "time.end = 0.4",
          "output.fields = false"]


def main(out_dir="out/demo_damping"):
    sweep = cli.CaseCatalog.SWEEPS["damping_sweep"]
    members = [(label, ovr + COARSE)
               for label, ovr in sweep.members("horizontal", (0.0, 3.0, 7.0))]
    rows = cli.run_sweep(cli.CaseCatalog.text(sweep.base), members, out_dir)
    print(f"{'member':>8} {'peak rise':>10} {'final rise':>11} {'alignment':>10}")
    for r in rows:
        print(f"{r['label']:>8} {r['peak_rise_velocity']:10.4f} "
              f"{r['final_rise_velocity']:11.4f} {r['alignment_final']:10.3f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
