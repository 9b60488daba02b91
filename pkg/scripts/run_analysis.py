"""Write every numerical analysis (stability, De Morgan gaps, LME bounds) to a directory."""

import argparse
from pathlib import Path

from logltn import analysis


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/analysis")
    p.add_argument("--mc-samples", type=int, default=1_000_000)
    args = p.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for bits in (32, 64):
        text = analysis.stability_csv(analysis.stability_table(precision=bits))
        (out / f"stability_{bits}.csv").write_text(text)

    lines = ["n,variant,x_star,peak_gap,average_gap,method"]
    for n in range(2, 11):
        for variant in ("and", "or"):
            peak = analysis.demorgan_peak(n, variant)
            if n == 2:
                avg, method = analysis.demorgan_average(2, 4000, variant=variant), "grid4000"
            else:
                avg = analysis.demorgan_average(n, 10, args.mc_samples, variant=variant)
                method = f"lattice10_mc{args.mc_samples}"
            lines.append(f"{n},{variant},{peak.x_star:.6f},{peak.gap:.6f},{avg:.6f},{method}")
    (out / "demorgan.csv").write_text("\n".join(lines) + "\n")
    (out / "demorgan_grid.csv").write_text(analysis.demorgan_grid_csv(101))

    rep = analysis.verify_lme_bounds()
    (out / "lme_bounds.txt").write_text(rep.summary())
    print(f"wrote {sorted(f.name for f in out.iterdir())} to {out}")


if __name__ == "__main__":
    main()
