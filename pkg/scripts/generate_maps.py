"""Regenerate the stand-in rock maps shipped in ``src/co2seq/data``."""
from pathlib import Path

import numpy as np

from co2seq.reservoir import standin_maps

OUT = Path(__file__).resolve().parents[1] / "src" / "co2seq" / "data"


def main():
    OUT.mkdir(exist_ok=True)
    for name in ("K1", "K2", "K3"):
        perm, poro = standin_maps(name)
        for kind, arr in (("permeability", perm), ("porosity", poro)):
            path = OUT / f"{kind}_{name}.csv"
            np.savetxt(path, arr, fmt="%.17g", delimiter=",",
                       header=f"{kind} stand-in {name}; row 0 at y=0"
                       + ("; mDarcy" if kind == "permeability" else ""))
            print(path)


if __name__ == "__main__":
    main()
