"""Regenerate the bundled fixture files from their seeded specifications."""

from pathlib import Path

from hucsdp.casefile import write_hydro, write_network
from hucsdp.fixtures import BUNDLED, generate

OUT = Path(__file__).resolve().parents[1] / "src" / "hucsdp" / "data"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for spec in BUNDLED:
        inst = generate(spec)
        for writer, suffix, mark in ((write_network, ".m", "%"), (write_hydro, ".toml", "#")):
            path = OUT / f"{spec.name}{suffix}"
            writer(inst, path)
            path.write_text(f"{mark} seed = {spec.seed}\n" + path.read_text())
        print(f"{spec.name}: {inst.network.n_bus} buses, {inst.n_plant} plants, {inst.horizon} hours")


if __name__ == "__main__":
    main()
