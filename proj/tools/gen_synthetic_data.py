#!/usr/bin/env python3
"""Generate the synthetic profiles shipped under data/profiles.

The data is synthetic: household loads are a smooth daily shape (night base,
morning and evening bumps) with per-home scaling, phase shift and AR(1) noise;
weather is a clear-sky bell for irradiance with a cloudy day and a sinusoidal
summer temperature. Re-running with the same seed reproduces the files.
"""

import argparse
import pathlib

import numpy as np

STEP_MIN = 5
DAYS = 7


def daily_shape(hour):
    base = 0.45
    morning = 0.9 * np.exp(-0.5 * ((hour - 7.5) / 1.0) ** 2)
    midday = 0.35 * np.exp(-0.5 * ((hour - 13.0) / 2.5) ** 2)
    evening = 1.9 * np.exp(-0.5 * ((hour - 19.0) / 1.6) ** 2)
    return base + morning + midday + evening


def loads(rng, homes, minutes):
    hours = minutes / 60.0
    cols = {}
    for h in range(homes):
        scale = rng.uniform(0.8, 1.25)
        shift = rng.uniform(-0.5, 0.5)
        noise = np.zeros_like(hours)
        for i in range(1, len(noise)):
            noise[i] = 0.9 * noise[i - 1] + rng.normal(0.0, 0.06)
        kw = scale * daily_shape((hours - shift) % 24.0) + noise
        cols[f"h{h + 1}"] = np.clip(kw, 0.15, None)
    return cols


def weather(rng, minutes):
    hours = minutes / 60.0
    hod = hours % 24.0
    day = (hours // 24).astype(int)
    clear = np.clip(np.sin(np.pi * (hod - 6.0) / 14.0), 0.0, None) ** 1.3 * 0.95
    cloud = np.ones(DAYS)
    cloud[2] = 0.35  # one overcast day
    cloud[5] = 0.75
    flicker = 1.0 - 0.08 * np.abs(rng.normal(0.0, 1.0, size=len(hours)))
    irradiance = np.clip(clear * cloud[day] * flicker, 0.0, None)
    temperature = 28.0 + 7.0 * np.sin(2 * np.pi * (hod - 9.0) / 24.0) + 1.5 * (cloud[day] - 1.0)
    return irradiance, temperature


def write(path, header, columns, minutes):
    with open(path, "w") as f:
        f.write("# synthetic data generated by tools/gen_synthetic_data.py\n")
        f.write(",".join(["minute"] + header) + "\n")
        for i, m in enumerate(minutes):
            f.write(",".join([str(int(m))] + [f"{columns[c][i]:.4f}" for c in header]) + "\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=pathlib.Path(__file__).resolve().parent.parent / "data" / "profiles")
    parser.add_argument("--homes", type=int, default=8)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    minutes = np.arange(0, DAYS * 24 * 60, STEP_MIN, dtype=float)

    cols = loads(rng, args.homes, minutes)
    write(out / "community8_load.csv", list(cols), cols, minutes)
    irr, temp = weather(rng, minutes)
    write(out / "summer_week_weather.csv", ["irradiance", "temperature_c"], {"irradiance": irr, "temperature_c": temp}, minutes)


if __name__ == "__main__":
    main()
