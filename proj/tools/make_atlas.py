#!/usr/bin/env python3
"""Rasterizes the glyph atlas used by the synthetic corpus generator.

Writes one PGM per glyph (intensity = coverage * 255) plus metrics.tsv with
columns: glyph, baseline, advance, descender. `baseline` is the row of the
baseline counted from the top of the bitmap; bitmaps start at the pen
origin horizontally and are cropped to ink vertically.
"""
import argparse
import pathlib

from PIL import Image, ImageDraw, ImageFont

FONT = "/usr/share/fonts/truetype/dejavu/DejaVuSerif.ttf"
LETTERS = [chr(c) for c in range(ord("A"), ord("Z") + 1)] + [chr(c) for c in range(ord("a"), ord("z") + 1)]
# name -> (codepoint, scale relative to the base size)
ALTERNATES = {
    "uncial_A": ("α", 1.3),
    "single_a": ("ɑ", 1.0),
    "long_s": ("ſ", 1.0),
}


def file_name(key):
    return f"U+{ord(key):04X}.pgm" if len(key) == 1 else f"{key}.pgm"


def write_pgm(path, img):
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode())
        f.write(img.tobytes())


def render(font, ch):
    left, top, right, bottom = font.getbbox(ch, anchor="ls")
    advance = round(font.getlength(ch))
    width = max(advance, right)
    canvas = Image.new("L", (width + 4, bottom - top + 4), 0)
    ImageDraw.Draw(canvas).text((0, -top), ch, font=font, fill=255, anchor="ls")
    bbox = canvas.getbbox()
    y0, y1 = bbox[1], bbox[3]
    glyph = canvas.crop((0, y0, width, y1))
    baseline = -top - y0
    descender = int(y1 - baseline > 2 + (y1 - y0) // 20)
    return glyph, baseline, advance, descender


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "assets" / "atlas"))
    ap.add_argument("--size", type=int, default=32)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = ImageFont.truetype(FONT, args.size)
    rows = []
    for ch in LETTERS:
        rows.append((ch,) + write(out, ch, *render(base, ch)))
    for name, (ch, scale) in ALTERNATES.items():
        font = ImageFont.truetype(FONT, round(args.size * scale))
        glyph, baseline, advance, _ = render(font, ch)
        # alternates keep the descender status of what they replace
        descender = 0
        rows.append((name,) + write(out, name, glyph, baseline, advance, descender))
    space = Image.new("L", (1, 1), 0)
    rows.append(("space",) + write(out, "space", space, 1, round(base.getlength(" ")), 0))
    with open(out / "metrics.tsv", "w") as f:
        f.write("# glyph\tbaseline\tadvance\tdescender\n")
        for r in rows:
            f.write("\t".join(str(v) for v in r) + "\n")


def write(out, key, glyph, baseline, advance, descender):
    write_pgm(out / file_name(key), glyph)
    return baseline, advance, descender


if __name__ == "__main__":
    main()
