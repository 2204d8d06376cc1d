//! Synthetic glyph atlases.
//!
//! An atlas holds one bitmap per (character, script) pair. Characters are
//! random stroke compositions drawn from a per-character RNG stream, so
//! the same (n_chars, n_scripts, d_font, seed) always produces identical
//! pixels. Script 0 is the base form; every other script is a
//! deterministic deformation of it (thickening, shear, or open/erode,
//! cycling with growing strength), so the scripts of one character
//! correlate while different characters stay far apart.
//!
//! Pixel intensities are quantized to the 1/255 grid at generation time;
//! the byte-per-pixel file encoding in the companion crate is therefore
//! lossless.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{GlyceError, Result};
use crate::math::round;
use crate::rng::GlyceRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphAtlas {
    n_chars: u32,
    n_scripts: u16,
    d_font: u16,
    /// `[n_chars, n_scripts, d_font, d_font]` row-major, values in [0, 1].
    pixels: Vec<f64>,
}

/// Snaps an intensity onto the 1/255 grid.
fn quantize(v: f64) -> f64 {
    let c = v.clamp(0.0, 1.0);
    round(c * 255.0) / 255.0
}

fn stamp(canvas: &mut [f64], d: usize, r: isize, c: isize, ink: f64) {
    if r < 0 || c < 0 || r as usize >= d || c as usize >= d {
        return;
    }
    let idx = r as usize * d + c as usize;
    if ink > canvas[idx] {
        canvas[idx] = ink;
    }
}

fn draw_line(canvas: &mut [f64], d: usize, a: (f64, f64), b: (f64, f64), ink: f64) {
    let steps = 2 * d;
    for t in 0..=steps {
        let f = t as f64 / steps as f64;
        let r = a.0 + (b.0 - a.0) * f;
        let c = a.1 + (b.1 - a.1) * f;
        let ri = round(r) as isize;
        let ci = round(c) as isize;
        stamp(canvas, d, ri, ci, ink);
        stamp(canvas, d, ri + 1, ci, ink * 0.3);
        stamp(canvas, d, ri - 1, ci, ink * 0.3);
        stamp(canvas, d, ri, ci + 1, ink * 0.3);
        stamp(canvas, d, ri, ci - 1, ink * 0.3);
    }
}

fn thicken(src: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            let mut m = src[r * d + c];
            if r > 0 {
                m = m.max(src[(r - 1) * d + c]);
            }
            if r + 1 < d {
                m = m.max(src[(r + 1) * d + c]);
            }
            if c > 0 {
                m = m.max(src[r * d + c - 1]);
            }
            if c + 1 < d {
                m = m.max(src[r * d + c + 1]);
            }
            out[r * d + c] = m;
        }
    }
    out
}

/// Min over the in-bounds cross neighborhood.
fn erode(src: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            let mut m = src[r * d + c];
            if r > 0 {
                m = m.min(src[(r - 1) * d + c]);
            }
            if r + 1 < d {
                m = m.min(src[(r + 1) * d + c]);
            }
            if c > 0 {
                m = m.min(src[r * d + c - 1]);
            }
            if c + 1 < d {
                m = m.min(src[r * d + c + 1]);
            }
            out[r * d + c] = m;
        }
    }
    out
}

fn shear(src: &[f64], d: usize, slope: f64) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    let center = (d as f64 - 1.0) / 2.0;
    for r in 0..d {
        let shift = round((r as f64 - center) * slope) as isize;
        for c in 0..d {
            let sc = c as isize - shift;
            if sc >= 0 && (sc as usize) < d {
                out[r * d + c] = src[r * d + sc as usize];
            }
        }
    }
    out
}

fn deform(base: &[f64], d: usize, script: u16) -> Vec<f64> {
    let kind = (script as usize - 1) % 3;
    let tier = (script as usize - 1) / 3;
    let mut plane = match kind {
        0 => {
            let t = thicken(base, d);
            let damp = 0.95 - 0.05 * tier.min(4) as f64;
            t.iter().map(|v| v * damp).collect()
        }
        1 => shear(base, d, 0.25 + 0.15 * tier as f64),
        _ => erode(&thicken(base, d), d),
    };
    if kind == 2 && tier > 0 {
        plane = shear(&plane, d, 0.1 * tier as f64);
    }
    plane.iter().map(|&v| quantize(v)).collect()
}

impl GlyphAtlas {
    /// Deterministic synthesis: per-character RNG stream, 3-5 strokes per
    /// glyph, then per-script deformations.
    pub fn generate(n_chars: u32, n_scripts: u16, d_font: u16, seed: u64) -> Result<GlyphAtlas> {
        if n_chars < 2 || n_scripts == 0 {
            return Err(GlyceError::Config(format!(
                "atlas: need at least 2 chars and 1 script, got {n_chars} and {n_scripts}"
            )));
        }
        if !(8..=64).contains(&d_font) {
            return Err(GlyceError::Config(format!(
                "atlas: d_font {d_font} outside supported range 8..=64"
            )));
        }
        let d = d_font as usize;
        let plane = d * d;
        let mut pixels = vec![0.0; n_chars as usize * n_scripts as usize * plane];
        for ch in 0..n_chars {
            let mut rng = GlyceRng::seed_from(seed, ch as u64);
            let mut base = vec![0.0; plane];
            let n_strokes = 3 + rng.below(3);
            let lo = 0.5;
            let hi = d as f64 - 1.5;
            for _ in 0..n_strokes {
                let a = (rng.uniform(lo, hi), rng.uniform(lo, hi));
                let b = (rng.uniform(lo, hi), rng.uniform(lo, hi));
                let ink = rng.uniform(0.55, 1.0);
                draw_line(&mut base, d, a, b, ink);
            }
            for v in &mut base {
                *v = quantize(*v);
            }
            let char_base = ch as usize * n_scripts as usize * plane;
            pixels[char_base..char_base + plane].copy_from_slice(&base);
            for s in 1..n_scripts {
                let deformed = deform(&base, d, s);
                let off = char_base + s as usize * plane;
                pixels[off..off + plane].copy_from_slice(&deformed);
            }
        }
        Ok(GlyphAtlas { n_chars, n_scripts, d_font, pixels })
    }

    /// Rebuilds an atlas from raw pixel data (file loading path).
    pub fn from_parts(n_chars: u32, n_scripts: u16, d_font: u16, pixels: Vec<f64>) -> Result<GlyphAtlas> {
        let want = n_chars as usize * n_scripts as usize * (d_font as usize).pow(2);
        if pixels.len() != want {
            return Err(GlyceError::Shape(format!(
                "atlas: {} pixels for {n_chars} chars x {n_scripts} scripts x {d_font}^2 (want {want})",
                pixels.len()
            )));
        }
        for (i, &p) in pixels.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(GlyceError::Numeric(format!(
                    "atlas: pixel {i} = {p} outside [0, 1]"
                )));
            }
        }
        Ok(GlyphAtlas { n_chars, n_scripts, d_font, pixels })
    }

    pub fn n_chars(&self) -> u32 {
        self.n_chars
    }

    pub fn n_scripts(&self) -> u16 {
        self.n_scripts
    }

    pub fn d_font(&self) -> u16 {
        self.d_font
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// All scripts of one character as a `[n_scripts, d_font, d_font]`
    /// tensor, ready to feed the glyph CNN.
    pub fn lookup(&self, char_id: u32) -> Result<Tensor> {
        let plane = (self.d_font as usize).pow(2);
        let per_char = self.n_scripts as usize * plane;
        if char_id >= self.n_chars {
            return Err(GlyceError::Index(format!(
                "atlas: char id {char_id} out of range for {} characters",
                self.n_chars
            )));
        }
        let off = char_id as usize * per_char;
        Tensor::from_values(
            &[self.n_scripts as usize, self.d_font as usize, self.d_font as usize],
            self.pixels[off..off + per_char].to_vec(),
        )
    }

    /// One script plane of one character.
    pub fn glyph(&self, char_id: u32, script: u16) -> Result<&[f64]> {
        if char_id >= self.n_chars || script >= self.n_scripts {
            return Err(GlyceError::Index(format!(
                "atlas: glyph ({char_id}, {script}) out of range ({} chars, {} scripts)",
                self.n_chars, self.n_scripts
            )));
        }
        let plane = (self.d_font as usize).pow(2);
        let off = (char_id as usize * self.n_scripts as usize + script as usize) * plane;
        Ok(&self.pixels[off..off + plane])
    }
}
