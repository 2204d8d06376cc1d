//! The `.gatl` atlas container.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GATL"
//!      4     4  u32 format version, currently 1
//!      8     4  u32 n_chars
//!     12     2  u16 n_scripts
//!     14     2  u16 d_font
//!     16     1  u8 pixel encoding, 0 = one byte per pixel, value/255
//!     17     -  n_chars * n_scripts * d_font^2 pixel bytes
//! ```
//!
//! Atlas pixels live on the 1/255 grid already, so a save/load cycle is
//! bit-exact. Anything else in the file is an error, reported with the
//! byte offset where decoding stopped.

use std::path::Path;

use glyce_core::atlas::GlyphAtlas;

use crate::bytes::ByteReader;
use crate::error::{read_bytes, write_bytes, CliError, CliResult};

pub const ATLAS_MAGIC: [u8; 4] = *b"GATL";
pub const ATLAS_VERSION: u32 = 1;
const ENCODING_BYTE_PER_PIXEL: u8 = 0;

pub fn encode_atlas(atlas: &GlyphAtlas) -> Vec<u8> {
    let pixels = atlas.pixels();
    let mut out = Vec::with_capacity(17 + pixels.len());
    out.extend_from_slice(&ATLAS_MAGIC);
    out.extend_from_slice(&ATLAS_VERSION.to_le_bytes());
    out.extend_from_slice(&atlas.n_chars().to_le_bytes());
    out.extend_from_slice(&atlas.n_scripts().to_le_bytes());
    out.extend_from_slice(&atlas.d_font().to_le_bytes());
    out.push(ENCODING_BYTE_PER_PIXEL);
    out.extend(pixels.iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn decode_atlas(buf: &[u8]) -> Result<GlyphAtlas, String> {
    let mut r = ByteReader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != ATLAS_MAGIC {
        return Err(format!("bad magic at byte 0: want \"GATL\", found {magic:?}"));
    }
    let version = r.u32("format version")?;
    if version != ATLAS_VERSION {
        return Err(format!(
            "unsupported atlas version {version} at byte 4 (want {ATLAS_VERSION})"
        ));
    }
    let n_chars = r.u32("character count")?;
    let n_scripts = r.u16("script count")?;
    let d_font = r.u16("font size")?;
    let encoding = r.u8("pixel encoding")?;
    if encoding != ENCODING_BYTE_PER_PIXEL {
        return Err(format!("unknown pixel encoding {encoding} at byte 16"));
    }
    let want = n_chars as usize * n_scripts as usize * (d_font as usize).pow(2);
    let raw = r.take(want, "pixel block")?;
    r.expect_done("atlas")?;
    let pixels = raw.iter().map(|&b| b as f64 / 255.0).collect();
    GlyphAtlas::from_parts(n_chars, n_scripts, d_font, pixels)
        .map_err(|e| format!("header describes no valid atlas: {e}"))
}

pub fn save_atlas(atlas: &GlyphAtlas, path: &Path) -> CliResult<()> {
    write_bytes(path, &encode_atlas(atlas))
}

pub fn load_atlas(path: &Path) -> CliResult<GlyphAtlas> {
    decode_atlas(&read_bytes(path)?).map_err(|m| CliError::format(path, m))
}
