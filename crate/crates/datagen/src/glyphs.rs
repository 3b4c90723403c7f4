//! Embedded handwritten digit glyphs.
//!
//! The corpus is a compact set of 1797 real handwritten digits stored at 8x8
//! resolution (packed at build time into `assets/digit_glyphs.bin`), upscaled
//! bilinearly to 28x28 on first use. Every digit class has at least 170
//! variants, so scenes get genuine handwriting variety without a network
//! fetch or a large vendored corpus.

use std::sync::OnceLock;

const RAW: &[u8] = include_bytes!("../assets/digit_glyphs.bin");
const RAW_SIDE: usize = 8;

/// Rendered glyph edge length in pixels.
pub const GLYPH_SIDE: usize = 28;

struct Corpus {
    /// Per class: each glyph as a `GLYPH_SIDE * GLYPH_SIDE` intensity patch.
    by_class: Vec<Vec<Vec<u8>>>,
}

static CORPUS: OnceLock<Corpus> = OnceLock::new();

fn corpus() -> &'static Corpus {
    CORPUS.get_or_init(|| {
        assert_eq!(&RAW[..4], b"DGL1", "glyph asset header");
        let count = u32::from_le_bytes(RAW[4..8].try_into().unwrap()) as usize;
        let mut by_class: Vec<Vec<Vec<u8>>> = (0..10).map(|_| Vec::new()).collect();
        let rec = 1 + RAW_SIDE * RAW_SIDE;
        assert_eq!(RAW.len(), 8 + count * rec, "glyph asset length");
        for i in 0..count {
            let at = 8 + i * rec;
            let label = RAW[at] as usize;
            assert!(label < 10, "glyph label out of range");
            let small = &RAW[at + 1..at + rec];
            by_class[label].push(upscale(small));
        }
        for (d, glyphs) in by_class.iter().enumerate() {
            assert!(!glyphs.is_empty(), "no glyphs for digit {d}");
        }
        Corpus { by_class }
    })
}

/// Bilinear upscale from the stored 8x8 patch to the rendered size.
fn upscale(small: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; GLYPH_SIDE * GLYPH_SIDE];
    let scale = RAW_SIDE as f32 / GLYPH_SIDE as f32;
    for y in 0..GLYPH_SIDE {
        for x in 0..GLYPH_SIDE {
            // sample the source at this pixel's center
            let sx = ((x as f32 + 0.5) * scale - 0.5).clamp(0.0, (RAW_SIDE - 1) as f32);
            let sy = ((y as f32 + 0.5) * scale - 0.5).clamp(0.0, (RAW_SIDE - 1) as f32);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(RAW_SIDE - 1);
            let y1 = (y0 + 1).min(RAW_SIDE - 1);
            let fx = sx - x0 as f32;
            let fy = sy - y0 as f32;
            let p00 = small[y0 * RAW_SIDE + x0] as f32;
            let p01 = small[y0 * RAW_SIDE + x1] as f32;
            let p10 = small[y1 * RAW_SIDE + x0] as f32;
            let p11 = small[y1 * RAW_SIDE + x1] as f32;
            let v = p00 * (1.0 - fx) * (1.0 - fy)
                + p01 * fx * (1.0 - fy)
                + p10 * (1.0 - fx) * fy
                + p11 * fx * fy;
            out[y * GLYPH_SIDE + x] = v.round() as u8;
        }
    }
    out
}

/// Number of stored variants for a digit class.
pub fn variant_count(digit: u8) -> usize {
    corpus().by_class[digit as usize].len()
}

/// A digit glyph as a `GLYPH_SIDE * GLYPH_SIDE` intensity patch.
pub fn glyph(digit: u8, variant: u32) -> &'static [u8] {
    let glyphs = &corpus().by_class[digit as usize];
    &glyphs[variant as usize % glyphs.len()]
}
