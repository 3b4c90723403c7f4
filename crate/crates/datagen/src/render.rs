//! Deterministic 2D rasterization of scene scripts.
//!
//! Glyph scenes composite 28x28 digit stamps onto a 64x64 single-channel
//! canvas with a per-pixel maximum, so draw order never matters. Tabletop
//! scenes draw a gridded plane and stylized shape sprites in painter's order
//! (carried objects on top) on a 128x128 RGB canvas. Rotation is shown by an
//! orientation tick that sweeps around the shape's center, which guarantees
//! visible pixel change on every raw frame of a spin. Everything is plain
//! sequential integer/f32 math: rendering the same script twice yields
//! byte-identical frames.

use crate::glyphs;
use crate::types::*;

/// Tabletop plane and gridline colors.
const PLANE_RGB: [u8; 3] = [210, 208, 204];
const LINE_RGB: [u8; 3] = [168, 166, 162];

/// Render every raw frame of a script.
pub fn render_scene(script: &SceneScript) -> VideoTensor {
    let side = script.kind.canvas();
    let c = script.kind.channels();
    let mut video = VideoTensor::zeros(script.raw_frames, side, side, c);
    for t in 0..script.raw_frames {
        render_frame(script, t, video.frame_mut(t));
    }
    video
}

/// Render a single raw frame into a preallocated `[h*w*c]` buffer.
pub fn render_frame(script: &SceneScript, t: usize, out: &mut [u8]) {
    if script.kind.is_glyph() {
        render_glyph_frame(script, t, out);
    } else {
        render_table_frame(script, t, out);
    }
}

// ---------------------------------------------------------------------------
// Glyph canvas
// ---------------------------------------------------------------------------

fn render_glyph_frame(script: &SceneScript, t: usize, out: &mut [u8]) {
    let side = script.kind.canvas();
    debug_assert_eq!(out.len(), side * side);
    out.fill(0);
    for obj in &script.objects {
        let st = script.track(obj.id).frames[t];
        if !st.visible {
            continue;
        }
        let stamp = glyphs::glyph(
            obj.digit_class.expect("glyph object has a digit class"),
            obj.glyph_index.unwrap_or(0),
        );
        let gx = st.x.round() as i64;
        let gy = st.y.round() as i64;
        for r in 0..glyphs::GLYPH_SIDE {
            for c in 0..glyphs::GLYPH_SIDE {
                let v = stamp[r * glyphs::GLYPH_SIDE + c];
                if v == 0 {
                    continue;
                }
                let px = gx + c as i64;
                let py = gy + r as i64;
                if px < 0 || py < 0 || px >= side as i64 || py >= side as i64 {
                    continue;
                }
                let dst = &mut out[py as usize * side + px as usize];
                *dst = (*dst).max(v);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tabletop canvas
// ---------------------------------------------------------------------------

fn render_table_frame(script: &SceneScript, t: usize, out: &mut [u8]) {
    let side = script.kind.canvas();
    debug_assert_eq!(out.len(), side * side * 3);
    for px in out.chunks_exact_mut(3) {
        px.copy_from_slice(&PLANE_RGB);
    }
    draw_grid(out, side);

    // painter's order: grounded objects back-to-front by canvas y, then
    // anything lifted mid-carry on top of everything
    let mut order: Vec<&ObjectSpec> = script
        .objects
        .iter()
        .filter(|o| script.track(o.id).frames[t].visible)
        .collect();
    order.sort_by(|a, b| {
        let fa = script.track(a.id).frames[t];
        let fb = script.track(b.id).frames[t];
        let lifted_a = fa.scale > 1.0;
        let lifted_b = fb.scale > 1.0;
        lifted_a
            .cmp(&lifted_b)
            .then(fa.y.total_cmp(&fb.y))
            .then(a.id.cmp(&b.id))
    });
    for obj in order {
        let st = script.track(obj.id).frames[t];
        draw_shape(out, side, obj, st);
    }
}

fn draw_grid(out: &mut [u8], side: usize) {
    let lines: Vec<usize> = (-GridPos::RANGE..=GridPos::RANGE)
        .map(|k| (side as i32 / 2 + 18 * k) as usize)
        .collect();
    let lo = lines[0];
    let hi = lines[lines.len() - 1];
    for &l in &lines {
        for v in lo..=hi {
            put_px(out, side, l as i64, v as i64, LINE_RGB);
            put_px(out, side, v as i64, l as i64, LINE_RGB);
        }
    }
}

fn put_px(out: &mut [u8], side: usize, x: i64, y: i64, rgb: [u8; 3]) {
    if x < 0 || y < 0 || x >= side as i64 || y >= side as i64 {
        return;
    }
    let i = (y as usize * side + x as usize) * 3;
    out[i..i + 3].copy_from_slice(&rgb);
}

fn shade(base: [u8; 3], factor: f32) -> [u8; 3] {
    let mut px = [0u8; 3];
    for (dst, &b) in px.iter_mut().zip(base.iter()) {
        *dst = (b as f32 * factor).clamp(0.0, 255.0) as u8;
    }
    px
}

fn has_tick(shape: Shape) -> bool {
    matches!(shape, Shape::Cube | Shape::Cylinder | Shape::Snitch)
}

fn draw_shape(out: &mut [u8], side: usize, obj: &ObjectSpec, st: TrackFrame) {
    let r = obj.size.radius_px() * st.scale;
    let (cx, cy) = (st.x, st.y);
    let base = obj.color.rgb();
    let metal = obj.material == Material::Metal;

    let reach = (r * 1.3).ceil() as i64 + 1;
    let x0 = (cx as i64 - reach).max(0);
    let x1 = (cx as i64 + reach).min(side as i64 - 1);
    let y0 = (cy as i64 - reach).max(0);
    let y1 = (cy as i64 + reach).min(side as i64 - 1);

    for py in y0..=y1 {
        for px in x0..=x1 {
            let dx = px as f32 + 0.5 - cx;
            let dy = py as f32 + 0.5 - cy;
            let inside = match obj.shape {
                Shape::Sphere => dx * dx + dy * dy <= r * r,
                Shape::Cube => dx.abs() <= r * 0.92 && dy.abs() <= r * 0.92,
                Shape::Cylinder => dx.abs() <= r * 0.62 && dy.abs() <= r * 1.05,
                Shape::Cone => {
                    // upward triangle: apex above center, flat base below
                    let top = -1.1 * r;
                    let bottom = 0.95 * r;
                    dy >= top
                        && dy <= bottom
                        && dx.abs() <= r * (dy - top) / (bottom - top)
                }
                Shape::Snitch => dx.abs() + dy.abs() <= r * 1.1,
                Shape::Digit => unreachable!("glyphs use the glyph canvas"),
            };
            if !inside {
                continue;
            }
            // simple material cue: metal gets a left-to-right sheen, rubber
            // is flat; spheres additionally darken toward the rim
            let mut factor = if metal { 0.72 + 0.5 * (dx + r) / (2.0 * r) } else { 0.92 };
            if obj.shape == Shape::Sphere {
                factor *= 1.0 - 0.22 * (dx * dx + dy * dy) / (r * r);
            }
            if obj.shape == Shape::Snitch && dx.abs() + dy.abs() <= r * 0.5 {
                factor *= 1.3;
            }
            put_px(out, side, px, py, shade(base, factor));
        }
    }

    if has_tick(obj.shape) {
        // orientation tick from the center outward; its sweep is what makes
        // a rotation visible frame over frame
        let dark = shade(base, 0.38);
        let dirx = st.angle.cos();
        let diry = -st.angle.sin(); // canvas y grows downward
        let len = r * 0.95;
        let mut d = 0.0f32;
        while d <= len {
            let px = (cx + dirx * d).floor() as i64;
            let py = (cy + diry * d).floor() as i64;
            put_px(out, side, px, py, dark);
            d += 0.35;
        }
    }
}
