//! Caption composability checks: given one tabletop scene and several
//! captions commanding different objects, verify that each generated video
//! moves exactly what its caption says. Trackers are script-aware — they
//! know every object's starting footprint and the bare plane's appearance —
//! but only look at pixels, so they work on generated video.

use crate::EvalError;
use mage_datagen::caption::{parse_caption, ParsedClause, ParsedSubject};
use mage_datagen::render::render_frame;
use mage_datagen::sampler::grid_to_px;
use mage_datagen::types::{GridPos, SceneScript, StartPosition, Verb, VideoTensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug)]
pub struct TrackerParams {
    /// Max tolerated mean absolute drift (8-bit units) of an unmentioned
    /// object's own pixels in the final frame; also the per-transition
    /// threshold for counting a frame as disturbed.
    pub tau_static: f64,
    /// Minimum mean absolute change in a mentioned object's footprint
    /// between first and last frame to count as having moved away.
    pub tau_move: f64,
    /// Per-pixel threshold against the empty-plane render used to decide
    /// "something sits here".
    pub tau_px: u8,
    /// Minimum pixel count for a valid occupancy centroid.
    pub min_mass: usize,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams { tau_static: 6.0, tau_move: 12.0, tau_px: 30, min_mass: 20 }
    }
}

/// Outcome of checking one caption against one generated video.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompositionRow {
    pub caption: String,
    pub subject_ids: Vec<u32>,
    /// Every mentioned object left its start footprint (or visibly spun).
    pub moved_ok: bool,
    /// Destination agreement for clauses that state one (explicit target or
    /// quadrant); `None` when no clause constrains the destination.
    pub destination_ok: Option<bool>,
    /// Grid cell the moved mass landed on, when one was recovered.
    pub observed_cell: Option<(i32, i32)>,
    /// All unmentioned objects stayed within the static drift budget.
    pub static_ok: bool,
    /// Largest first-to-last-frame drift over any unmentioned object's own
    /// pixels (8-bit units).
    pub max_unmentioned_drift: f64,
}

impl CompositionRow {
    pub fn passes(&self) -> bool {
        self.moved_ok && self.static_ok && self.destination_ok.unwrap_or(true)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompositionReport {
    pub rows: Vec<CompositionRow>,
}

/// Pixel disk covering an object's starting footprint.
struct Disk {
    cx: f64,
    cy: f64,
    r: f64,
}

impl Disk {
    fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }
}

fn object_disk(script: &SceneScript, id: u32) -> Disk {
    let obj = script.object(id);
    let f0 = script.track(id).frames[0];
    let r = obj.size.radius_px() as f64 * 1.4 + 2.0;
    let _ = &obj.start; // start and track frame 0 agree by construction
    Disk { cx: f0.x as f64, cy: f0.y as f64, r }
}

/// The scene's plane-and-grid background with no objects drawn.
fn empty_plane(script: &SceneScript) -> Vec<u8> {
    let side = script.kind.canvas();
    let stripped = SceneScript {
        kind: script.kind,
        objects: vec![],
        actions: vec![],
        raw_frames: 1,
        tracks: vec![],
    };
    let mut out = vec![0u8; side * side * 3];
    render_frame(&stripped, 0, &mut out);
    out
}

fn mean_abs_diff_in_disk(a: &[u8], b: &[u8], side: usize, disk: &Disk) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    let x0 = (disk.cx - disk.r).floor().max(0.0) as usize;
    let x1 = ((disk.cx + disk.r).ceil() as usize).min(side - 1);
    let y0 = (disk.cy - disk.r).floor().max(0.0) as usize;
    let y1 = ((disk.cy + disk.r).ceil() as usize).min(side - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if !disk.contains(x, y) {
                continue;
            }
            let i = (y * side + x) * 3;
            for ch in 0..3 {
                sum += (a[i + ch] as f64 - b[i + ch] as f64).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn occupied(frame: &[u8], empty: &[u8], i: usize, tau: u8) -> bool {
    (0..3).any(|ch| frame[i * 3 + ch].abs_diff(empty[i * 3 + ch]) > tau)
}

/// Pixel indices the object itself covers in the first frame: inside its
/// tight starting footprint *and* visibly different from the bare plane.
/// Background pixels near the object are deliberately excluded so that a
/// mover passing or parking nearby cannot disturb the measurement.
fn footprint_mask(
    script: &SceneScript,
    id: u32,
    first: &[u8],
    empty: &[u8],
    side: usize,
    p: &TrackerParams,
) -> Vec<usize> {
    let obj = script.object(id);
    let f0 = script.track(id).frames[0];
    let disk = Disk {
        cx: f0.x as f64,
        cy: f0.y as f64,
        r: obj.size.radius_px() as f64 + 2.0,
    };
    let mut mask = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let i = y * side + x;
            if disk.contains(x, y) && occupied(first, empty, i, p.tau_px) {
                mask.push(i);
            }
        }
    }
    mask
}

fn mean_abs_diff_over(a: &[u8], b: &[u8], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &i in mask {
        for ch in 0..3 {
            sum += (a[i * 3 + ch] as f64 - b[i * 3 + ch] as f64).abs();
        }
    }
    sum / (mask.len() * 3) as f64
}

/// Centroid of pixels that are occupied in `last` but were background in
/// `first` — i.e. where moved mass came to rest.
fn newly_occupied_centroid(
    first: &[u8],
    last: &[u8],
    empty: &[u8],
    side: usize,
    p: &TrackerParams,
) -> Option<(f64, f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0usize;
    for y in 0..side {
        for x in 0..side {
            let i = y * side + x;
            if occupied(last, empty, i, p.tau_px) && !occupied(first, empty, i, p.tau_px) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    if n < p.min_mass {
        None
    } else {
        Some((sx / n as f64, sy / n as f64))
    }
}

/// Nearest lattice point to a canvas pixel.
pub fn px_to_cell(x: f64, y: f64, canvas: usize) -> (i32, i32) {
    let center = canvas as f64 / 2.0;
    let gx = ((x - center) / 18.0).round() as i32;
    let gy = ((center - y) / 18.0).round() as i32;
    (gx, gy)
}

fn resolve_subject(script: &SceneScript, clause: &ParsedClause) -> Result<u32, EvalError> {
    let ParsedSubject::Object(ref obj_ref) = clause.subject else {
        return Err(EvalError::Input(
            "composability tracking is defined for tabletop scenes, not glyph captions".into(),
        ));
    };
    let matches: Vec<u32> = script
        .objects
        .iter()
        .filter(|o| obj_ref.matches(o))
        .map(|o| o.id)
        .collect();
    match matches.len() {
        0 => Err(EvalError::Input(format!(
            "caption references an absent object: no {} in the scene",
            obj_ref.shape.word()
        ))),
        1 => Ok(matches[0]),
        n => Err(EvalError::Input(format!(
            "caption reference matches {n} objects; cannot track an ambiguous subject"
        ))),
    }
}

/// Check one caption against one video of the scene.
pub fn check_composition(
    script: &SceneScript,
    caption: &str,
    video: &VideoTensor,
    params: &TrackerParams,
) -> Result<CompositionRow, EvalError> {
    if script.kind.is_glyph() {
        return Err(EvalError::Input(
            "composability tracking is defined for tabletop scenes".into(),
        ));
    }
    let side = script.kind.canvas();
    if video.h != side || video.w != side || video.c != 3 || video.t < 2 {
        return Err(EvalError::Shape(format!(
            "video [{},{},{},{}] does not match a {side}×{side} RGB clip",
            video.t, video.h, video.w, video.c
        )));
    }
    let clauses = parse_caption(caption)
        .map_err(|e| EvalError::Input(format!("cannot parse caption: {e}")))?;
    let mut subject_ids = Vec::new();
    let mut contained_ids = Vec::new();
    for clause in &clauses {
        let id = resolve_subject(script, clause)?;
        subject_ids.push(id);
        if clause.verb == Verb::Contain {
            let obj_ref = clause
                .object
                .as_ref()
                .ok_or_else(|| EvalError::Input("contain clause without an object".into()))?;
            let hits: Vec<u32> = script
                .objects
                .iter()
                .filter(|o| obj_ref.matches(o))
                .map(|o| o.id)
                .collect();
            match hits.as_slice() {
                [one] => contained_ids.push(*one),
                [] => {
                    return Err(EvalError::Input(
                        "caption references an absent object to contain".into(),
                    ))
                }
                _ => return Err(EvalError::Input("ambiguous contained-object reference".into())),
            }
        }
    }

    let empty = empty_plane(script);
    let first = video.frame(0);
    let last = video.frame(video.t - 1);

    // Mentioned objects must act.
    let mut moved_ok = true;
    let mut destination_ok: Option<bool> = None;
    let mut observed_cell = None;
    for (clause, &id) in clauses.iter().zip(&subject_ids) {
        let disk = object_disk(script, id);
        match clause.verb {
            Verb::Rotate => {
                // A spin keeps changing its own footprint on most transitions
                // without vacating it.
                let active = (1..video.t)
                    .filter(|&t| {
                        mean_abs_diff_in_disk(video.frame(t - 1), video.frame(t), side, &disk) > 0.5
                    })
                    .count();
                if active * 2 < video.t - 1 {
                    moved_ok = false;
                }
            }
            _ => {
                let depart = mean_abs_diff_in_disk(first, last, side, &disk);
                if depart <= params.tau_move {
                    moved_ok = false;
                }
                // Destination: explicit target, quadrant, or the contained
                // object's resting place.
                let want_target: Option<GridPos> = match clause.verb {
                    Verb::Contain => contained_ids
                        .first()
                        .map(|&cid| match script.object(cid).start {
                            StartPosition::Grid(g) => g,
                            StartPosition::Pixel { .. } => unreachable!("tabletop objects sit on the grid"),
                        }),
                    _ => clause.target,
                };
                let centroid = newly_occupied_centroid(first, last, &empty, side, params);
                if let Some((cx, cy)) = centroid {
                    observed_cell = Some(px_to_cell(cx, cy, side));
                }
                if let Some(target) = want_target {
                    let ok = centroid.is_some_and(|(cx, cy)| {
                        let (tx, ty) = grid_to_px(target);
                        let d = ((cx - tx as f64).powi(2) + (cy - ty as f64).powi(2)).sqrt();
                        d <= 9.0 // half a grid cell
                    });
                    destination_ok = Some(destination_ok.unwrap_or(true) && ok);
                } else if let Some(q) = clause.quadrant {
                    let ok = centroid.is_some_and(|(cx, cy)| {
                        let (gx, gy) = px_to_cell(cx, cy, side);
                        GridPos::new(gx, gy).quadrant() == Some(q)
                    });
                    destination_ok = Some(destination_ok.unwrap_or(true) && ok);
                }
            }
        }
    }

    // Everything not mentioned (and not deliberately covered) must hold
    // still. Drift is measured over the bystander's own rendered pixels only,
    // and transient occlusion (a mover briefly crossing in front) is forgiven
    // as long as most transitions stay quiet and the final frame shows the
    // object back in place.
    let mut static_ok = true;
    let mut max_drift = 0.0f64;
    for obj in &script.objects {
        if subject_ids.contains(&obj.id) || contained_ids.contains(&obj.id) {
            continue;
        }
        let mask = footprint_mask(script, obj.id, first, &empty, side, params);
        if mask.len() < params.min_mass {
            continue; // not visible in the first frame; nothing to hold still
        }
        let diffs: Vec<f64> = (1..video.t)
            .map(|t| mean_abs_diff_over(first, video.frame(t), &mask))
            .collect();
        let final_drift = *diffs.last().expect("clip has at least two frames");
        let busy = diffs.iter().filter(|&&d| d > params.tau_static).count();
        max_drift = max_drift.max(final_drift);
        if final_drift > params.tau_static || busy * 2 > diffs.len() {
            static_ok = false;
        }
    }

    Ok(CompositionRow {
        caption: caption.to_string(),
        subject_ids,
        moved_ok,
        destination_ok,
        observed_cell,
        static_ok,
        max_unmentioned_drift: max_drift,
    })
}

/// Run the tracker over a caption set and its per-caption generated videos.
pub fn composability_suite(
    script: &SceneScript,
    captions: &[String],
    videos: &[VideoTensor],
    params: &TrackerParams,
) -> Result<CompositionReport, EvalError> {
    if captions.is_empty() {
        return Err(EvalError::Input("no captions to check".into()));
    }
    if captions.len() != videos.len() {
        return Err(EvalError::Input(format!(
            "{} captions but {} videos",
            captions.len(),
            videos.len()
        )));
    }
    let rows = captions
        .iter()
        .zip(videos)
        .map(|(c, v)| check_composition(script, c, v, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompositionReport { rows })
}

/// Final resting cell of whatever moved in a generated clip, via the same
/// occupancy tracker (used for diversity-of-outcome checks).
pub fn final_object_cell(
    script: &SceneScript,
    video: &VideoTensor,
    params: &TrackerParams,
) -> Option<(i32, i32)> {
    let side = script.kind.canvas();
    let empty = empty_plane(script);
    newly_occupied_centroid(video.frame(0), video.frame(video.t - 1), &empty, side, params)
        .map(|(x, y)| px_to_cell(x, y, side))
}
