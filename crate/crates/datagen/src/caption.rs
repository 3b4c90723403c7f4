//! Caption writing and rule-based caption parsing.
//!
//! Explicit captions spell out every attribute and exact destination
//! coordinates; ambiguous captions replace coordinates with quadrant phrases
//! and (for the many-object tabletop set) randomly drop subject attributes,
//! so several objects may match the referring expression. Both are written
//! from the scene script alone with fixed sentence templates, and
//! [`parse_caption`] inverts the templates exactly — dataset integrity
//! checks rely on writer/parser round-trips being lossless.

use crate::types::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CaptionMode {
    Explicit,
    Ambiguous,
}

const QUADRANT_WORDS: [&str; 4] = ["first", "second", "third", "fourth"];

pub fn quadrant_word(q: u8) -> &'static str {
    QUADRANT_WORDS[(q - 1) as usize]
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

/// Write the caption for a script. The seed only matters in ambiguous mode,
/// where it drives attribute dropping; the same (script, mode, seed) always
/// yields the same string.
pub fn describe_scene(script: &SceneScript, mode: CaptionMode, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clauses: Vec<String> = script
        .actions
        .iter()
        .map(|a| clause_for(script, a, mode, &mut rng))
        .collect();
    clauses.join(" and ")
}

fn clause_for(
    script: &SceneScript,
    action: &ActionSpec,
    mode: CaptionMode,
    rng: &mut ChaCha8Rng,
) -> String {
    let subject = script.object(action.subject_id);
    if script.kind.is_glyph() {
        let ActionKind::GlyphMove { direction, bounce, .. } = &action.kind else {
            unreachable!("glyph scenes only contain glyph moves")
        };
        let tail = match bounce {
            BounceMode::Stop => "stops",
            BounceMode::BounceOnce => "bounces back",
        };
        return format!(
            "the digit {} moves {} then {}",
            subject.digit_class.expect("glyph has a digit class"),
            direction.word(),
            tail
        );
    }

    let subject_ref = object_ref(script.kind, subject, mode, rng);
    match &action.kind {
        ActionKind::Rotate => format!("{subject_ref} is rotating"),
        ActionKind::Slide { target, .. } => {
            format!("{subject_ref} is sliding to {}", destination(*target, mode))
        }
        ActionKind::PickPlace { target, .. } => {
            format!(
                "{subject_ref} is picked up and placed to {}",
                destination(*target, mode)
            )
        }
        ActionKind::Contain { object_id, .. } => {
            let contained = object_ref(script.kind, script.object(*object_id), mode, rng);
            format!("{subject_ref} is picked up and containing {contained}")
        }
        ActionKind::GlyphMove { .. } => unreachable!("tabletop scenes never move glyphs"),
    }
}

fn destination(target: GridPos, mode: CaptionMode) -> String {
    match mode {
        CaptionMode::Explicit => format!("({}, {})", target.x, target.y),
        CaptionMode::Ambiguous => {
            let q = target.quadrant().expect("destinations avoid the axes");
            format!("the {} quadrant", quadrant_word(q))
        }
    }
}

/// Referring expression for an object. The snitch is unique by construction
/// and is always written bare; the two-object tabletop set also writes bare
/// shape names. In ambiguous mode each of size, color, and material is
/// independently kept or dropped (any subset stays grammatical because the
/// shape word is always kept).
fn object_ref(
    kind: DatasetKind,
    obj: &ObjectSpec,
    mode: CaptionMode,
    rng: &mut ChaCha8Rng,
) -> String {
    if obj.shape == Shape::Snitch || kind == DatasetKind::CaterV1 {
        return format!("the {}", obj.shape.word());
    }
    let keep = |rng: &mut ChaCha8Rng| -> bool { rng.gen_bool(0.5) };
    let (size, color, material) = match mode {
        CaptionMode::Explicit => (true, true, true),
        CaptionMode::Ambiguous => (keep(rng), keep(rng), keep(rng)),
    };
    let mut words = vec!["the".to_string()];
    if size {
        words.push(obj.size.word().to_string());
    }
    if color {
        words.push(obj.color.word().to_string());
    }
    if material {
        words.push(obj.material.word().to_string());
    }
    words.push(obj.shape.word().to_string());
    words.join(" ")
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// A parsed referring expression; absent attributes were dropped from the
/// caption, not unknown.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ObjectRef {
    pub size: Option<Size>,
    pub color: Option<Color>,
    pub material: Option<Material>,
    pub shape: Shape,
}

impl ObjectRef {
    /// Does a concrete object satisfy this referring expression?
    pub fn matches(&self, obj: &ObjectSpec) -> bool {
        self.shape == obj.shape
            && self.size.map_or(true, |s| s == obj.size)
            && self.color.map_or(true, |c| c == obj.color)
            && self.material.map_or(true, |m| m == obj.material)
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum ParsedSubject {
    Digit(u8),
    Object(ObjectRef),
}

#[derive(Clone, PartialEq, Debug)]
pub struct ParsedClause {
    pub subject: ParsedSubject,
    pub verb: Verb,
    /// Glyph clauses only.
    pub direction: Option<Direction>,
    pub bounce: Option<BounceMode>,
    /// Exact destination (explicit captions).
    pub target: Option<GridPos>,
    /// Destination quadrant (ambiguous captions).
    pub quadrant: Option<u8>,
    /// Contained object (contain clauses).
    pub object: Option<ObjectRef>,
}

#[derive(Clone, PartialEq, Eq, Debug, thiserror::Error)]
#[error("cannot parse caption at {at:?}: {reason}")]
pub struct CaptionParseError {
    pub at: String,
    pub reason: &'static str,
}

fn parse_err(at: &str, reason: &'static str) -> CaptionParseError {
    CaptionParseError { at: at.to_string(), reason }
}

/// Invert the caption templates. Works on both explicit and ambiguous
/// captions of every dataset kind.
pub fn parse_caption(caption: &str) -> Result<Vec<ParsedClause>, CaptionParseError> {
    // clauses are joined with " and the ..."; the only other "and" in the
    // grammar ("picked up and placed/containing") is never followed by "the"
    let mut parts: Vec<String> = Vec::new();
    for (i, piece) in caption.split(" and the ").enumerate() {
        if i == 0 {
            parts.push(piece.to_string());
        } else {
            parts.push(format!("the {piece}"));
        }
    }
    parts.iter().map(|p| parse_clause(p)).collect()
}

fn parse_clause(clause: &str) -> Result<ParsedClause, CaptionParseError> {
    if let Some(rest) = clause.strip_prefix("the digit ") {
        return parse_glyph_clause(clause, rest);
    }
    let rest = clause
        .strip_prefix("the ")
        .ok_or_else(|| parse_err(clause, "clause must start with 'the'"))?;
    let (subject, rest) = parse_object_ref(clause, rest)?;
    let rest = rest
        .strip_prefix(" is ")
        .ok_or_else(|| parse_err(clause, "expected 'is' after the subject"))?;

    let mut parsed = ParsedClause {
        subject: ParsedSubject::Object(subject),
        verb: Verb::Rotate,
        direction: None,
        bounce: None,
        target: None,
        quadrant: None,
        object: None,
    };
    if rest == "rotating" {
        parsed.verb = Verb::Rotate;
    } else if let Some(dest) = rest.strip_prefix("sliding to ") {
        parsed.verb = Verb::Slide;
        parse_destination(clause, dest, &mut parsed)?;
    } else if let Some(dest) = rest.strip_prefix("picked up and placed to ") {
        parsed.verb = Verb::PickPlace;
        parse_destination(clause, dest, &mut parsed)?;
    } else if let Some(obj) = rest.strip_prefix("picked up and containing the ") {
        parsed.verb = Verb::Contain;
        let (obj_ref, leftover) = parse_object_ref(clause, obj)?;
        if !leftover.is_empty() {
            return Err(parse_err(clause, "trailing words after contained object"));
        }
        parsed.object = Some(obj_ref);
    } else {
        return Err(parse_err(clause, "unknown verb phrase"));
    }
    Ok(parsed)
}

fn parse_glyph_clause(clause: &str, rest: &str) -> Result<ParsedClause, CaptionParseError> {
    let mut it = rest.splitn(2, " moves ");
    let digit: u8 = it
        .next()
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| parse_err(clause, "bad digit"))?;
    let tail = it.next().ok_or_else(|| parse_err(clause, "expected 'moves'"))?;
    let mut words = tail.splitn(2, " then ");
    let direction = words
        .next()
        .and_then(Direction::parse)
        .ok_or_else(|| parse_err(clause, "bad direction"))?;
    let bounce = match words.next() {
        Some("stops") => BounceMode::Stop,
        Some("bounces back") => BounceMode::BounceOnce,
        _ => return Err(parse_err(clause, "bad bounce mode")),
    };
    Ok(ParsedClause {
        subject: ParsedSubject::Digit(digit),
        verb: Verb::GlyphMove,
        direction: Some(direction),
        bounce: Some(bounce),
        target: None,
        quadrant: None,
        object: None,
    })
}

/// Consume attribute words up to and including a shape word; returns the
/// reference and the unconsumed remainder (starting at the following space,
/// if any).
fn parse_object_ref<'a>(
    clause: &str,
    text: &'a str,
) -> Result<(ObjectRef, &'a str), CaptionParseError> {
    let mut size = None;
    let mut color = None;
    let mut material = None;
    let mut rest = text;
    loop {
        let word_end = rest.find(' ').unwrap_or(rest.len());
        let word = &rest[..word_end];
        if let Some(shape) = shape_from_word(word) {
            return Ok((ObjectRef { size, color, material, shape }, &rest[word_end..]));
        } else if let Some(s) = size_from_word(word) {
            size = Some(s);
        } else if let Some(c) = color_from_word(word) {
            color = Some(c);
        } else if let Some(m) = material_from_word(word) {
            material = Some(m);
        } else {
            return Err(parse_err(clause, "unknown attribute word"));
        }
        if word_end == rest.len() {
            return Err(parse_err(clause, "reference never names a shape"));
        }
        rest = &rest[word_end + 1..];
    }
}

fn parse_destination(
    clause: &str,
    dest: &str,
    parsed: &mut ParsedClause,
) -> Result<(), CaptionParseError> {
    if let Some(inner) = dest.strip_prefix('(').and_then(|d| d.strip_suffix(')')) {
        let mut nums = inner.split(", ");
        let x: i32 = nums
            .next()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| parse_err(clause, "bad x coordinate"))?;
        let y: i32 = nums
            .next()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| parse_err(clause, "bad y coordinate"))?;
        if nums.next().is_some() {
            return Err(parse_err(clause, "too many coordinates"));
        }
        parsed.target = Some(GridPos::new(x, y));
        Ok(())
    } else if let Some(q) = dest
        .strip_prefix("the ")
        .and_then(|d| d.strip_suffix(" quadrant"))
        .and_then(|w| QUADRANT_WORDS.iter().position(|&o| o == w))
    {
        parsed.quadrant = Some(q as u8 + 1);
        Ok(())
    } else {
        Err(parse_err(clause, "bad destination"))
    }
}

fn shape_from_word(w: &str) -> Option<Shape> {
    [Shape::Digit, Shape::Cube, Shape::Sphere, Shape::Cylinder, Shape::Cone, Shape::Snitch]
        .into_iter()
        .find(|s| s.word() == w)
}

fn size_from_word(w: &str) -> Option<Size> {
    Size::ALL.into_iter().find(|s| s.word() == w)
}

fn color_from_word(w: &str) -> Option<Color> {
    let mut all = Color::REGULAR.to_vec();
    all.push(Color::Gold);
    all.into_iter().find(|c| c.word() == w)
}

fn material_from_word(w: &str) -> Option<Material> {
    Material::ALL.into_iter().find(|m| m.word() == w)
}

// ---------------------------------------------------------------------------
// Fidelity
// ---------------------------------------------------------------------------

/// Check that parsing the explicit caption of a script recovers exactly the
/// scripted subjects, verbs, and destinations, clause by clause.
pub fn explicit_caption_matches_script(script: &SceneScript, caption: &str) -> bool {
    let Ok(clauses) = parse_caption(caption) else { return false };
    if clauses.len() != script.actions.len() {
        return false;
    }
    script.actions.iter().zip(clauses.iter()).all(|(action, clause)| {
        let subject = script.object(action.subject_id);
        if clause.verb != action.verb() {
            return false;
        }
        match &clause.subject {
            ParsedSubject::Digit(d) => {
                let ActionKind::GlyphMove { direction, bounce, .. } = &action.kind else {
                    return false;
                };
                Some(*d) == subject.digit_class
                    && clause.direction.as_ref() == Some(direction)
                    && clause.bounce.as_ref() == Some(bounce)
            }
            ParsedSubject::Object(r) => {
                // explicit references carry all attributes except for
                // bare-named objects (snitch, and everything in the
                // two-object set)
                let bare = subject.shape == Shape::Snitch
                    || script.kind == DatasetKind::CaterV1;
                let subject_ok = if bare {
                    r.shape == subject.shape
                        && r.size.is_none()
                        && r.color.is_none()
                        && r.material.is_none()
                } else {
                    r == &ObjectRef {
                        size: Some(subject.size),
                        color: Some(subject.color),
                        material: Some(subject.material),
                        shape: subject.shape,
                    }
                };
                let target_ok = clause.target == action.target();
                let object_ok = match action.object_id() {
                    Some(id) => clause
                        .object
                        .as_ref()
                        .is_some_and(|o| o.matches(script.object(id))),
                    None => clause.object.is_none(),
                };
                subject_ok && target_ok && object_ok
            }
        }
    })
}
