//! Motion-end-frame analysis: when does a clip stop moving? Two paths that
//! must agree on rendered ground truth: an exact script-arithmetic path and
//! a pixel-change detector usable on generated video.

use crate::EvalError;
use mage_datagen::types::{SceneScript, VideoTensor};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// Default detector threshold as a fraction of the largest per-frame change
/// observed in the clip.
pub const DEFAULT_TAU_FRAC: f64 = 0.02;

/// 1-based frame at which motion has settled, or a sentinel for clips that
/// never settle (e.g. rotation lasting the whole clip).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MotionEnd {
    Frame(usize),
    NoEnd,
}

impl MotionEnd {
    pub fn frame(self) -> Option<usize> {
        match self {
            MotionEnd::Frame(f) => Some(f),
            MotionEnd::NoEnd => None,
        }
    }
}

impl Serialize for MotionEnd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MotionEnd::Frame(f) => s.serialize_u64(*f as u64),
            MotionEnd::NoEnd => s.serialize_str("no-end"),
        }
    }
}

impl<'de> Deserialize<'de> for MotionEnd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(MotionEnd::Frame(n as usize)),
            Raw::Text(t) if t == "no-end" => Ok(MotionEnd::NoEnd),
            Raw::Text(t) => Err(de::Error::custom(format!("bad motion end {t:?}"))),
        }
    }
}

/// Largest absolute pixel change between consecutive frames; entry `i` is
/// the transition from frame `i+1` to frame `i+2` (1-based frames).
pub fn per_frame_change(video: &VideoTensor) -> Vec<u8> {
    (1..video.t)
        .map(|t| {
            video
                .frame(t - 1)
                .iter()
                .zip(video.frame(t))
                .map(|(&a, &b)| a.abs_diff(b))
                .max()
                .unwrap_or(0)
        })
        .collect()
}

/// Detector path: the first frame after which every remaining per-frame
/// change stays below `tau_frac` of the clip's largest change. A fully
/// static clip ends at frame 1; a clip still changing into its final frame
/// never ends.
pub fn detect_motion_end(video: &VideoTensor, tau_frac: f64) -> MotionEnd {
    let deltas = per_frame_change(video);
    let max = deltas.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return MotionEnd::Frame(1);
    }
    let tau = tau_frac * max as f64;
    let last_active = deltas.iter().rposition(|&d| d as f64 > tau).expect("max > 0");
    if last_active == deltas.len() - 1 {
        MotionEnd::NoEnd
    } else {
        // Transition i runs frame i+1 → i+2; stillness begins at i+2.
        MotionEnd::Frame(last_active + 2)
    }
}

/// Intensity centroid of one frame in pixel coordinates (x right, y down);
/// `None` for an all-black frame. Meaningful on dark-background clips where
/// pixel mass IS the object, such as the glyph sets.
pub fn frame_centroid(frame: &[u8], h: usize, w: usize, c: usize) -> Option<(f64, f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut mass = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * c;
            let m: f64 = (0..c).map(|ch| frame[i + ch] as f64).sum();
            sx += (x as f64 + 0.5) * m;
            sy += (y as f64 + 0.5) * m;
            mass += m;
        }
    }
    if mass == 0.0 {
        None
    } else {
        Some((sx / mass, sy / mass))
    }
}

/// Direction the pixel mass first travels: the centroid displacement (dx, dy)
/// at the earliest frame where it exceeds `min_px` pixels. Reading the first
/// leg keeps the sign faithful for motions that later bounce back past their
/// start. `None` when the centroid never travels that far or a frame is
/// all-black.
pub fn initial_centroid_displacement(video: &VideoTensor, min_px: f64) -> Option<(f64, f64)> {
    let (x0, y0) = frame_centroid(video.frame(0), video.h, video.w, video.c)?;
    for t in 1..video.t {
        let (x, y) = frame_centroid(video.frame(t), video.h, video.w, video.c)?;
        let (dx, dy) = (x - x0, y - y0);
        if (dx * dx + dy * dy).sqrt() >= min_px {
            return Some((dx, dy));
        }
    }
    None
}

/// Ground-truth path: map the script's raw motion end through the chosen
/// subsample (0-based raw indices, ascending). The end frame is the first
/// sampled frame taken at or after the raw frame where motion settled.
pub fn script_end_frame(script: &SceneScript, subsample: &[usize]) -> Result<MotionEnd, EvalError> {
    if subsample.is_empty() {
        return Err(EvalError::Input("empty subsample".into()));
    }
    if subsample.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::Input("subsample indices must be strictly ascending".into()));
    }
    let Some(raw_end) = script.motion_end_frame() else {
        return Ok(MotionEnd::NoEnd);
    };
    let settled0 = raw_end as usize - 1; // first settled raw frame, 0-based
    match subsample.iter().position(|&idx| idx >= settled0) {
        Some(k) => Ok(MotionEnd::Frame(k + 1)),
        None => Ok(MotionEnd::NoEnd),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mage_datagen::render::render_scene;
    use mage_datagen::sampler::sample_scene;
    use mage_datagen::types::{ActionKind, DatasetKind, Split, Verb};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moving_then_still(t: usize, still_from: usize) -> VideoTensor {
        let mut v = VideoTensor::zeros(t, 16, 16, 1);
        for ti in 0..t {
            let pos = ti.min(still_from - 1); // 1-based settle at `still_from`
            v.frame_mut(ti)[pos] = 255;
        }
        v
    }

    #[test]
    fn detector_handles_static_settling_and_endless_clips() {
        let static_v = VideoTensor::zeros(6, 16, 16, 1);
        assert_eq!(detect_motion_end(&static_v, DEFAULT_TAU_FRAC), MotionEnd::Frame(1));

        let v = moving_then_still(8, 5);
        assert_eq!(detect_motion_end(&v, DEFAULT_TAU_FRAC), MotionEnd::Frame(5));

        let endless = moving_then_still(8, 8);
        assert_eq!(detect_motion_end(&endless, DEFAULT_TAU_FRAC), MotionEnd::NoEnd);
    }

    #[test]
    fn subsampled_slide_ending_at_raw_frame_12_with_interval_3() {
        // Raw 1-based end frame 12, sampled at raw 0-based indices 0,3,6,9,12:
        // the first sampled frame at/after settling (0-based 11) is index 12,
        // the fifth sampled frame.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let script = loop {
            let s = sample_scene(DatasetKind::CaterV1, Split::Train, &mut rng);
            if s.actions.len() == 1 && s.actions[0].verb() == Verb::Slide {
                break s;
            }
        };
        let mut script = script;
        let ActionKind::Slide { ref mut duration, .. } = script.actions[0].kind else {
            unreachable!()
        };
        *duration = 11; // end_frame = duration + 1 = 12
        let subsample: Vec<usize> = (0..5).map(|k| 3 * k).collect();
        assert_eq!(script_end_frame(&script, &subsample).unwrap(), MotionEnd::Frame(5));

        // Identity subsample reproduces the raw end frame.
        let identity: Vec<usize> = (0..script.raw_frames).collect();
        assert_eq!(script_end_frame(&script, &identity).unwrap(), MotionEnd::Frame(12));

        // Sampling that stops before the motion settles has no end frame.
        assert_eq!(script_end_frame(&script, &[0, 2, 4]).unwrap(), MotionEnd::NoEnd);
        assert!(script_end_frame(&script, &[]).is_err());
        assert!(script_end_frame(&script, &[3, 3]).is_err());
    }

    #[test]
    fn detector_agrees_with_scripts_on_rendered_slide_and_pickplace() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0usize;
        let mut agree = 0usize;
        let mut tries = 0usize;
        while checked < 120 && tries < 3000 {
            tries += 1;
            let script = sample_scene(DatasetKind::CaterV1, Split::Train, &mut rng);
            let translating = script
                .actions
                .iter()
                .all(|a| matches!(a.verb(), Verb::Slide | Verb::PickPlace));
            if !translating {
                continue;
            }
            checked += 1;
            let video = render_scene(&script);
            let identity: Vec<usize> = (0..script.raw_frames).collect();
            let want = script_end_frame(&script, &identity).unwrap();
            let got = detect_motion_end(&video, DEFAULT_TAU_FRAC);
            if got == want {
                agree += 1;
            } else {
                eprintln!("disagreement: script {want:?} detector {got:?}");
            }
        }
        assert_eq!(checked, 120, "not enough slide/pick-place scenes sampled");
        let frac = agree as f64 / checked as f64;
        assert!(frac >= 0.99, "detector agreement {frac:.3} below 0.99");
    }

    #[test]
    fn rotation_clips_never_end_on_either_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let script = loop {
            let s = sample_scene(DatasetKind::CaterV1, Split::Train, &mut rng);
            if s.actions.iter().any(|a| a.verb() == Verb::Rotate)
                && s.actions.iter().all(|a| a.end_frame().is_none())
            {
                break s;
            }
        };
        let identity: Vec<usize> = (0..script.raw_frames).collect();
        assert_eq!(script_end_frame(&script, &identity).unwrap(), MotionEnd::NoEnd);
        let video = render_scene(&script);
        assert_eq!(detect_motion_end(&video, DEFAULT_TAU_FRAC), MotionEnd::NoEnd);
    }

    #[test]
    fn centroid_tracks_a_moving_dot_through_a_bounce() {
        // Dot walks right 1 px per frame for 5 frames, then returns 7: the
        // final offset is negative but the first leg reads positive.
        let mut v = VideoTensor::zeros(13, 8, 16, 1);
        let path = [5usize, 6, 7, 8, 9, 10, 9, 8, 7, 6, 5, 4, 3];
        for (t, &x) in path.iter().enumerate() {
            v.frame_mut(t)[4 * 16 + x] = 200;
        }
        let (dx, dy) = initial_centroid_displacement(&v, 2.0).unwrap();
        assert_eq!((dx, dy), (2.0, 0.0), "first leg, not the final offset");

        let black = VideoTensor::zeros(3, 8, 8, 1);
        assert_eq!(frame_centroid(black.frame(0), 8, 8, 1), None);
        assert_eq!(initial_centroid_displacement(&black, 1.0), None);
        // A static dot never clears the travel threshold.
        let mut still = VideoTensor::zeros(4, 8, 8, 1);
        for t in 0..4 {
            still.frame_mut(t)[3 * 8 + 3] = 200;
        }
        assert_eq!(initial_centroid_displacement(&still, 1.0), None);
    }

    #[test]
    fn rendered_glyph_clips_move_their_centroid_along_the_scripted_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..12 {
            let script = sample_scene(DatasetKind::SingleMnist, Split::Train, &mut rng);
            let ActionKind::GlyphMove { direction, .. } = script.actions[0].kind else {
                panic!("glyph scenes move glyphs")
            };
            let video = render_scene(&script);
            let (dx, dy) = initial_centroid_displacement(&video, 2.0).unwrap();
            let ok = match direction {
                mage_datagen::types::Direction::Left => dx < 0.0 && dx.abs() > dy.abs(),
                mage_datagen::types::Direction::Right => dx > 0.0 && dx.abs() > dy.abs(),
                mage_datagen::types::Direction::Up => dy < 0.0 && dy.abs() > dx.abs(),
                mage_datagen::types::Direction::Down => dy > 0.0 && dy.abs() > dx.abs(),
            };
            assert!(ok, "direction {direction:?} but displacement ({dx:.1}, {dy:.1})");
        }
    }

    #[test]
    fn motion_end_serializes_as_number_or_sentinel() {
        assert_eq!(serde_json::to_string(&MotionEnd::Frame(4)).unwrap(), "4");
        assert_eq!(serde_json::to_string(&MotionEnd::NoEnd).unwrap(), "\"no-end\"");
        let f: MotionEnd = serde_json::from_str("7").unwrap();
        assert_eq!(f, MotionEnd::Frame(7));
        let n: MotionEnd = serde_json::from_str("\"no-end\"").unwrap();
        assert_eq!(n, MotionEnd::NoEnd);
        assert!(serde_json::from_str::<MotionEnd>("\"sometime\"").is_err());
    }
}
