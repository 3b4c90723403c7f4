//! Scene descriptions, kinds, and the raw video container.
//!
//! A scene is fully described by its objects, its actions, and the kinematic
//! parameters embedded in them; per-frame trajectories are a pure function of
//! those (see [`crate::sampler::compute_trajectories`]), which is what makes
//! dataset generation reproducible and lets evaluation code reason about
//! ground-truth motion exactly.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

/// Which of the five dataset families a sample belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SingleMnist,
    DoubleMnist,
    ModifiedMnist,
    CaterV1,
    CaterV2,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::SingleMnist,
        DatasetKind::DoubleMnist,
        DatasetKind::ModifiedMnist,
        DatasetKind::CaterV1,
        DatasetKind::CaterV2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::SingleMnist => "single_mnist",
            DatasetKind::DoubleMnist => "double_mnist",
            DatasetKind::ModifiedMnist => "modified_mnist",
            DatasetKind::CaterV1 => "cater_v1",
            DatasetKind::CaterV2 => "cater_v2",
        }
    }

    pub fn parse(s: &str) -> Option<DatasetKind> {
        DatasetKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }

    pub fn is_glyph(self) -> bool {
        matches!(
            self,
            DatasetKind::SingleMnist | DatasetKind::DoubleMnist | DatasetKind::ModifiedMnist
        )
    }

    /// Canvas edge in pixels.
    pub fn canvas(self) -> usize {
        if self.is_glyph() {
            64
        } else {
            128
        }
    }

    pub fn channels(self) -> usize {
        if self.is_glyph() {
            1
        } else {
            3
        }
    }

    /// Number of raw frames rendered per sample, before speed subsampling.
    pub fn raw_frames(self) -> usize {
        if self.is_glyph() {
            20
        } else {
            60
        }
    }

    /// Frame-sampling interval range `(a_min, a_max)` that the speed scalar
    /// maps into.
    pub fn interval_range(self) -> (f64, f64) {
        if self.is_glyph() {
            (1.0, 2.0)
        } else {
            (3.0, 6.0)
        }
    }

    /// Default (train, test) sample counts.
    pub fn default_counts(self) -> (usize, usize) {
        match self {
            DatasetKind::SingleMnist | DatasetKind::DoubleMnist => (10_000, 2_000),
            DatasetKind::ModifiedMnist | DatasetKind::CaterV2 => (24_000, 6_000),
            DatasetKind::CaterV1 => (3_500, 1_500),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Objects
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Digit,
    Cube,
    Sphere,
    Cylinder,
    Cone,
    Snitch,
}

impl Shape {
    pub fn word(self) -> &'static str {
        match self {
            Shape::Digit => "digit",
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
            Shape::Cone => "cone",
            Shape::Snitch => "snitch",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Size {
    Small,
    Medium,
    Large,
}

impl Size {
    pub const ALL: [Size; 3] = [Size::Small, Size::Medium, Size::Large];

    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Medium => "medium",
            Size::Large => "large",
        }
    }

    /// Base radius in pixels on the tabletop canvas.
    pub fn radius_px(self) -> f32 {
        match self {
            Size::Small => 7.0,
            Size::Medium => 10.0,
            Size::Large => 13.0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
    Purple,
    Cyan,
    Brown,
    Gray,
    Gold,
}

impl Color {
    /// Palette available to ordinary objects (everything except the snitch's
    /// reserved gold).
    pub const REGULAR: [Color; 8] = [
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Yellow,
        Color::Purple,
        Color::Cyan,
        Color::Brown,
        Color::Gray,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Cyan => "cyan",
            Color::Brown => "brown",
            Color::Gray => "gray",
            Color::Gold => "gold",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [196, 60, 50],
            Color::Blue => [55, 90, 200],
            Color::Green => [60, 160, 75],
            Color::Yellow => [220, 200, 60],
            Color::Purple => [140, 70, 180],
            Color::Cyan => [70, 190, 200],
            Color::Brown => [130, 90, 55],
            Color::Gray => [120, 120, 125],
            Color::Gold => [222, 178, 40],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Metal,
    Rubber,
}

impl Material {
    pub const ALL: [Material; 2] = [Material::Metal, Material::Rubber];

    pub fn word(self) -> &'static str {
        match self {
            Material::Metal => "metal",
            Material::Rubber => "rubber",
        }
    }
}

/// A point on the tabletop's integer coordinate lattice. The visible plane
/// spans `[-3, 3]` on both axes; `y` grows upward (toward the top of the
/// rendered frame).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct GridPos {
    pub x: i32,
    pub y: i32,
}

impl GridPos {
    pub const RANGE: i32 = 3;

    pub fn new(x: i32, y: i32) -> GridPos {
        GridPos { x, y }
    }

    pub fn in_bounds(self) -> bool {
        self.x.abs() <= Self::RANGE && self.y.abs() <= Self::RANGE
    }

    pub fn dist(self, other: GridPos) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        (dx * dx + dy * dy).sqrt()
    }

    /// Math quadrant 1..=4 when both coordinates are nonzero.
    pub fn quadrant(self) -> Option<u8> {
        if self.x == 0 || self.y == 0 {
            return None;
        }
        Some(match (self.x > 0, self.y > 0) {
            (true, true) => 1,
            (false, true) => 2,
            (false, false) => 3,
            (true, false) => 4,
        })
    }
}

/// Where an object sits when the clip starts.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPosition {
    /// Top-left corner of a glyph in canvas pixels.
    Pixel { x: f32, y: f32 },
    /// Lattice point on the tabletop plane.
    Grid(GridPos),
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub shape: Shape,
    /// Digit class 0..=9 for glyph objects.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub digit_class: Option<u8>,
    /// Index into the embedded glyph corpus for this digit class.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub glyph_index: Option<u32>,
    pub size: Size,
    pub color: Color,
    pub material: Material,
    pub start: StartPosition,
    /// True for scene filler that never acts and never moves.
    pub is_distractor: bool,
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] =
        [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    pub fn word(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        Direction::ALL.iter().copied().find(|d| d.word() == s)
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Direction::Left | Direction::Right)
    }

    /// Unit step in canvas pixel coordinates (y grows downward on canvas).
    pub fn step(self) -> (f32, f32) {
        match self {
            Direction::Left => (-1.0, 0.0),
            Direction::Right => (1.0, 0.0),
            Direction::Up => (0.0, -1.0),
            Direction::Down => (0.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BounceMode {
    /// Glide to the border and stay there.
    Stop,
    /// Reverse at the border and glide to the opposite border.
    BounceOnce,
}

/// Verb vocabulary shared by captions and parsing.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Rotate,
    Contain,
    PickPlace,
    Slide,
    GlyphMove,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum ActionKind {
    /// Spin in place; lasts the whole clip and never settles.
    Rotate,
    /// The subject cone is lifted, carried over `object_id`, and set down on
    /// it, hiding it for the rest of the clip.
    Contain { object_id: u32, duration: u32 },
    /// Lift, carry to `target`, set down.
    PickPlace { target: GridPos, duration: u32 },
    /// Glide along the plane to `target`.
    Slide { target: GridPos, duration: u32 },
    /// Straight-line glyph motion: `steps_to_border` raw-frame steps to the
    /// facing border, then (bounce only) `steps_back` to the opposite border.
    GlyphMove {
        direction: Direction,
        bounce: BounceMode,
        steps_to_border: u32,
        steps_back: u32,
    },
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ActionSpec {
    pub subject_id: u32,
    #[serde(flatten)]
    pub kind: ActionKind,
}

impl ActionSpec {
    pub fn verb(&self) -> Verb {
        match self.kind {
            ActionKind::Rotate => Verb::Rotate,
            ActionKind::Contain { .. } => Verb::Contain,
            ActionKind::PickPlace { .. } => Verb::PickPlace,
            ActionKind::Slide { .. } => Verb::Slide,
            ActionKind::GlyphMove { .. } => Verb::GlyphMove,
        }
    }

    /// Secondary object for contain.
    pub fn object_id(&self) -> Option<u32> {
        match self.kind {
            ActionKind::Contain { object_id, .. } => Some(object_id),
            _ => None,
        }
    }

    /// Destination lattice point for translating tabletop actions.
    pub fn target(&self) -> Option<GridPos> {
        match self.kind {
            ActionKind::PickPlace { target, .. } | ActionKind::Slide { target, .. } => {
                Some(target)
            }
            _ => None,
        }
    }

    /// Quadrant of the destination, when one exists and is unambiguous.
    pub fn quadrant(&self) -> Option<u8> {
        self.target().and_then(GridPos::quadrant)
    }

    /// 1-based raw frame index at which the subject reaches its final state,
    /// or `None` for motion that lasts the entire clip.
    pub fn end_frame(&self) -> Option<u32> {
        match self.kind {
            ActionKind::Rotate => None,
            ActionKind::Contain { duration, .. }
            | ActionKind::PickPlace { duration, .. }
            | ActionKind::Slide { duration, .. } => Some(duration + 1),
            ActionKind::GlyphMove { steps_to_border, steps_back, .. } => {
                Some(steps_to_border + steps_back + 1)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scripts and trajectories
// ---------------------------------------------------------------------------

/// One object's state at one raw frame. Positions are canvas pixels: glyph
/// top-left corner for digit scenes, object center for tabletop scenes.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct TrackFrame {
    pub x: f32,
    pub y: f32,
    pub angle: f32,
    pub scale: f32,
    pub visible: bool,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub object_id: u32,
    pub frames: Vec<TrackFrame>,
}

/// Complete recipe for one sample: everything the renderer and the caption
/// writer need, and everything evaluation needs to reason about ground truth.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SceneScript {
    pub kind: DatasetKind,
    pub objects: Vec<ObjectSpec>,
    pub actions: Vec<ActionSpec>,
    pub raw_frames: usize,
    pub tracks: Vec<ObjectTrack>,
}

impl SceneScript {
    pub fn object(&self, id: u32) -> &ObjectSpec {
        self.objects.iter().find(|o| o.id == id).expect("object id present in script")
    }

    pub fn track(&self, id: u32) -> &ObjectTrack {
        self.tracks.iter().find(|t| t.object_id == id).expect("track present in script")
    }

    /// 1-based raw frame at which all scripted motion has settled, or `None`
    /// if some action (rotation) lasts the whole clip.
    pub fn motion_end_frame(&self) -> Option<u32> {
        let mut end = 1u32;
        for a in &self.actions {
            match a.end_frame() {
                Some(e) => end = end.max(e),
                None => return None,
            }
        }
        Some(end)
    }
}

// ---------------------------------------------------------------------------
// Raw video container
// ---------------------------------------------------------------------------

const VIDEO_MAGIC: &[u8; 4] = b"MVID";
const VIDEO_VERSION: u8 = 1;

/// Dense uint8 video tensor `[t, h, w, c]`, row-major.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VideoTensor {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<u8>,
}

impl VideoTensor {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> VideoTensor {
        VideoTensor { t, h, w, c, data: vec![0; t * h * w * c] }
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let fs = self.h * self.w * self.c;
        &self.data[i * fs..(i + 1) * fs]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [u8] {
        let fs = self.h * self.w * self.c;
        &mut self.data[i * fs..(i + 1) * fs]
    }

    /// New video keeping only the given frame indices (0-based).
    pub fn select_frames(&self, indices: &[usize]) -> VideoTensor {
        let mut out = VideoTensor::zeros(indices.len(), self.h, self.w, self.c);
        for (j, &i) in indices.iter().enumerate() {
            assert!(i < self.t, "frame index {i} out of range {}", self.t);
            out.frame_mut(j).copy_from_slice(self.frame(i));
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(VIDEO_MAGIC)?;
        w.write_all(&[VIDEO_VERSION])?;
        for dim in [self.t, self.h, self.w, self.c] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        w.write_all(&self.data)
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<VideoTensor> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic[..4] != VIDEO_MAGIC || magic[4] != VIDEO_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "not a video tensor file (bad magic or version)",
            ));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let [t, h, w, c] = dims;
        let mut data = vec![0u8; t * h * w * c];
        r.read_exact(&mut data)?;
        Ok(VideoTensor { t, h, w, c, data })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> std::io::Result<VideoTensor> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrants_match_sign_conventions() {
        assert_eq!(GridPos::new(1, 3).quadrant(), Some(1));
        assert_eq!(GridPos::new(-1, 3).quadrant(), Some(2));
        assert_eq!(GridPos::new(-2, -2).quadrant(), Some(3));
        assert_eq!(GridPos::new(1, -3).quadrant(), Some(4));
        assert_eq!(GridPos::new(0, 2).quadrant(), None);
        assert_eq!(GridPos::new(2, 0).quadrant(), None);
    }

    #[test]
    fn video_tensor_round_trips_through_bytes() {
        let mut v = VideoTensor::zeros(3, 4, 5, 2);
        for (i, b) in v.data.iter_mut().enumerate() {
            *b = (i % 251) as u8;
        }
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let back = VideoTensor::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn glyph_move_end_frame_covers_both_legs() {
        let a = ActionSpec {
            subject_id: 0,
            kind: ActionKind::GlyphMove {
                direction: Direction::Right,
                bounce: BounceMode::BounceOnce,
                steps_to_border: 3,
                steps_back: 8,
            },
        };
        assert_eq!(a.end_frame(), Some(12));
    }
}
