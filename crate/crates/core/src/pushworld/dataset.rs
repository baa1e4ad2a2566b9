//! Push-episode generation and the `EVFD` dataset file.
//!
//! ```text
//! "EVFD" u16 version=1
//! u32 object_id
//! u16 shape_id, f32 mass, f32 friction, f32 com_x, f32 com_y
//! u32 N, u16 T, u16 H, u16 W
//! N x { T*H*W u8 frames (round(255 * v)), T*H*W u8 masks, (T-1)*2 f32 actions }
//! ```

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::checkpoint::write_atomic;
use crate::error::{invalid, EvfError, Result};

use super::object::ObjectSpec;
use super::render::{render, Frame};
use super::sim::{step, Action, WorldState};

pub const MAGIC: &[u8; 4] = b"EVFD";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 4 + 2 + 4 + 2 + 16 + 4 + 2 + 2 + 2;

/// Starting distance of the pusher from the object centroid.
const START_DISTANCE: f32 = 0.3;
const MAX_LATERAL: f32 = 0.05;
const SPEED_RANGE: (f32, f32) = (0.03, 0.06);
const PLACEMENT_JITTER: f32 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
    pub object_id: u32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub object_id: u32,
    pub spec: ObjectSpec,
    pub trajectories: Vec<Trajectory>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }
}

/// Initial world state and straight-push action for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushScript {
    pub start: WorldState,
    pub action: Action,
}

impl PushScript {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let x = 0.5 + rng.random_range(-PLACEMENT_JITTER..PLACEMENT_JITTER);
        let y = 0.5 + rng.random_range(-PLACEMENT_JITTER..PLACEMENT_JITTER);
        let theta = rng.random_range(-PI..PI);
        let ray = rng.random_range(0.0..2.0 * PI);
        let lateral = rng.random_range(-MAX_LATERAL..MAX_LATERAL);
        let speed = rng.random_range(SPEED_RANGE.0..SPEED_RANGE.1);
        let (s, c) = ray.sin_cos();
        let px = x + c * START_DISTANCE - s * lateral;
        let py = y + s * START_DISTANCE + c * lateral;
        Self {
            start: WorldState::new(x, y, theta, px, py),
            action: Action::new(-c * speed, -s * speed),
        }
    }

    pub fn run(&self, spec: &ObjectSpec, steps: usize) -> Vec<WorldState> {
        let mut states = Vec::with_capacity(steps + 1);
        states.push(self.start);
        for _ in 0..steps {
            let next = step(states.last().unwrap(), spec, self.action);
            states.push(next);
        }
        states
    }
}

/// Total centroid path length over a state sequence.
pub fn total_displacement(states: &[WorldState]) -> f32 {
    states.windows(2).map(|w| w[0].distance_to(&w[1])).sum()
}

pub fn rollout_trajectory(spec: &ObjectSpec, object_id: u32, script: &PushScript, t: usize) -> Trajectory {
    let states = script.run(spec, t - 1);
    Trajectory {
        frames: states.iter().map(|s| render(s, spec)).collect(),
        actions: vec![script.action; t - 1],
        object_id,
    }
}

/// Per-trajectory RNG stream, independent of how many trajectories precede it.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn generate_dataset(spec: &ObjectSpec, object_id: u32, n: usize, t: usize, seed: u64) -> Result<DatasetFile> {
    if n == 0 || t < 2 {
        return Err(invalid(format!("need N >= 1 and T >= 2, got N={n}, T={t}")));
    }
    spec.validate()?;
    let trajectories = (0..n)
        .map(|i| {
            let script = PushScript::sample(&mut trajectory_rng(seed, i));
            rollout_trajectory(spec, object_id, &script, t)
        })
        .collect();
    Ok(DatasetFile {
        object_id,
        spec: *spec,
        trajectories,
    })
}

pub fn trajectory_bytes(t: usize, h: usize, w: usize) -> usize {
    2 * t * h * w + (t - 1) * 8
}

pub fn encode_dataset(ds: &DatasetFile) -> Result<Vec<u8>> {
    let first = ds
        .trajectories
        .first()
        .ok_or_else(|| invalid("dataset has no trajectories"))?;
    let t = first.frames.len();
    let (h, w) = (first.frames[0].height, first.frames[0].width);
    let mut out = Vec::with_capacity(HEADER_BYTES + ds.len() * trajectory_bytes(t, h, w));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ds.object_id.to_le_bytes());
    out.extend_from_slice(&ds.spec.shape_id.to_le_bytes());
    for v in [ds.spec.mass, ds.spec.friction, ds.spec.com_offset[0], ds.spec.com_offset[1]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(t as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    for traj in &ds.trajectories {
        if traj.frames.len() != t || traj.actions.len() != t - 1 || traj.object_id != ds.object_id {
            return Err(invalid("inconsistent trajectory in dataset"));
        }
        for f in &traj.frames {
            if f.height != h || f.width != w {
                return Err(invalid("inconsistent frame size in dataset"));
            }
            out.extend(f.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        for f in &traj.frames {
            out.extend(f.pusher_mask.iter().map(|&m| m as u8));
        }
        for a in &traj.actions {
            out.extend_from_slice(&a.dx.to_le_bytes());
            out.extend_from_slice(&a.dy.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(EvfError::Format {
                offset: self.pos as u64,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<DatasetFile> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(EvfError::Format {
            offset: 0,
            detail: "bad magic, expected EVFD".into(),
        });
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(EvfError::Format {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let object_id = c.u32("object_id")?;
    let spec = ObjectSpec {
        shape_id: c.u16("shape_id")?,
        mass: c.f32("mass")?,
        friction: c.f32("friction")?,
        com_offset: [c.f32("com_x")?, c.f32("com_y")?],
    };
    let n = c.u32("N")? as usize;
    let t = c.u16("T")? as usize;
    let h = c.u16("H")? as usize;
    let w = c.u16("W")? as usize;
    if t < 2 || h == 0 || w == 0 {
        return Err(EvfError::Format {
            offset: c.pos as u64,
            detail: format!("bad dimensions T={t} H={h} W={w}"),
        });
    }
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let px = c.take(t * h * w, "frames")?;
        let mk = c.take(t * h * w, "masks")?;
        let frames = (0..t)
            .map(|k| Frame {
                height: h,
                width: w,
                pixels: px[k * h * w..(k + 1) * h * w].iter().map(|&b| b as f32 / 255.0).collect(),
                pusher_mask: mk[k * h * w..(k + 1) * h * w].iter().map(|&b| b != 0).collect(),
            })
            .collect();
        let mut actions = Vec::with_capacity(t - 1);
        for _ in 0..t - 1 {
            let dx = c.f32("action")?;
            let dy = c.f32("action")?;
            actions.push(Action { dx, dy });
        }
        trajectories.push(Trajectory {
            frames,
            actions,
            object_id,
        });
    }
    if c.pos != buf.len() {
        return Err(EvfError::Format {
            offset: c.pos as u64,
            detail: "trailing bytes".into(),
        });
    }
    Ok(DatasetFile {
        object_id,
        spec,
        trajectories,
    })
}

pub fn write_dataset(ds: &DatasetFile, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    if !path.exists() {
        return Err(EvfError::MissingPath(path.to_path_buf()));
    }
    decode_dataset(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Plain-text manifest: one `<tag> <path>` line per dataset file, paths
/// relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<(Split, PathBuf)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(s, p)| format!("{} {}\n", s.tag(), p.display()))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tag, path) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| EvfError::Config(format!("manifest line {}: expected `<tag> <path>`", i + 1)))?;
            let split = match tag {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(EvfError::Config(format!(
                        "manifest line {}: unknown split `{other}`",
                        i + 1
                    )))
                }
            };
            entries.push((split, PathBuf::from(path.trim())));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        if !path.exists() {
            return Err(EvfError::MissingPath(path.to_path_buf()));
        }
        let m = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    /// Reads every dataset of one split, failing on the first unreadable file.
    pub fn load_split(path: &Path, split: Split) -> Result<Vec<DatasetFile>> {
        let (m, base) = Self::read(path)?;
        m.entries
            .iter()
            .filter(|(s, _)| *s == split)
            .map(|(_, p)| read_dataset(&base.join(p)))
            .collect()
    }
}
