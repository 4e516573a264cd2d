//! MOTChallenge text files, frame directories and the synthetic sequence
//! generator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::KeyValues;
use crate::error::{invalid, Error, Result};
use crate::imaging::{decode_pnm, write_pnm, BoundingBox, ImageBuffer};

/// One row of a MOTChallenge file.
///
/// `extra` holds columns 8-10. Detection and result files keep them at -1;
/// ground truth written by the generator stores class 1 and the visibility
/// ratio in columns 8 and 9, as in the MOT16 ground-truth layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame: u32,
    pub id: i64,
    pub bbox: BoundingBox,
    pub conf: f64,
    pub extra: [f64; 3],
}

impl FrameRecord {
    pub fn detection(frame: u32, bbox: BoundingBox, conf: f64) -> Self {
        Self {
            frame,
            id: -1,
            bbox,
            conf,
            extra: [-1.0; 3],
        }
    }

    pub fn track(frame: u32, id: i64, bbox: BoundingBox) -> Self {
        Self {
            frame,
            id,
            bbox,
            conf: 1.0,
            extra: [-1.0; 3],
        }
    }

    /// Visibility ratio for ground-truth rows; 1 when the column is unset.
    pub fn visibility(&self) -> f64 {
        if self.extra[1] >= 0.0 {
            self.extra[1]
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedMot {
    pub records: Vec<FrameRecord>,
    /// Rows dropped for a nonpositive box size.
    pub skipped: usize,
}

pub fn parse_mot_file(path: &Path) -> Result<ParsedMot> {
    let text = fs::read_to_string(path)?;
    let parsed = parse_mot_text(&text, path)?;
    if parsed.skipped > 0 {
        log::warn!(
            "{}: skipped {} rows with nonpositive box size",
            path.display(),
            parsed.skipped
        );
    }
    Ok(parsed)
}

/// Parses MOTChallenge rows; `origin` is only used in error messages.
pub fn parse_mot_text(text: &str, origin: &Path) -> Result<ParsedMot> {
    let mut out = ParsedMot::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 || fields.len() > 10 {
            return Err(err(format!("expected 6 to 10 fields, found {}", fields.len())));
        }
        let mut vals = [-1.0f64; 10];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f
                .parse::<f64>()
                .map_err(|_| err(format!("field {} is not a number: {f:?}", k + 1)))?;
            if !vals[k].is_finite() {
                return Err(err(format!("field {} is not finite", k + 1)));
            }
        }
        if vals[0] < 1.0 || vals[0].fract() != 0.0 || vals[1].fract() != 0.0 {
            return Err(err("frame must be a positive integer and id an integer".into()));
        }
        if !(vals[4] > 0.0 && vals[5] > 0.0) {
            out.skipped += 1;
            continue;
        }
        out.records.push(FrameRecord {
            frame: vals[0] as u32,
            id: vals[1] as i64,
            bbox: BoundingBox {
                x: vals[2],
                y: vals[3],
                w: vals[4],
                h: vals[5],
            },
            conf: if fields.len() > 6 { vals[6] } else { -1.0 },
            extra: [vals[7], vals[8], vals[9]],
        });
    }
    Ok(out)
}

fn format_row(r: &FrameRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.frame, r.id, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.conf, r.extra[0], r.extra[1], r.extra[2]
    )
}

/// Writes rows sorted by (frame, id), keeping every field as given.
pub fn write_records(records: &[FrameRecord], path: &Path) -> Result<()> {
    let mut rows = records.to_vec();
    rows.sort_by_key(|r| (r.frame, r.id));
    let mut text = String::new();
    for r in &rows {
        text.push_str(&format_row(r));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes tracker output: conf 1 and unused columns -1.
pub fn write_results(records: &[FrameRecord], path: &Path) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.id <= 0) {
        return Err(invalid(format!("result id must be positive, got {}", r.id)));
    }
    let rows: Vec<FrameRecord> = records
        .iter()
        .map(|r| FrameRecord::track(r.frame, r.id, r.bbox))
        .collect();
    write_records(&rows, path)
}

/// Groups rows by frame number.
pub fn by_frame(records: &[FrameRecord]) -> BTreeMap<u32, Vec<FrameRecord>> {
    let mut map: BTreeMap<u32, Vec<FrameRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.frame).or_default().push(*r);
    }
    map
}

pub fn frame_file_name(frame: u32) -> String {
    format!("{frame:06}.ppm")
}

pub fn write_frames(dir: &Path, frames: &[ImageBuffer]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_pnm(f, &dir.join(frame_file_name(i as u32 + 1)))?;
    }
    Ok(())
}

/// Image files of a frame directory in name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase)
                    .as_deref(),
                Some("ppm" | "pgm" | "pnm" | "png" | "jpg" | "jpeg")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_frame(path: &Path) -> Result<ImageBuffer> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ppm" | "pgm" | "pnm") => decode_pnm(&fs::read(path)?),
        _ => crate::imaging::load_image(path),
    }
}

/// Piecewise-linear path of one identity; present from its first to its
/// last waypoint frame.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySpec {
    pub id: i64,
    /// (frame, center x, center y), frames strictly increasing.
    pub waypoints: Vec<(u32, f64, f64)>,
    pub size: [f64; 2],
    pub color: [f64; 3],
    pub texture_seed: u64,
    /// Drawing order; larger values are drawn on top.
    pub z: i32,
    /// Inclusive frame ranges in which the identity is not drawn.
    pub hidden: Vec<(u32, u32)>,
}

impl IdentitySpec {
    pub fn center_at(&self, frame: u32) -> Option<[f64; 2]> {
        let first = self.waypoints.first()?;
        let last = self.waypoints.last()?;
        if frame < first.0 || frame > last.0 {
            return None;
        }
        for pair in self.waypoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if frame >= a.0 && frame <= b.0 {
                let t = (frame - a.0) as f64 / (b.0 - a.0) as f64;
                return Some([a.1 + t * (b.1 - a.1), a.2 + t * (b.2 - a.2)]);
            }
        }
        Some([first.1, first.2])
    }

    pub fn box_at(&self, frame: u32) -> Option<BoundingBox> {
        self.center_at(frame)
            .map(|c| BoundingBox::from_center(c, self.size[0], self.size[1]))
    }

    fn is_hidden(&self, frame: u32) -> bool {
        self.hidden.iter().any(|&(a, b)| frame >= a && frame <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionNoise {
    /// Standard deviation of the box jitter in pixels.
    pub jitter: f64,
    pub miss_rate: f64,
    /// Probability of one false positive per frame.
    pub fp_rate: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self {
            jitter: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub frames: u32,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub identities: Vec<IdentitySpec>,
    pub noise: DetectionNoise,
    /// Ground-truth boxes with lower visibility produce no detection.
    pub min_detect_visibility: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<ImageBuffer>,
    pub gt: Vec<FrameRecord>,
    pub detections: Vec<FrameRecord>,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Texture color of an identity at a pixel offset from its box corner.
/// Blocks of 4x4 pixels get a seeded perturbation of the base color.
pub fn texture_color(spec: &IdentitySpec, u: usize, v: usize) -> [f64; 3] {
    let block = ((v / 4) as u64) << 32 | (u / 4) as u64;
    let h = mix(spec.texture_seed ^ mix(block));
    let mut c = spec.color;
    for (k, ch) in c.iter_mut().enumerate() {
        let delta = unit(mix(h.wrapping_add(k as u64))) - 0.5;
        *ch = (*ch + 0.5 * delta).clamp(0.0, 1.0);
    }
    c
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.width < 8 || self.height < 8 {
            return Err(invalid("scenario needs at least one frame of 8x8 pixels"));
        }
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        if !rate(self.noise.miss_rate) || !rate(self.noise.fp_rate) || !(self.noise.jitter >= 0.0) {
            return Err(invalid("noise rates must lie in [0,1] and jitter must be nonnegative"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.identities {
            if s.id <= 0 || !ids.insert(s.id) {
                return Err(invalid(format!("identity ids must be positive and unique ({})", s.id)));
            }
            if s.waypoints.is_empty() || !(s.size[0] > 0.0 && s.size[1] > 0.0) {
                return Err(invalid(format!(
                    "identity {} needs waypoints and a positive size",
                    s.id
                )));
            }
            if s.waypoints.windows(2).any(|p| p[1].0 <= p[0].0) {
                return Err(invalid(format!("identity {} waypoint frames must increase", s.id)));
            }
            for &(f, x, y) in &s.waypoints {
                if f == 0 || f > self.frames {
                    return Err(invalid(format!("identity {} waypoint frame {f} out of range", s.id)));
                }
                if !(0.0..=self.width as f64).contains(&x) || !(0.0..=self.height as f64).contains(&y) {
                    return Err(invalid(format!(
                        "identity {} path leaves the frame at ({x}, {y})",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders frames, exact ground truth with visibility, and noisy detections.
pub fn generate_synthetic(scn: &SyntheticScenario, seed: u64) -> Result<SyntheticSequence> {
    scn.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (scn.width, scn.height);
    let mut order: Vec<&IdentitySpec> = scn.identities.iter().collect();
    order.sort_by_key(|s| (s.z, s.id));
    let mut frames = Vec::with_capacity(scn.frames as usize);
    let mut gt = Vec::new();
    let mut detections = Vec::new();
    for frame in 1..=scn.frames {
        let mut img = ImageBuffer::new(w, h, 3, scn.background.repeat(w * h))?;
        // owner[pixel] = index into `order` of the topmost drawn identity
        let mut owner = vec![usize::MAX; w * h];
        let mut own_pixels = vec![0usize; order.len()];
        for (k, spec) in order.iter().enumerate() {
            let Some(b) = spec.box_at(frame) else { continue };
            if spec.is_hidden(frame) {
                continue;
            }
            let (x0, x1, y0, y1) = pixel_span(&b, w, h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let u = (x as f64 + 0.5 - b.x).floor().max(0.0) as usize;
                    let v = (y as f64 + 0.5 - b.y).floor().max(0.0) as usize;
                    let col = texture_color(spec, u, v);
                    for (c, val) in col.iter().enumerate() {
                        img.set(x, y, c, *val);
                    }
                    owner[y * w + x] = k;
                }
            }
            own_pixels[k] = (x1 - x0) * (y1 - y0);
        }
        let mut frame_gt = Vec::new();
        for (k, spec) in order.iter().enumerate() {
            let Some(b) = spec.box_at(frame) else { continue };
            let visible = if spec.is_hidden(frame) || own_pixels[k] == 0 {
                0.0
            } else {
                let (x0, x1, y0, y1) = pixel_span(&b, w, h);
                let mut n = 0usize;
                for y in y0..y1 {
                    for x in x0..x1 {
                        n += usize::from(owner[y * w + x] == k);
                    }
                }
                n as f64 / own_pixels[k] as f64
            };
            frame_gt.push(FrameRecord {
                frame,
                id: spec.id,
                bbox: b,
                conf: 1.0,
                extra: [1.0, visible, -1.0],
            });
        }
        frame_gt.sort_by_key(|r| r.id);
        let normal = Normal::new(0.0, scn.noise.jitter.max(1e-300)).expect("finite sigma");
        for r in &frame_gt {
            if r.visibility() < scn.min_detect_visibility {
                continue;
            }
            if rng.random::<f64>() < scn.noise.miss_rate {
                continue;
            }
            let mut b = r.bbox;
            if scn.noise.jitter > 0.0 {
                b.x += normal.sample(&mut rng);
                b.y += normal.sample(&mut rng);
                b.w = (b.w + normal.sample(&mut rng)).max(2.0);
                b.h = (b.h + normal.sample(&mut rng)).max(2.0);
            }
            detections.push(FrameRecord::detection(frame, b, 1.0));
        }
        if scn.noise.fp_rate > 0.0 && rng.random::<f64>() < scn.noise.fp_rate && !scn.identities.is_empty() {
            let size = scn.identities[rng.random_range(0..scn.identities.len())].size;
            let cx = rng.random_range(0.0..w as f64);
            let cy = rng.random_range(0.0..h as f64);
            let conf = rng.random_range(0.3..1.0);
            detections.push(FrameRecord::detection(
                frame,
                BoundingBox::from_center([cx, cy], size[0], size[1]),
                conf,
            ));
        }
        gt.extend(frame_gt);
        frames.push(img);
    }
    Ok(SyntheticSequence { frames, gt, detections })
}

/// Pixel index ranges whose centers fall inside the box, clipped to the image.
fn pixel_span(b: &BoundingBox, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let idx = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
    (idx(b.x, w), idx(b.x + b.w, w), idx(b.y, h), idx(b.y + b.h, h))
}

fn identity(id: i64, waypoints: Vec<(u32, f64, f64)>, color: [f64; 3], z: i32) -> IdentitySpec {
    IdentitySpec {
        id,
        waypoints,
        size: [20.0, 40.0],
        color,
        texture_seed: 1000 + id as u64 * 7919,
        z,
        hidden: Vec::new(),
    }
}

pub const SCENARIO_NAMES: [&str; 4] = ["single", "crossing2", "occlusion", "five"];

/// Built-in scenarios used by the CLI and the end-to-end tests.
pub fn builtin_scenario(name: &str) -> Result<SyntheticScenario> {
    let base = |frames: u32, identities: Vec<IdentitySpec>| SyntheticScenario {
        frames,
        width: 320,
        height: 240,
        background: [0.45, 0.45, 0.45],
        identities,
        noise: DetectionNoise::default(),
        min_detect_visibility: 0.5,
    };
    let scn = match name {
        "single" => base(
            60,
            vec![identity(
                1,
                vec![(1, 60.0, 120.0), (60, 240.0, 130.0)],
                [0.8, 0.2, 0.2],
                0,
            )],
        ),
        "crossing2" => base(
            80,
            vec![
                identity(1, vec![(1, 50.0, 100.0), (80, 270.0, 140.0)], [0.85, 0.25, 0.2], 1),
                identity(2, vec![(1, 270.0, 100.0), (80, 50.0, 140.0)], [0.2, 0.35, 0.85], 0),
            ],
        ),
        "occlusion" => {
            let mut one = identity(1, vec![(1, 60.0, 120.0), (40, 216.0, 120.0)], [0.2, 0.75, 0.3], 0);
            one.hidden.push((18, 20));
            base(40, vec![one])
        }
        "five" => base(
            200,
            vec![
                identity(1, vec![(1, 40.0, 70.0), (200, 280.0, 90.0)], [0.85, 0.2, 0.2], 1),
                identity(2, vec![(1, 280.0, 70.0), (200, 40.0, 90.0)], [0.2, 0.3, 0.85], 0),
                identity(3, vec![(1, 60.0, 190.0), (200, 260.0, 170.0)], [0.9, 0.8, 0.15], 1),
                identity(4, vec![(1, 260.0, 190.0), (200, 60.0, 170.0)], [0.2, 0.75, 0.3], 0),
                identity(
                    5,
                    vec![(1, 160.0, 40.0), (100, 165.0, 45.0), (200, 160.0, 40.0)],
                    [0.7, 0.3, 0.8],
                    0,
                ),
            ],
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario {other:?}; expected one of {}",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    scn.validate()?;
    Ok(scn)
}

/// Reads a scenario from flat key-value text, e.g.
///
/// ```text
/// frames = 100
/// width = 320
/// height = 240
/// background = 0.45 0.45 0.45
/// noise.jitter = 0
/// identity.1.path = 1:40:120 100:280:120
/// identity.1.size = 20 40
/// identity.1.color = 0.8 0.2 0.2
/// identity.1.hidden = 30-32
/// ```
pub fn parse_scenario(kv: &KeyValues) -> Result<SyntheticScenario> {
    let mut scn = SyntheticScenario {
        frames: 100,
        width: 320,
        height: 240,
        background: [0.45; 3],
        identities: Vec::new(),
        noise: DetectionNoise::default(),
        min_detect_visibility: 0.5,
    };
    let mut ids: BTreeMap<i64, IdentitySpec> = BTreeMap::new();
    for (key, value) in kv.iter() {
        let bad = |what: &str| Error::Config(format!("{key}: {what}: {value:?}"));
        let nums = || -> Result<Vec<f64>> {
            value
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("expected numbers")))
                .collect()
        };
        let one = || -> Result<f64> {
            match nums()?.as_slice() {
                [v] => Ok(*v),
                _ => Err(bad("expected one number")),
            }
        };
        match key {
            "frames" => scn.frames = one()? as u32,
            "width" => scn.width = one()? as usize,
            "height" => scn.height = one()? as usize,
            "background" => {
                scn.background = match nums()?.as_slice() {
                    [v] => [*v; 3],
                    [r, g, b] => [*r, *g, *b],
                    _ => return Err(bad("expected 1 or 3 numbers")),
                }
            }
            "noise.jitter" => scn.noise.jitter = one()?,
            "noise.miss_rate" => scn.noise.miss_rate = one()?,
            "noise.fp_rate" => scn.noise.fp_rate = one()?,
            "detect.min_visibility" => scn.min_detect_visibility = one()?,
            _ => {
                let mut parts = key.splitn(3, '.');
                let (Some("identity"), Some(id), Some(field)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::Config(format!("unknown scenario key {key:?}")));
                };
                let id: i64 = id.parse().map_err(|_| bad("identity id must be an integer"))?;
                let spec = ids.entry(id).or_insert_with(|| identity(id, Vec::new(), [0.5; 3], 0));
                match field {
                    "path" => {
                        spec.waypoints = value
                            .split_whitespace()
                            .map(|t| {
                                let p: Vec<&str> = t.split(':').collect();
                                match p.as_slice() {
                                    [f, x, y] => Ok((
                                        f.parse().map_err(|_| bad("bad waypoint frame"))?,
                                        x.parse().map_err(|_| bad("bad waypoint x"))?,
                                        y.parse().map_err(|_| bad("bad waypoint y"))?,
                                    )),
                                    _ => Err(bad("waypoints are frame:x:y")),
                                }
                            })
                            .collect::<Result<_>>()?
                    }
                    "size" => match nums()?.as_slice() {
                        [w, h] => spec.size = [*w, *h],
                        _ => return Err(bad("expected width and height")),
                    },
                    "color" => match nums()?.as_slice() {
                        [r, g, b] => spec.color = [*r, *g, *b],
                        _ => return Err(bad("expected 3 numbers")),
                    },
                    "seed" => spec.texture_seed = one()? as u64,
                    "z" => spec.z = one()? as i32,
                    "hidden" => {
                        spec.hidden = value
                            .split_whitespace()
                            .map(|t| {
                                let (a, b) = t.split_once('-').unwrap_or((t, t));
                                Ok((
                                    a.parse().map_err(|_| bad("bad hidden range"))?,
                                    b.parse().map_err(|_| bad("bad hidden range"))?,
                                ))
                            })
                            .collect::<Result<_>>()?
                    }
                    _ => return Err(Error::Config(format!("unknown scenario key {key:?}"))),
                }
            }
        }
    }
    scn.identities = ids.into_values().collect();
    scn.validate()?;
    Ok(scn)
}

/// Writes `gt.txt`, `det.txt` and `frames/` under `dir`.
pub fn write_sequence(seq: &SyntheticSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records(&seq.gt, &dir.join("gt.txt"))?;
    write_records(&seq.detections, &dir.join("det.txt"))?;
    write_frames(&dir.join("frames"), &seq.frames)
}

/// Human-readable one-line summary of a record set.
pub fn summary(records: &[FrameRecord]) -> String {
    let frames = by_frame(records);
    let ids: std::collections::BTreeSet<i64> = records.iter().map(|r| r.id).collect();
    let mut s = String::new();
    let _ = write!(s, "{} rows, {} frames, {} ids", records.len(), frames.len(), ids.len());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PathBuf {
        PathBuf::from("test.txt")
    }

    #[test]
    fn parses_full_detection_row() {
        let out = parse_mot_text("1,-1,10.0,20.0,30.0,40.0,0.9,-1,-1,-1\n", &p()).unwrap();
        let r = out.records[0];
        assert_eq!((r.frame, r.id), (1, -1));
        assert_eq!(r.bbox, BoundingBox::new(10.0, 20.0, 30.0, 40.0).unwrap());
        assert_eq!(r.conf, 0.9);
        assert_eq!(r.extra, [-1.0; 3]);
    }

    #[test]
    fn short_row_defaults_world_coordinates() {
        let out = parse_mot_text("5,7,0,0,10,10,1", &p()).unwrap();
        let r = out.records[0];
        assert_eq!((r.frame, r.id, r.conf), (5, 7, 1.0));
        assert_eq!(r.extra, [-1.0; 3]);
    }

    #[test]
    fn empty_text_is_empty() {
        assert!(parse_mot_text("", &p()).unwrap().records.is_empty());
    }

    #[test]
    fn malformed_field_reports_line() {
        match parse_mot_text("1,1,0,0,5,5\n2,1,x,0,5,5\n", &p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonpositive_boxes_are_skipped_and_counted() {
        let out = parse_mot_text("1,1,0,0,0,5\n1,2,0,0,5,5\n1,3,0,0,5,-1\n", &p()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.skipped, 2);
    }

    #[test]
    fn texture_is_deterministic_and_seed_dependent() {
        let a = identity(1, vec![(1, 10.0, 10.0)], [0.5; 3], 0);
        let mut b = a.clone();
        b.texture_seed += 1;
        assert_eq!(texture_color(&a, 3, 9), texture_color(&a, 3, 9));
        let differs = (0..16).any(|k| texture_color(&a, k * 4, 0) != texture_color(&b, k * 4, 0));
        assert!(differs);
    }

    #[test]
    fn path_interpolates_linearly() {
        let s = identity(1, vec![(1, 0.0, 10.0), (11, 100.0, 30.0)], [0.5; 3], 0);
        assert_eq!(s.center_at(6), Some([50.0, 20.0]));
        assert_eq!(s.center_at(12), None);
    }
}
