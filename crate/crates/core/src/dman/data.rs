//! Identity crops and the pair/tracklet examples built from them.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::SanParams;
use super::san::{embed, forward_embedded, prepare_input, NetInput, PairExample, SanMode};
use super::tan::TrackletExample;
use crate::error::{invalid, Result};
use crate::imaging::{crop_box, write_pnm, BoundingBox, ImageBuffer};
use crate::motio::{load_frame, texture_color, FrameRecord, IdentitySpec};

/// Crops grouped by identity; the group index is the class label.
#[derive(Debug, Clone)]
pub struct IdentityDataset {
    identities: Vec<Vec<ImageBuffer>>,
}

impl IdentityDataset {
    pub fn new(identities: Vec<Vec<ImageBuffer>>) -> Result<Self> {
        if identities.iter().any(Vec::is_empty) {
            return Err(invalid("every identity needs at least one image"));
        }
        Ok(Self { identities })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn images(&self, identity: usize) -> &[ImageBuffer] {
        &self.identities[identity]
    }

    pub fn total_images(&self) -> usize {
        self.identities.iter().map(Vec::len).sum()
    }

    /// Renders `samples` crops per identity with random placement jitter,
    /// scale change and pixel noise on a flat background.
    pub fn render(specs: &[IdentitySpec], samples: usize, background: [f64; 3], rng: &mut impl Rng) -> Result<Self> {
        if samples == 0 {
            return Err(invalid("need at least one sample per identity"));
        }
        let noise = Normal::new(0.0, 0.02).expect("positive std");
        let mut identities = Vec::with_capacity(specs.len());
        for spec in specs {
            let (w, h) = (
                spec.size[0].round().max(2.0) as usize,
                spec.size[1].round().max(2.0) as usize,
            );
            let mut crops = Vec::with_capacity(samples);
            for _ in 0..samples {
                let scale = rng.random_range(0.9..1.1);
                let dx = rng.random_range(-0.1..0.1) * w as f64;
                let dy = rng.random_range(-0.1..0.1) * h as f64;
                let mut img = ImageBuffer::filled(w, h, 3, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        // crop pixel -> identity texture coordinates
                        let u = ((x as f64 + 0.5 - w as f64 / 2.0) * scale + w as f64 / 2.0 + dx).floor();
                        let v = ((y as f64 + 0.5 - h as f64 / 2.0) * scale + h as f64 / 2.0 + dy).floor();
                        let inside = u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64;
                        let col = if inside {
                            texture_color(spec, u as usize, v as usize)
                        } else {
                            background
                        };
                        for (c, val) in col.iter().enumerate() {
                            img.set(x, y, c, (val + noise.sample(rng)).clamp(0.0, 1.0));
                        }
                    }
                }
                crops.push(img);
            }
            identities.push(crops);
        }
        Self::new(identities)
    }

    /// Ground-truth crops of a sequence, grouped by track id. Boxes whose
    /// visibility is below `min_visibility` are skipped.
    pub fn from_sequence(
        frames: &[ImageBuffer],
        gt: &[FrameRecord],
        min_visibility: f64,
        max_per_identity: usize,
    ) -> Result<Self> {
        let mut ids: Vec<i64> = gt.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut identities = Vec::new();
        for id in ids {
            let mut crops = Vec::new();
            for r in gt.iter().filter(|r| r.id == id && r.visibility() >= min_visibility) {
                if crops.len() >= max_per_identity {
                    break;
                }
                let Some(frame) = frames.get(r.frame as usize - 1) else {
                    continue;
                };
                let size = [r.bbox.w.round().max(2.0) as usize, r.bbox.h.round().max(2.0) as usize];
                crops.push(crop_box(frame, &r.bbox, size)?);
            }
            if !crops.is_empty() {
                identities.push(crops);
            }
        }
        Self::new(identities)
    }

    /// Reads `dir/<identity>/<image>`; both levels are taken in name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut subdirs: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        let mut identities = Vec::new();
        for sub in subdirs {
            let mut files: Vec<_> = fs::read_dir(&sub)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            let crops = files.iter().map(|f| load_frame(f)).collect::<Result<Vec<_>>>()?;
            if !crops.is_empty() {
                identities.push(crops);
            }
        }
        Self::new(identities)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for (k, crops) in self.identities.iter().enumerate() {
            let sub = dir.join(format!("id{:03}", k + 1));
            fs::create_dir_all(&sub)?;
            for (i, img) in crops.iter().enumerate() {
                write_pnm(img, &sub.join(format!("{:04}.ppm", i + 1)))?;
            }
        }
        Ok(())
    }

    /// Moves the last `holdout` crops of every identity into a second set.
    pub fn split(&self, holdout: usize) -> Result<(Self, Self)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for crops in &self.identities {
            if crops.len() <= holdout {
                return Err(invalid("identity has too few crops for the requested holdout"));
            }
            let cut = crops.len() - holdout;
            train.push(crops[..cut].to_vec());
            test.push(crops[cut..].to_vec());
        }
        Ok((Self::new(train)?, Self::new(test)?))
    }
}

/// Identities with random base colors and texture seeds.
pub fn random_identities(count: usize, size: [f64; 2], rng: &mut impl Rng) -> Vec<IdentitySpec> {
    (0..count)
        .map(|k| IdentitySpec {
            id: k as i64 + 1,
            waypoints: vec![(1, 0.0, 0.0)],
            size,
            color: [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ],
            texture_seed: rng.random(),
            z: 0,
            hidden: Vec::new(),
        })
        .collect()
}

/// Random crop keeping 85-100% of each side, rescaled to the network input.
pub fn augment(img: &ImageBuffer, size: usize, rng: &mut impl Rng) -> Result<NetInput> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (fw, fh) = (rng.random_range(0.85..=1.0), rng.random_range(0.85..=1.0));
    let (cw, ch) = (w * fw, h * fh);
    let x = rng.random_range(0.0..=w - cw);
    let y = rng.random_range(0.0..=h - ch);
    let crop = crop_box(img, &BoundingBox::new(x, y, cw, ch)?, [size, size])?;
    prepare_input(&crop, size)
}

/// Identity index drawn with equal probability.
pub fn sample_identity(count: usize, rng: &mut impl Rng) -> usize {
    rng.random_range(0..count)
}

fn other_identity(count: usize, not: usize, rng: &mut impl Rng) -> usize {
    let k = rng.random_range(0..count - 1);
    if k >= not {
        k + 1
    } else {
        k
    }
}

fn random_image<'a>(ds: &'a IdentityDataset, k: usize, rng: &mut impl Rng) -> &'a ImageBuffer {
    let imgs = ds.images(k);
    &imgs[rng.random_range(0..imgs.len())]
}

fn need_two(ds: &IdentityDataset) -> Result<()> {
    if ds.len() < 2 {
        return Err(invalid("at least two identities are needed to form negatives"));
    }
    Ok(())
}

/// `count` shuffled pairs of which exactly `round(count * positive_ratio)`
/// share an identity.
pub fn make_pairs(
    ds: &IdentityDataset,
    count: usize,
    positive_ratio: f64,
    input_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PairExample>> {
    need_two(ds)?;
    if !(0.0..=1.0).contains(&positive_ratio) {
        return Err(invalid("positive ratio must lie in [0, 1]"));
    }
    let positives = (count as f64 * positive_ratio).round() as usize;
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        let id_a = sample_identity(ds.len(), rng);
        let id_b = if n < positives {
            id_a
        } else {
            other_identity(ds.len(), id_a, rng)
        };
        let a = augment(random_image(ds, id_a, rng), input_size, rng)?;
        let b = augment(random_image(ds, id_b, rng), input_size, rng)?;
        out.push(PairExample { a, b, id_a, id_b });
    }
    out.shuffle(rng);
    Ok(out)
}

/// How tracklet examples are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackletSpec {
    pub length: usize,
    pub positive_ratio: f64,
    /// Probability that a tracklet gets one or two foreign images.
    pub corrupt_fraction: f64,
    /// Also corrupt tracklets whose candidate is another identity.
    pub corrupt_negatives: bool,
}

impl Default for TrackletSpec {
    fn default() -> Self {
        Self {
            length: 8,
            positive_ratio: 0.5,
            corrupt_fraction: 0.5,
            corrupt_negatives: true,
        }
    }
}

/// A tracklet of images and a candidate detection.
#[derive(Debug, Clone)]
pub struct TrackletImages {
    pub observations: Vec<NetInput>,
    pub detection: NetInput,
    /// Tracklet identity index.
    pub identity: usize,
    pub same: bool,
    /// Positions replaced by images of another identity.
    pub foreign: Vec<usize>,
}

pub fn make_tracklets(
    ds: &IdentityDataset,
    count: usize,
    spec: &TrackletSpec,
    input_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TrackletImages>> {
    need_two(ds)?;
    if spec.length == 0 {
        return Err(invalid("tracklet length must be positive"));
    }
    let positives = (count as f64 * spec.positive_ratio).round() as usize;
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        let identity = sample_identity(ds.len(), rng);
        let same = n < positives;
        let mut foreign = Vec::new();
        if (same || spec.corrupt_negatives) && rng.random::<f64>() < spec.corrupt_fraction {
            let k = if spec.length > 1 && rng.random::<bool>() { 2 } else { 1 };
            let mut pos: Vec<usize> = (0..spec.length).collect();
            pos.shuffle(rng);
            foreign = pos[..k.min(spec.length)].to_vec();
            foreign.sort_unstable();
        }
        let mut observations = Vec::with_capacity(spec.length);
        for t in 0..spec.length {
            let k = if foreign.contains(&t) {
                other_identity(ds.len(), identity, rng)
            } else {
                identity
            };
            observations.push(augment(random_image(ds, k, rng), input_size, rng)?);
        }
        let det_id = if same {
            identity
        } else {
            other_identity(ds.len(), identity, rng)
        };
        let detection = augment(random_image(ds, det_id, rng), input_size, rng)?;
        out.push(TrackletImages {
            observations,
            detection,
            identity,
            same,
            foreign,
        });
    }
    out.shuffle(rng);
    Ok(out)
}

/// Pair features of every observation against the detection, from a fixed
/// spatial network.
pub fn tracklet_features(san: &SanParams, t: &TrackletImages, mode: SanMode) -> Result<TrackletExample> {
    let det = embed(san, &t.detection)?;
    let features = t
        .observations
        .iter()
        .map(|o| Ok(forward_embedded(san, &embed(san, o)?, &det, mode)?.combined))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackletExample {
        features,
        same: t.same,
        foreign: t.foreign.clone(),
    })
}
