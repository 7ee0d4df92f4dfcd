//! Co-occurrence benchmark generator.
//!
//! The image is a `grid x grid` array of `cell`-pixel cells. One random cell
//! holds the context marker; every other cell holds a textured disk with
//! probability `fill`. The two classes of a texture pair share the exact same
//! texture, and which of them a disk belongs to is decided by context alone:
//! the pair's first class if the marker comes earlier in raster order than
//! the disk's cell, the second otherwise. Local appearance therefore cannot
//! separate them, while a model that carries state across cells in raster
//! order can.
//!
//! Samples are a pure function of `(seed, index)`: the generator is ChaCha8
//! seeded with `seed` on stream `index`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SegSample;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CoOccurrenceSpec {
    /// Total class count including background (class 0).
    pub num_classes: usize,
    /// Cells per side.
    pub grid: usize,
    /// Cell side in pixels.
    pub cell: usize,
    /// Probability that a non-marker cell holds a disk.
    pub fill: f64,
    /// Pairs of classes rendered with identical texture.
    pub texture_pairs: Vec<(u8, u8)>,
    /// Class of the context marker.
    pub context_class: u8,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CoOccurrenceSpec {
    fn default() -> Self {
        CoOccurrenceSpec {
            num_classes: 6,
            grid: 4,
            cell: 8,
            fill: 0.75,
            texture_pairs: vec![(1, 2), (3, 4)],
            context_class: 5,
            noise_sigma: 0.03,
            seed: 0,
        }
    }
}

/// Base colours of the texture groups; group 0 is the background.
const PALETTE: [[f64; 3]; 8] = [
    [0.45, 0.45, 0.45],
    [0.80, 0.30, 0.25],
    [0.25, 0.55, 0.85],
    [0.90, 0.80, 0.20],
    [0.30, 0.75, 0.35],
    [0.70, 0.35, 0.80],
    [0.95, 0.60, 0.15],
    [0.20, 0.80, 0.75],
];

/// Colour of texture group `group` at pixel `(y, x)`: a base colour plus a
/// group-specific checker or stripe pattern tied to absolute coordinates.
pub fn texture_value(group: usize, y: usize, x: usize) -> [f64; 3] {
    let base = PALETTE[group % PALETTE.len()];
    if group == 0 {
        return base;
    }
    let on = match group % 3 {
        0 => (y / 2 + x / 2) % 2 == 0,
        1 => (x + y) % 3 == 0,
        _ => y % 2 == 0,
    };
    let amp = if on { 0.12 } else { -0.12 };
    base.map(|b| (b + amp).clamp(0.0, 1.0))
}

impl CoOccurrenceSpec {
    pub fn size(&self) -> usize {
        self.grid * self.cell
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 4 || self.num_classes > 255 {
            return bad(format!("num_classes must be in [4, 255], got {}", self.num_classes));
        }
        if self.grid < 2 || self.cell < 4 {
            return bad(format!("grid {} / cell {} too small", self.grid, self.cell));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return bad(format!("fill {} outside [0, 1]", self.fill));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and non-negative", self.noise_sigma));
        }
        let k = self.num_classes;
        let ctx = self.context_class as usize;
        if ctx == 0 || ctx >= k {
            return bad(format!("context_class {ctx} must be a non-background class < {k}"));
        }
        let mut seen = vec![false; k];
        seen[ctx] = true;
        for &(a, b) in &self.texture_pairs {
            for c in [a as usize, b as usize] {
                if c == 0 || c >= k {
                    return bad(format!("texture pair ({a}, {b}) references invalid class {c}"));
                }
                if seen[c] {
                    return bad(format!("class {c} appears twice among pairs/context"));
                }
                seen[c] = true;
            }
        }
        if self.groups().len() <= 2 {
            return bad("no disk classes: every class is background or context".into());
        }
        Ok(())
    }

    /// Texture group of every class. Classes of one pair share a group.
    pub fn class_groups(&self) -> Vec<usize> {
        let mut group = vec![usize::MAX; self.num_classes];
        group[0] = 0;
        let mut next = 1;
        for &(a, b) in &self.texture_pairs {
            group[a as usize] = next;
            group[b as usize] = next;
            next += 1;
        }
        for g in group.iter_mut().skip(1) {
            if *g == usize::MAX {
                *g = next;
                next += 1;
            }
        }
        group
    }

    /// Classes belonging to each group, indexed by group.
    fn groups(&self) -> Vec<Vec<u8>> {
        let cg = self.class_groups();
        let mut out = vec![Vec::new(); cg.iter().max().map_or(0, |m| m + 1)];
        for (c, &g) in cg.iter().enumerate() {
            out[g].push(c as u8);
        }
        out
    }

    /// Every class that is a member of a texture pair.
    pub fn paired_classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.texture_pairs.iter().flat_map(|&(a, b)| [a as usize, b as usize]).collect();
        v.sort_unstable();
        v
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("num_classes", self.num_classes);
        kv.set("grid", self.grid);
        kv.set("cell", self.cell);
        kv.set("fill", self.fill);
        let pairs: Vec<String> = self.texture_pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        kv.set("texture_pairs", pairs.join(","));
        kv.set("context_class", self.context_class);
        kv.set("noise_sigma", self.noise_sigma);
        kv.set("seed", self.seed);
        kv
    }

    /// Reads a spec; missing keys take their default values.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = CoOccurrenceSpec::default();
        let texture_pairs = match kv.raw("texture_pairs") {
            None => d.texture_pairs,
            Some(s) => parse_pairs(s)?,
        };
        let spec = CoOccurrenceSpec {
            num_classes: kv.get_or("num_classes", d.num_classes)?,
            grid: kv.get_or("grid", d.grid)?,
            cell: kv.get_or("cell", d.cell)?,
            fill: kv.get_or("fill", d.fill)?,
            texture_pairs,
            context_class: kv.get_or("context_class", d.context_class)?,
            noise_sigma: kv.get_or("noise_sigma", d.noise_sigma)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(u8, u8)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("texture pair {p:?} is not of the form a-b")))?;
            let parse = |t: &str| {
                t.trim()
                    .parse::<u8>()
                    .map_err(|_| Error::Config(format!("bad class id {t:?} in texture pair {p:?}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

/// Disk of radius `r` centred at `(cy, cx)` in pixel-centre coordinates.
fn in_disk(y: usize, x: usize, cy: f64, cx: f64, r: f64) -> bool {
    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
    dy * dy + dx * dx <= r * r
}

/// Deterministic sample `index` of the benchmark.
pub fn generate_sample(spec: &CoOccurrenceSpec, index: u64) -> Result<SegSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);

    let (g, cell, size) = (spec.grid, spec.cell, spec.size());
    let groups = spec.groups();
    let class_group = spec.class_groups();
    let ctx_group = class_group[spec.context_class as usize];
    let disk_groups: Vec<usize> = (1..groups.len()).filter(|&gr| gr != ctx_group).collect();

    let mut mask = vec![0u8; size * size];
    let mut group_map = vec![0usize; size * size];
    let marker = rng.gen_range(0..g * g);
    let half = cell as f64 / 2.0;
    let r_max = half - 0.5;
    for c in 0..g * g {
        let (class, r) = if c == marker {
            (spec.context_class, r_max)
        } else {
            if !rng.gen_bool(spec.fill) {
                continue;
            }
            let gr = disk_groups[rng.gen_range(0..disk_groups.len())];
            let members = &groups[gr];
            let class = if members.len() == 2 {
                if marker < c {
                    members[0]
                } else {
                    members[1]
                }
            } else {
                members[0]
            };
            (class, rng.gen_range(0.5 * r_max..=r_max))
        };
        let jitter = (half - 0.5 - r).max(0.0);
        let cy = (c / g * cell) as f64 + half + rng.gen_range(-jitter..=jitter);
        let cx = (c % g * cell) as f64 + half + rng.gen_range(-jitter..=jitter);
        for y in c / g * cell..(c / g + 1) * cell {
            for x in c % g * cell..(c % g + 1) * cell {
                if in_disk(y, x, cy, cx, r) {
                    mask[y * size + x] = class;
                    group_map[y * size + x] = class_group[class as usize];
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            for v in texture_value(group_map[y * size + x], y, x) {
                let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push((v + n).clamp(0.0, 1.0));
            }
        }
    }
    SegSample::new(Tensor::new([size, size, 3], data)?, mask)
}
