//! On-disk dataset layout: `root/spec.txt` plus
//! `root/{train,val,test}/img_%05d.ppm` and `msk_%05d.pgm`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{generate_sample, read_pgm, read_ppm, write_pgm, write_ppm, CoOccurrenceSpec, SegSample};
use crate::error::{Error, Result};
use crate::kv::KvMap;

pub const SPEC_FILE: &str = "spec.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}, expected train, val or test")))
    }
}

/// Generator index of the first sample of `split`; splits never overlap.
pub fn split_base(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Val => 1 << 32,
        Split::Test => 2 << 32,
    }
}

fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("img_{i:05}.ppm"))
}

fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("msk_{i:05}.pgm"))
}

pub fn write_sample(dir: &Path, i: usize, s: &SegSample) -> Result<()> {
    write_ppm(&image_path(dir, i), &s.image)?;
    write_pgm(&mask_path(dir, i), s.height(), s.width(), &s.mask)
}

pub fn read_sample(dir: &Path, i: usize) -> Result<SegSample> {
    let image = read_ppm(&image_path(dir, i))?;
    let mp = mask_path(dir, i);
    let (h, w, mask) = read_pgm(&mp)?;
    if [h, w] != image.shape()[..2] {
        return Err(Error::Data(format!(
            "{}: mask is {h}x{w} but image is {}x{}",
            mp.display(),
            image.shape()[0],
            image.shape()[1]
        )));
    }
    SegSample::new(image, mask)
}

/// Generates and writes every split. `counts` is `[train, val, test]`.
pub fn generate_dataset(root: &Path, spec: &CoOccurrenceSpec, counts: [usize; 3]) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let spec_path = root.join(SPEC_FILE);
    fs::write(&spec_path, spec.to_kv().to_text()).map_err(|e| Error::io(&spec_path, e))?;
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        let dir = root.join(split.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..count {
            let s = generate_sample(spec, split_base(split) + i as u64)?;
            write_sample(&dir, i, &s)?;
        }
    }
    Ok(())
}

/// The spec stored with a dataset.
pub fn load_spec(root: &Path) -> Result<CoOccurrenceSpec> {
    let p = root.join(SPEC_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    CoOccurrenceSpec::from_kv(&KvMap::parse(&text)?)
}

/// Loads `img_00000..` of a split until the first missing index. Masks are
/// checked against the stored spec's class count.
pub fn load_split(root: &Path, split: Split) -> Result<(CoOccurrenceSpec, Vec<SegSample>)> {
    let spec = load_spec(root)?;
    let dir = root.join(split.name());
    if !dir.is_dir() {
        return Err(Error::Data(format!("split directory {} missing", dir.display())));
    }
    let mut samples = Vec::new();
    while image_path(&dir, samples.len()).exists() {
        let s = read_sample(&dir, samples.len())?;
        s.check_classes(spec.num_classes)?;
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("no samples in {}", dir.display())));
    }
    Ok((spec, samples))
}
