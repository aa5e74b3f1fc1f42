use std::path::Path;

use flownas::flow_task::{gen_dataset, read_flo, read_ppm, write_flo, write_ppm, FramePair, MotionConfig};
use flownas::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub motion: MotionConfig,
    /// Sample stems; files are `<stem>_img1.ppm`, `<stem>_img2.ppm`, `<stem>_flow.flo`.
    pub samples: Vec<String>,
}

fn stem(i: usize) -> String {
    format!("{i:04}")
}

/// Generates `count` pairs and writes them with a manifest.
pub fn write_dataset(dir: &Path, seed: u64, count: usize, size: usize, motion: &MotionConfig) -> Result<Manifest> {
    let pairs = gen_dataset(seed, count, size, size, motion)?;
    std::fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(count);
    for (i, p) in pairs.iter().enumerate() {
        let s = stem(i);
        write_ppm(&dir.join(format!("{s}_img1.ppm")), &p.frame1)?;
        write_ppm(&dir.join(format!("{s}_img2.ppm")), &p.frame2)?;
        write_flo(&dir.join(format!("{s}_flow.flo")), &p.gt)?;
        samples.push(s);
    }
    let manifest = Manifest {
        seed,
        height: size,
        width: size,
        motion: motion.clone(),
        samples,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Usage(format!("{}: not a dataset directory ({e})", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        offset: 0,
        message: e.to_string(),
    })
}

/// Loads every sample listed in the manifest.
pub fn read_dataset(dir: &Path) -> Result<Vec<FramePair>> {
    let m = read_manifest(dir)?;
    let mut out = Vec::with_capacity(m.samples.len());
    for s in &m.samples {
        let frame1 = read_ppm(&dir.join(format!("{s}_img1.ppm")))?;
        let frame2 = read_ppm(&dir.join(format!("{s}_img2.ppm")))?;
        let flo = dir.join(format!("{s}_flow.flo"));
        let gt = read_flo(&flo)?;
        let shape = [3, m.height, m.width];
        if frame1.shape() != shape || frame2.shape() != shape || gt.height() != m.height || gt.width() != m.width {
            return Err(Error::Parse {
                path: flo.display().to_string(),
                offset: 0,
                message: format!("sample {s} does not match the manifest size {}x{}", m.height, m.width),
            });
        }
        out.push(FramePair {
            frame1,
            frame2,
            gt,
            seed: m.seed,
        });
    }
    Ok(out)
}
