//! Dense optical flow between consecutive frames and the 25-channel
//! histogram-of-flow patch featurizer.

pub mod hof;
pub mod tvl1;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TrinityError};

pub use hof::{average_hof_grids, hof_features, HofGrid, HofPatchFeature, HOF_BINS, HOF_CHANNELS};
pub use tvl1::{compute_flow, SolverConfig};

/// Row-major grayscale image with values in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != width * height {
            return Err(TrinityError::Contract(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// Per-pixel (u, v) displacement in pixels per frame step.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> FlowField {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn magnitude(&self, idx: usize) -> f64 {
        (self.u[idx] * self.u[idx] + self.v[idx] * self.v[idx]).sqrt()
    }
}

const FLOW_MAGIC: &[u8; 8] = b"TRNFLOW1";

/// Cache the per-pair flow fields of one clip: header (pairs, H, W),
/// then float32 little-endian u and v planes per pair.
pub fn write_flow_cache(path: &Path, flows: &[FlowField]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FLOW_MAGIC)?;
    let (height, width) = flows
        .first()
        .map(|f| (f.height, f.width))
        .unwrap_or((0, 0));
    w.write_all(&(flows.len() as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    w.write_all(&(width as u32).to_le_bytes())?;
    for f in flows {
        for plane in [&f.u, &f.v] {
            for &x in plane.iter() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flow_cache(path: &Path) -> Result<Vec<FlowField>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset: u64 = 0;
    let mut take = |n: usize, what: &str, off: &mut u64| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|_| TrinityError::Format {
            path: path.to_path_buf(),
            detail: format!("truncated while reading {what}"),
            offset: *off,
        })?;
        *off += n as u64;
        Ok(buf)
    };
    let magic = take(8, "magic", &mut offset)?;
    if magic != FLOW_MAGIC {
        return Err(TrinityError::Format {
            path: path.to_path_buf(),
            detail: "bad magic, not a flow cache".into(),
            offset: 0,
        });
    }
    let pairs = u32::from_le_bytes(take(4, "pair count", &mut offset)?.try_into().unwrap());
    let height = u32::from_le_bytes(take(4, "height", &mut offset)?.try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(take(4, "width", &mut offset)?.try_into().unwrap()) as usize;
    let mut flows = Vec::with_capacity(pairs as usize);
    for _ in 0..pairs {
        let mut planes = [Vec::new(), Vec::new()];
        for plane in &mut planes {
            let raw = take(width * height * 4, "flow plane", &mut offset)?;
            *plane = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
        }
        let [u, v] = planes;
        flows.push(FlowField { width, height, u, v });
    }
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.flow");
        let mut f = FlowField::zeros(4, 3);
        for i in 0..12 {
            f.u[i] = i as f64 * 0.5;
            f.v[i] = -(i as f64) * 0.25;
        }
        write_flow_cache(&path, &[f.clone(), f.clone()]).unwrap();
        let back = read_flow_cache(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].width, 4);
        for i in 0..12 {
            // f32 round-trip: these values are exactly representable.
            assert_eq!(back[0].u[i], f.u[i]);
            assert_eq!(back[1].v[i], f.v[i]);
        }
    }

    #[test]
    fn flow_cache_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flow");
        std::fs::write(&path, b"WRONGMAG\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_flow_cache(&path),
            Err(TrinityError::Format { offset: 0, .. })
        ));
    }
}
