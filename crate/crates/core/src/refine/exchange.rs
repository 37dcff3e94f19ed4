//! Directory-based refiner exchange.
//!
//! The engine writes `frame_####.png` (8-bit RGB), `change_####.png` (8-bit,
//! `round(w·255)`), `depth_####.png` (16-bit, `round(d / depth_scale)`, 0 for
//! no depth) and `request.json`, then creates the `request.ready` sentinel.
//! The refiner answers with `refined_####.png` (8-bit RGB) and the
//! `response.ready` sentinel.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{RefineError, RefineRequest, RefineResponse, Refiner};
use crate::image::RgbImage;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
pub const REQUEST_MANIFEST: &str = "request.json";
pub const REQUEST_READY: &str = "request.ready";
pub const RESPONSE_READY: &str = "response.ready";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeManifest {
    pub text_prompt: String,
    pub s: f64,
    #[serde(rename = "T")]
    pub total_steps: u32,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    /// Meters per unit of the 16-bit depth files.
    pub depth_scale: f64,
    pub frames: Vec<String>,
    pub change_maps: Vec<String>,
    pub depth_maps: Vec<String>,
    /// File names the refiner must write.
    pub refined: Vec<String>,
}

impl ExchangeManifest {
    pub fn for_request(request: &RefineRequest, depth_scale: f64) -> Self {
        let n = request.frame_count();
        let (width, height) = request.dims();
        let names = |prefix: &str| {
            (0..n)
                .map(|i| format!("{prefix}_{i:04}.png"))
                .collect::<Vec<_>>()
        };
        Self {
            text_prompt: request.text_prompt.clone(),
            s: request.noise_level,
            total_steps: request.total_steps,
            frame_count: n,
            width,
            height,
            depth_scale,
            frames: names("frame"),
            change_maps: names("change"),
            depth_maps: names("depth"),
            refined: names("refined"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FileExchangeRefiner {
    pub dir: PathBuf,
    pub timeout: Duration,
    pub poll_interval: Duration,
    pub depth_scale: f64,
}

impl FileExchangeRefiner {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            timeout: DEFAULT_TIMEOUT,
            poll_interval: Duration::from_millis(10),
            depth_scale: 1e-3,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> RefineError {
        RefineError::Io(format!("{}: {e}", path.display()))
    }

    fn remove_if_present(path: &Path) -> Result<(), RefineError> {
        match std::fs::remove_file(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Self::io(path, e)),
        }
    }

    fn refined_files(&self) -> Result<Vec<PathBuf>, RefineError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(|e| Self::io(&self.dir, e))? {
            let entry = entry.map_err(|e| Self::io(&self.dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("refined_") && name.ends_with(".png") {
                out.push(entry.path());
            }
        }
        out.sort();
        Ok(out)
    }

    fn clear_previous(&self) -> Result<(), RefineError> {
        Self::remove_if_present(&self.dir.join(REQUEST_READY))?;
        Self::remove_if_present(&self.dir.join(RESPONSE_READY))?;
        for p in self.refined_files()? {
            Self::remove_if_present(&p)?;
        }
        Ok(())
    }

    fn write_request(&self, request: &RefineRequest) -> Result<ExchangeManifest, RefineError> {
        let manifest = ExchangeManifest::for_request(request, self.depth_scale);
        for i in 0..request.frame_count() {
            let p = self.dir.join(&manifest.frames[i]);
            request.frames[i]
                .save_png(&p)
                .map_err(|e| Self::io(&p, e))?;
            let p = self.dir.join(&manifest.change_maps[i]);
            request.change_maps[i]
                .0
                .save_unit_png(&p)
                .map_err(|e| Self::io(&p, e))?;
            let p = self.dir.join(&manifest.depth_maps[i]);
            request.depth_maps[i]
                .save_depth_png(&p, self.depth_scale)
                .map_err(|e| Self::io(&p, e))?;
        }
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let p = self.dir.join(REQUEST_MANIFEST);
        std::fs::write(&p, json).map_err(|e| Self::io(&p, e))?;
        let p = self.dir.join(REQUEST_READY);
        std::fs::write(&p, b"").map_err(|e| Self::io(&p, e))?;
        Ok(manifest)
    }

    fn wait_for_response(&self) -> Result<(), RefineError> {
        let ready = self.dir.join(RESPONSE_READY);
        let start = Instant::now();
        while !ready.exists() {
            if start.elapsed() >= self.timeout {
                Self::remove_if_present(&self.dir.join(REQUEST_READY))?;
                return Err(RefineError::Timeout {
                    seconds: self.timeout.as_secs_f64(),
                });
            }
            std::thread::sleep(self.poll_interval);
        }
        Ok(())
    }

    fn read_response(&self, manifest: &ExchangeManifest) -> Result<RefineResponse, RefineError> {
        let present = self.refined_files()?;
        let expected: Vec<PathBuf> = manifest.refined.iter().map(|n| self.dir.join(n)).collect();
        if present != expected {
            return Err(RefineError::FrameCount {
                expected: manifest.frame_count,
                actual: present.len(),
            });
        }
        let mut frames = Vec::with_capacity(expected.len());
        for (i, p) in expected.iter().enumerate() {
            let frame = RgbImage::load_png(p).map_err(|e| RefineError::Malformed {
                frame: i,
                reason: e.to_string(),
            })?;
            if frame.dims() != (manifest.width, manifest.height) {
                return Err(RefineError::Dimensions {
                    frame: i,
                    expected: (manifest.width, manifest.height),
                    got: frame.dims(),
                });
            }
            frames.push(frame);
        }
        Ok(RefineResponse { frames })
    }
}

impl Refiner for FileExchangeRefiner {
    fn refine(&mut self, request: &RefineRequest) -> Result<RefineResponse, RefineError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Self::io(&self.dir, e))?;
        self.clear_previous()?;
        let manifest = self.write_request(request)?;
        self.wait_for_response()?;
        let result = self.read_response(&manifest);
        Self::remove_if_present(&self.dir.join(REQUEST_READY))?;
        Self::remove_if_present(&self.dir.join(RESPONSE_READY))?;
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;
    use crate::refine::ChangeMap;

    fn request() -> RefineRequest {
        RefineRequest {
            frames: vec![Grid::filled(6, 4, [0.2, 0.4, 0.6]); 2],
            change_maps: vec![ChangeMap(Grid::filled(6, 4, 0.6)); 2],
            depth_maps: vec![Grid::filled(6, 4, 2.5); 2],
            text_prompt: "garden".into(),
            noise_level: 0.6,
            total_steps: 25,
        }
    }

    #[test]
    fn manifest_names_and_keys() {
        let m = ExchangeManifest::for_request(&request(), 1e-3);
        assert_eq!(m.frames, vec!["frame_0000.png", "frame_0001.png"]);
        assert_eq!(m.refined[1], "refined_0001.png");
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["T"], 25);
        assert_eq!(json["s"], 0.6);
        assert_eq!(json["frame_count"], 2);
    }

    #[test]
    fn times_out_without_refiner() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = FileExchangeRefiner::new(dir.path());
        r.timeout = Duration::from_millis(30);
        let err = r.refine(&request()).unwrap_err();
        assert_eq!(err.category(), "timeout");
        assert!(dir.path().join("frame_0001.png").exists());
        assert!(!dir.path().join(REQUEST_READY).exists());
    }

    #[test]
    fn in_thread_refiner_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let worker = std::thread::spawn(move || {
            let ready = path.join(REQUEST_READY);
            while !ready.exists() {
                std::thread::sleep(Duration::from_millis(2));
            }
            let m: ExchangeManifest = serde_json::from_str(
                &std::fs::read_to_string(path.join(REQUEST_MANIFEST)).unwrap(),
            )
            .unwrap();
            let change =
                crate::image::ScalarMap::load_unit_png(&path.join(&m.change_maps[0])).unwrap();
            assert_eq!(*change.get(0, 0), 153.0 / 255.0);
            for name in &m.refined {
                Grid::filled(m.width, m.height, [1.0, 0.0, 0.0])
                    .save_png(&path.join(name))
                    .unwrap();
            }
            std::fs::write(path.join(RESPONSE_READY), b"").unwrap();
        });
        let mut r = FileExchangeRefiner::new(dir.path());
        r.timeout = Duration::from_secs(20);
        let resp = r.refine(&request()).unwrap();
        worker.join().unwrap();
        assert_eq!(resp.frames.len(), 2);
        assert_eq!(*resp.frames[1].get(3, 2), [1.0, 0.0, 0.0]);
        assert!(!dir.path().join(RESPONSE_READY).exists());
    }
}
