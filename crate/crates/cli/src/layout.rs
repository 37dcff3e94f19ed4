//! On-disk layout of datasets and run directories.

use std::path::{Path, PathBuf};

use iasplat::IoError;

/// Meters per unit in 16-bit depth files.
pub const DEPTH_SCALE: f64 = 1e-3;

fn indexed(dir: &Path, prefix: &str, i: usize) -> PathBuf {
    dir.join(format!("{prefix}_{i:04}.png"))
}

fn mkdirs(dirs: &[PathBuf]) -> Result<(), IoError> {
    for d in dirs {
        std::fs::create_dir_all(d).map_err(|e| IoError::io(d, e))?;
    }
    Ok(())
}

/// A synthetic (or captured) dataset directory.
#[derive(Clone, Debug)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(&self) -> Result<(), IoError> {
        mkdirs(&[
            self.root.join("gt"),
            self.root.join("observed"),
            self.root.join("corruption"),
        ])
    }

    pub fn gt_field(&self) -> PathBuf {
        self.root.join("gt_field.txt")
    }

    pub fn trajectory(&self) -> PathBuf {
        self.root.join("trajectory.txt")
    }

    pub fn corruptions(&self) -> PathBuf {
        self.root.join("corruptions.txt")
    }

    pub fn gt_frame(&self, i: usize) -> PathBuf {
        indexed(&self.root.join("gt"), "frame", i)
    }

    pub fn gt_depth(&self, i: usize) -> PathBuf {
        indexed(&self.root.join("gt"), "depth", i)
    }

    pub fn observed(&self, i: usize) -> PathBuf {
        indexed(&self.root.join("observed"), "frame", i)
    }

    pub fn corruption_mask(&self, i: usize) -> PathBuf {
        indexed(&self.root.join("corruption"), "mask", i)
    }
}

/// Outputs of `init`, `train`, `eval` and `render` under one directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn init_dir(&self) -> PathBuf {
        self.root.join("init")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.train_dir().join("checkpoint")
    }

    pub fn render_dir(&self) -> PathBuf {
        self.root.join("render")
    }

    pub fn cloud(&self) -> PathBuf {
        self.init_dir().join("cloud.txt")
    }

    pub fn init_report(&self) -> PathBuf {
        self.init_dir().join("report.txt")
    }

    pub fn init_frame(&self, i: usize) -> PathBuf {
        indexed(&self.init_dir(), "frame", i)
    }

    pub fn point_render(&self, i: usize) -> PathBuf {
        indexed(&self.init_dir(), "render", i)
    }

    pub fn pix_mask(&self, i: usize) -> PathBuf {
        indexed(&self.init_dir(), "pix", i)
    }

    pub fn occ_mask(&self, i: usize) -> PathBuf {
        indexed(&self.init_dir(), "occ", i)
    }

    pub fn refine_mask(&self, i: usize) -> PathBuf {
        indexed(&self.init_dir(), "refine", i)
    }

    pub fn trained_frame(&self, i: usize) -> PathBuf {
        indexed(&self.train_dir(), "frame", i)
    }

    pub fn trained_depth(&self, i: usize) -> PathBuf {
        indexed(&self.train_dir(), "depth", i)
    }

    /// Predicted inconsistency mask of the last refinement round.
    pub fn mlp_mask(&self, i: usize) -> PathBuf {
        indexed(&self.train_dir(), "mlp", i)
    }

    pub fn rounds(&self) -> PathBuf {
        self.train_dir().join("rounds.csv")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval").join("report.txt")
    }

    pub fn rendered_frame(&self, i: usize) -> PathBuf {
        indexed(&self.render_dir(), "frame", i)
    }

    pub fn rendered_depth(&self, i: usize) -> PathBuf {
        indexed(&self.render_dir(), "depth", i)
    }
}
