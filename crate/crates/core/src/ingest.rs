//! Frame-file loading, validation and deterministic train/test splits.
//!
//! The frame file is a flat CSV, one row per frame:
//!
//! ```text
//! id,label,s_0_ax0,s_1_ax0,...,s_{L-1}_ax0,s_0_ax1,...
//! ```
//!
//! Sample columns are axis-major: all `L` timesteps of axis 0, then axis 1,
//! and so on. Every frame in a file must share the same length `L` and axis
//! count `A`.
//!
//! Splits are driven by the ChaCha8 stream cipher PRNG
//! (`rand_chacha::ChaCha8Rng`, seeded with `seed_from_u64`), whose output is
//! specified independently of platform, so a `(dataset, fraction, seed)`
//! triple reproduces the same split everywhere.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One fixed-length window of multi-axis time-series samples with a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u64,
    /// 0-based class index.
    pub label: usize,
    /// L timesteps × A axes.
    pub samples: Array2<f64>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn axis_count(&self) -> usize {
        self.samples.ncols()
    }

    /// Per-timestep Euclidean norm across axes (total-acceleration series).
    pub fn magnitude_series(&self) -> Vec<f64> {
        self.samples
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// A validated, ordered collection of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub class_count: usize,
    pub axis_count: usize,
    pub frame_length: usize,
}

impl Dataset {
    /// Assemble a dataset from frames, checking all invariants: shared L/A,
    /// finite values, unique ids, labels forming a gapless 0-based range.
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Ok(Dataset {
                frames,
                class_count: 0,
                axis_count: 0,
                frame_length: 0,
            });
        }
        let frame_length = frames[0].len();
        let axis_count = frames[0].axis_count();
        if frame_length == 0 || axis_count == 0 {
            return Err(Error::Schema(format!(
                "frame {} has empty sample matrix",
                frames[0].id
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut max_label = 0usize;
        for f in &frames {
            if f.len() != frame_length || f.axis_count() != axis_count {
                return Err(Error::Schema(format!(
                    "frame {} has shape {}x{}, expected {}x{}",
                    f.id,
                    f.len(),
                    f.axis_count(),
                    frame_length,
                    axis_count
                )));
            }
            if !seen.insert(f.id) {
                return Err(Error::Schema(format!("duplicate frame id {}", f.id)));
            }
            if let Some(bad) = f.samples.iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "frame {} contains non-finite sample {bad}",
                    f.id
                )));
            }
            max_label = max_label.max(f.label);
        }
        let class_count = max_label + 1;
        let mut present = vec![false; class_count];
        for f in &frames {
            present[f.label] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::Data(format!(
                "class {missing} has no frames (labels must cover 0..{})",
                class_count - 1
            )));
        }
        Ok(Dataset {
            frames,
            class_count,
            axis_count,
            frame_length,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.label).collect()
    }

    pub fn frame_ids(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.id).collect()
    }

    /// Frames selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Vec<&Frame> {
        indices.iter().map(|&i| &self.frames[i]).collect()
    }
}

/// A deterministic train/test partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Load a frame CSV. Row order is preserved; all dataset invariants are
/// validated before returning.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    // Header determines L and A.
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let (frame_length, axis_count) = parse_header(&headers)?;

    let mut frames = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least id and label, got {} fields", record.len()),
            });
        }
        let id: u64 = record[0].trim().parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad frame id {:?}: {e}", &record[0]),
        })?;
        let label: usize = record[1].trim().parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad label {:?}: {e}", &record[1]),
        })?;
        let expected = 2 + frame_length * axis_count;
        if record.len() != expected {
            return Err(Error::Schema(format!(
                "frame {id}: row has {} fields, expected {expected} (L={frame_length}, A={axis_count})",
                record.len()
            )));
        }
        let mut samples = Array2::zeros((frame_length, axis_count));
        for a in 0..axis_count {
            for t in 0..frame_length {
                let field = &record[2 + a * frame_length + t];
                let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                    line,
                    msg: format!("frame {id}: bad sample {field:?}: {e}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "frame {id}: non-finite sample value {field:?}"
                    )));
                }
                samples[[t, a]] = v;
            }
        }
        frames.push(Frame { id, label, samples });
    }
    Dataset::new(frames)
}

fn parse_header(headers: &csv::StringRecord) -> Result<(usize, usize)> {
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::Schema(
            "header must start with id,label followed by sample columns".into(),
        ));
    }
    let mut max_t = 0usize;
    let mut max_ax = 0usize;
    for (i, name) in headers.iter().enumerate().skip(2) {
        let rest = name.strip_prefix("s_").ok_or_else(|| Error::Schema(format!(
            "sample column {i} named {name:?}, expected s_<t>_ax<a>"
        )))?;
        let (t_str, ax_str) = rest.split_once("_ax").ok_or_else(|| {
            Error::Schema(format!("sample column {i} named {name:?}, expected s_<t>_ax<a>"))
        })?;
        let t: usize = t_str.parse().map_err(|_| {
            Error::Schema(format!("sample column {i} named {name:?}: bad timestep"))
        })?;
        let ax: usize = ax_str.parse().map_err(|_| {
            Error::Schema(format!("sample column {i} named {name:?}: bad axis"))
        })?;
        max_t = max_t.max(t);
        max_ax = max_ax.max(ax);
    }
    let (l, a) = (max_t + 1, max_ax + 1);
    if headers.len() != 2 + l * a {
        return Err(Error::Schema(format!(
            "header has {} sample columns, expected L*A = {}*{} = {}",
            headers.len() - 2,
            l,
            a,
            l * a
        )));
    }
    // Columns must be axis-major in order.
    for ax in 0..a {
        for t in 0..l {
            let want = format!("s_{t}_ax{ax}");
            let got = &headers[2 + ax * l + t];
            if got != want {
                return Err(Error::Schema(format!(
                    "sample columns out of order: expected {want}, found {got}"
                )));
            }
        }
    }
    Ok((l, a))
}

/// Write a dataset in the frame-CSV schema (inverse of [`load_dataset`]).
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str("id,label");
    for a in 0..ds.axis_count {
        for t in 0..ds.frame_length {
            let _ = write!(out, ",s_{t}_ax{a}");
        }
    }
    out.push('\n');
    for f in &ds.frames {
        let _ = write!(out, "{},{}", f.id, f.label);
        for a in 0..ds.axis_count {
            for t in 0..ds.frame_length {
                let _ = write!(out, ",{}", f.samples[[t, a]]);
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Deterministic uniformly-random split. The permutation is a Fisher–Yates
/// shuffle driven by `ChaCha8Rng::seed_from_u64(seed)`; index lists are
/// returned sorted ascending. Train size is `floor(train_fraction · N)`.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if ds.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "train_fraction {train_fraction} leaves an empty side for {n} frames"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train_indices: Vec<usize> = order[..n_train].to_vec();
    let mut test_indices: Vec<usize> = order[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();

    // The split is not stratified; warn when a class is missing from train.
    let mut present = vec![false; ds.class_count];
    for &i in &train_indices {
        present[ds.frames[i].label] = true;
    }
    for (c, p) in present.iter().enumerate() {
        if !p {
            log::warn!("class {c} has no frames in the training split (seed {seed})");
        }
    }

    Ok(Split {
        train_indices,
        test_indices,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_dataset(n: usize, classes: usize) -> Dataset {
        let frames = (0..n)
            .map(|i| Frame {
                id: i as u64,
                label: i % classes,
                samples: Array2::from_elem((4, 2), i as f64),
            })
            .collect();
        Dataset::new(frames).unwrap()
    }

    #[test]
    fn split_counts_match_fraction() {
        let ds = tiny_dataset(10, 2);
        let s = split_dataset(&ds, 0.8, 7).unwrap();
        assert_eq!(s.train_indices.len(), 8);
        assert_eq!(s.test_indices.len(), 2);
    }

    #[test]
    fn split_is_deterministic() {
        let ds = tiny_dataset(25, 3);
        let a = split_dataset(&ds, 0.6, 41).unwrap();
        let b = split_dataset(&ds, 0.6, 41).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paper_scale_split_counts() {
        // floor(0.8 * 5353) = 4282; brute-force recount of both sides.
        let ds = tiny_dataset(5353, 12);
        let s = split_dataset(&ds, 0.8, 1).unwrap();
        assert_eq!(s.train_indices.len(), 4282);
        assert_eq!(s.test_indices.len(), 1071);
        let mut seen = vec![false; 5353];
        for &i in s.train_indices.iter().chain(s.test_indices.iter()) {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn empty_side_is_config_error() {
        let ds = tiny_dataset(3, 3);
        // floor(0.05 * 3) = 0 training frames.
        assert!(matches!(
            split_dataset(&ds, 0.05, 0),
            Err(Error::Config(_))
        ));
        // floor semantics always leave the test side nonempty for f < 1.
        let s = split_dataset(&ds, 0.99, 0).unwrap();
        assert_eq!(s.train_indices.len(), 2);
        assert_eq!(s.test_indices.len(), 1);
        assert!(matches!(
            split_dataset(&ds, 1.0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn roundtrip_preserves_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.csv");
        let mut ds = tiny_dataset(6, 2);
        // Non-trivial values.
        ds.frames[2].samples[[1, 0]] = -3.25;
        ds.frames[4].samples[[3, 1]] = 1e-9;
        write_dataset(&path, &ds).unwrap();
        let loaded1 = load_dataset(&path).unwrap();
        let loaded2 = load_dataset(&path).unwrap();
        assert_eq!(loaded1, ds);
        assert_eq!(loaded1, loaded2);
    }

    #[test]
    fn wrong_length_row_names_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "id,label,s_0_ax0,s_1_ax0\n0,0,1.0,2.0\n7,1,1.0\n",
        )
        .unwrap();
        match load_dataset(&path) {
            Err(Error::Schema(msg)) => assert!(msg.contains("frame 7"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,label,s_0_ax0\n0,0,1.0\n1,0,oops\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_sample_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "id,label,s_0_ax0\n0,0,1.0\n1,0,NaN\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Data(_))));
    }

    #[test]
    fn missing_class_is_rejected() {
        let frames = vec![
            Frame {
                id: 0,
                label: 0,
                samples: Array2::zeros((2, 1)),
            },
            Frame {
                id: 1,
                label: 2,
                samples: Array2::zeros((2, 1)),
            },
        ];
        assert!(matches!(Dataset::new(frames), Err(Error::Data(_))));
    }

    #[test]
    fn magnitude_series_is_pythagorean() {
        let mut samples = Array2::zeros((2, 3));
        samples[[0, 0]] = 3.0;
        samples[[1, 1]] = 4.0;
        let f = Frame {
            id: 0,
            label: 0,
            samples,
        };
        assert_eq!(f.magnitude_series(), vec![3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_exhaustive(n in 2usize..300, seed in any::<u64>(), frac in 0.05f64..0.95) {
            let ds = tiny_dataset(n, 1 + n % 4);
            if let Ok(s) = split_dataset(&ds, frac, seed) {
                let mut seen = vec![0u8; n];
                for &i in s.train_indices.iter().chain(s.test_indices.iter()) {
                    seen[i] += 1;
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
                let want = (frac * n as f64).floor() as usize;
                prop_assert_eq!(s.train_indices.len(), want);
            }
        }
    }
}
