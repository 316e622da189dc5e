//! Toy data: seeded Gaussian blobs, labelled CSV features and raw IDX image
//! files.
//!
//! CSV layout: a header `label,f0,f1,...` followed by one row per sample,
//! the label a non-negative integer.
//!
//! IDX layout (all integers big-endian u32): images start with magic
//! `0x00000803`, count, rows, cols, then `count*rows*cols` pixel bytes;
//! labels start with magic `0x00000801`, count, then `count` label bytes.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, split: Split) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        if let Some(first) = features.first() {
            for row in &features {
                if row.len() != first.len() {
                    return Err(Error::DimensionMismatch {
                        expected: first.len(),
                        found: row.len(),
                    });
                }
            }
        }
        Ok(Dataset {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::param("classes", "need at least 2 classes"));
        }
        if self.per_class == 0 || self.dim == 0 {
            return Err(Error::param("per_class/dim", "must be positive"));
        }
        if !(self.center_scale > 0.0 && self.center_scale.is_finite()) {
            return Err(Error::param("center_scale", "must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", "must be non-negative"));
        }
        Ok(())
    }

    /// Class centers drawn from `N(0, center_scale² I)`.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut rng = stream(self.seed, 0);
        (0..self.classes)
            .map(|_| gaussian_vec(&mut rng, self.dim, self.center_scale))
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn sample_blobs(spec: &BlobSpec, centers: &[Vec<f64>], per_class: usize, stream_id: u64, split: Split) -> Dataset {
    let mut rng = stream(spec.seed, stream_id);
    let mut features = Vec::with_capacity(spec.classes * per_class);
    let mut labels = Vec::with_capacity(spec.classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let noise = gaussian_vec(&mut rng, spec.dim, spec.noise_std);
            features.push(center.iter().zip(noise).map(|(m, n)| m + n).collect());
            labels.push(c);
        }
    }
    Dataset {
        features,
        labels,
        split,
    }
}

/// Class-major blob samples around seeded centers.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(sample_blobs(spec, &spec.centers(), spec.per_class, 1, Split::Train))
}

/// Train split as [`make_blobs`] plus a held-out split of `test_per_class`
/// samples per class drawn around the same centers.
pub fn make_blob_splits(spec: &BlobSpec, test_per_class: usize) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let centers = spec.centers();
    Ok((
        sample_blobs(spec, &centers, spec.per_class, 1, Split::Train),
        sample_blobs(spec, &centers, test_per_class, 2, Split::Test),
    ))
}

pub fn load_csv(path: &Path, split: Split) -> Result<Dataset> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| malformed(0, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(malformed(1, "header must be `label,f0,f1,...`".into()));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(malformed(1, format!("expected column `f{i}`, got `{name}`")));
        }
    }
    let width = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width + 1 {
            return Err(malformed(
                line,
                format!("expected {} fields, got {}", width + 1, record.len()),
            ));
        }
        let label = record[0]
            .parse::<usize>()
            .map_err(|e| malformed(line, format!("label `{}`: {e}", &record[0])))?;
        let row = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(line, format!("bad feature `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        features.push(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(malformed(2, "no data rows".into()));
    }
    Dataset::new(features, labels, split)
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path.display().to_string(), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..data.dim()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(io)?;
    for (row, label) in data.features.iter().zip(&data.labels) {
        let mut rec = vec![label.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(IdxReader {
            path,
            bytes,
            pos: 0,
        })
    }

    fn bad(&self, field: &'static str, message: String) -> Error {
        Error::BadField {
            path: self.path.to_path_buf(),
            field,
            message,
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.bad(field, "file truncated".into()))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let got = self.u32("magic")?;
        if got != magic {
            return Err(self.bad("magic", format!("expected {magic:#010x}, got {got:#010x}")));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&[u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() != len {
            return Err(self.bad(
                "data",
                format!("header announces {len} bytes, file holds {}", rest.len()),
            ));
        }
        Ok(rest)
    }
}

/// Reads an IDX image/label pair, scaling pixels to `[0, 1]` and keeping the
/// first `limit` samples.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let mut images = IdxReader::open(images_path)?;
    images.expect_magic(IDX_IMAGES_MAGIC)?;
    let count = images.u32("count")? as usize;
    let rows = images.u32("rows")? as usize;
    let cols = images.u32("cols")? as usize;
    let pixels = images.payload(count * rows * cols)?;

    let mut labels_file = IdxReader::open(labels_path)?;
    labels_file.expect_magic(IDX_LABELS_MAGIC)?;
    let label_count = labels_file.u32("count")? as usize;
    let labels = labels_file.payload(label_count)?;
    if label_count != count {
        return Err(labels_file.bad(
            "count",
            format!("{label_count} labels for {count} images"),
        ));
    }

    let n = limit.map_or(count, |l| l.min(count));
    let width = rows * cols;
    let features = pixels
        .chunks(width.max(1))
        .take(n)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    let labels = labels[..n].iter().map(|&b| usize::from(b)).collect();
    Dataset::new(features, labels, Split::Train)
}

/// Serializes images and labels in IDX layout; pixel values are bytes.
pub fn write_idx(images_path: &Path, labels_path: &Path, rows: usize, cols: usize, pixels: &[Vec<u8>], labels: &[u8]) -> Result<()> {
    let mut img = Vec::with_capacity(16 + pixels.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, pixels.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for p in pixels {
        img.extend_from_slice(p);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(images_path, img).map_err(|e| Error::io(images_path.display().to_string(), e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BlobSpec {
        BlobSpec {
            classes: 3,
            per_class: 7,
            dim: 2,
            center_scale: 10.0,
            noise_std: 0.5,
            seed: 11,
        }
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = make_blobs(&spec()).unwrap();
        assert_eq!(a, make_blobs(&spec()).unwrap());
        for c in 0..3 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 7);
        }
        let b = make_blobs(&BlobSpec { seed: 12, ..spec() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_noise_collapses_classes() {
        let d = make_blobs(&BlobSpec {
            noise_std: 0.0,
            ..spec()
        })
        .unwrap();
        for (row, &l) in d.features.iter().zip(&d.labels) {
            assert_eq!(row, &d.features[l * 7]);
        }
    }

    #[test]
    fn separated_centers_with_rejection() {
        let mut s = BlobSpec {
            classes: 2,
            ..spec()
        };
        loop {
            let c = s.centers();
            let gap = crate::geometry::dist(&c[0], &c[1]);
            if gap > 6.0 * s.noise_std {
                break;
            }
            s.seed += 1;
        }
        let d = make_blobs(&s).unwrap();
        let c = s.centers();
        let spread = d
            .features
            .iter()
            .zip(&d.labels)
            .map(|(f, &l)| crate::geometry::dist(f, &c[l]))
            .fold(0.0, f64::max);
        assert!(crate::geometry::dist(&c[0], &c[1]) > 2.0 * spread);
    }

    #[test]
    fn splits_share_centers() {
        let (train, test) = make_blob_splits(&spec(), 4).unwrap();
        assert_eq!(train, make_blobs(&spec()).unwrap());
        assert_eq!(test.len(), 12);
        assert_eq!(test.split, Split::Test);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = make_blobs(&spec()).unwrap();
        save_csv(&d, &path).unwrap();
        assert_eq!(load_csv(&path, Split::Train).unwrap(), d);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "label,f0,f1\n").unwrap();
        assert!(load_csv(&path, Split::Train).is_err());

        fs::write(&path, "label,f0,f1\n0,1.0,2.0\n").unwrap();
        assert_eq!(load_csv(&path, Split::Train).unwrap().len(), 1);

        fs::write(&path, "label,f0,f1\n0,1.0,2.0\n1,abc,2.0\n").unwrap();
        match load_csv(&path, Split::Train) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "label,f0,f1\n0,1.0,2.0\n-1,1.0,2.0\n").unwrap();
        assert!(matches!(
            load_csv(&path, Split::Train),
            Err(Error::Malformed { line: 3, .. })
        ));
    }

    #[test]
    fn idx_round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        let pixels = vec![vec![0, 255, 51, 102], vec![255; 4], vec![0; 4]];
        write_idx(&ip, &lp, 2, 2, &pixels, &[3, 1, 4]).unwrap();
        let d = load_idx(&ip, &lp, None).unwrap();
        assert_eq!(d.labels, vec![3, 1, 4]);
        assert_eq!(d.features[0], vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.features[1], vec![1.0; 4]);
        assert_eq!(load_idx(&ip, &lp, Some(2)).unwrap().len(), 2);
    }

    #[test]
    fn idx_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&ip, &lp, 1, 1, &[vec![1], vec![2]], &[0, 1, 2]).unwrap();
        match load_idx(&ip, &lp, None) {
            Err(Error::BadField { field, .. }) => assert_eq!(field, "count"),
            other => panic!("unexpected {other:?}"),
        }
        // Swapped files: the label file's magic is wrong for images.
        match load_idx(&lp, &ip, None) {
            Err(Error::BadField { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("unexpected {other:?}"),
        }
        let mut bytes = fs::read(&ip).unwrap();
        bytes.pop();
        fs::write(&ip, bytes).unwrap();
        match load_idx(&ip, &lp, None) {
            Err(Error::BadField { field, .. }) => assert_eq!(field, "data"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
